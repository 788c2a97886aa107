use super::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn t64(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

#[test]
fn matmul_identity_and_hand_cases() {
    let i = t64(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
    let b = t64(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]);
    assert_eq!(i.matmul(&b).unwrap().to_vec(), vec![5.0, 6.0, 7.0, 8.0]);
    let r = t64(&[1, 2], vec![1.0, 2.0]).matmul(&t64(&[2, 1], vec![3.0, 4.0])).unwrap();
    assert_eq!(r.shape(), &[1, 1]);
    assert_eq!(r.to_vec(), vec![11.0]);
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (a, b) = (rand_vec(&mut rng, 20), rand_vec(&mut rng, 15));
    let c = t64(&[4, 5], a.clone()).matmul(&t64(&[5, 3], b.clone())).unwrap();
    for (x, y) in c.to_vec().iter().zip(naive_matmul(&a, &b, 4, 5, 3)) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let err = t64(&[2, 3], vec![0.0; 6]).matmul(&t64(&[2, 3], vec![0.0; 6])).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, TensorError::ShapeMismatch { .. }));
}

#[test]
fn matmul_batch_broadcast_of_shared_matrix() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_vec(&mut rng, 2 * 3 * 4);
    let w = rand_vec(&mut rng, 4 * 2);
    let c = t64(&[2, 3, 4], a.clone()).matmul(&t64(&[4, 2], w.clone())).unwrap();
    assert_eq!(c.shape(), &[2, 3, 2]);
    let expect: Vec<f64> = (0..2).flat_map(|b| naive_matmul(&a[b * 12..(b + 1) * 12], &w, 3, 4, 2)).collect();
    assert_eq!(c.to_vec(), expect);
    assert!(t64(&[2, 3, 4], a).matmul(&t64(&[3, 4, 2], vec![0.0; 24])).is_err());
}

#[test]
fn matmul_parallel_rows_are_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = t64(&[64, 48], rand_vec(&mut rng, 64 * 48));
    let b = t64(&[48, 40], rand_vec(&mut rng, 48 * 40));
    let seq = a.matmul(&b).unwrap().to_vec();
    set_kernel_threads(4);
    let par = a.matmul(&b).unwrap().to_vec();
    set_kernel_threads(1);
    assert_eq!(seq.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), par.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn softmax_examples() {
    let y = t64(&[4], vec![0.0; 4]).softmax(0).unwrap();
    assert_eq!(y.to_vec(), vec![0.25; 4]);
    let y = t64(&[2], vec![1000.0, 0.0]).softmax(0).unwrap().to_vec();
    assert!((y[0] - 1.0).abs() < 1e-12 && y[1].abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = rand_vec(&mut rng, 7);
    let denom: f64 = x.iter().map(|v| v.exp()).sum();
    for (got, v) in t64(&[7], x.clone()).softmax(0).unwrap().to_vec().iter().zip(&x) {
        assert!((got - v.exp() / denom).abs() < 1e-9);
    }
    assert!(t64(&[7], x).softmax(1).is_err());
}

#[test]
fn softmax_along_inner_axis() {
    let x = t64(&[2, 3], vec![1.0, 2.0, 3.0, 1.0, 1.0, 1.0]);
    let y = x.softmax(0).unwrap().to_vec();
    // columns: (1,1), (2,1), (3,1)
    assert!((y[0] - 0.5).abs() < 1e-12);
    let e = 1f64.exp();
    assert!((y[1] - e / (e + 1.0)).abs() < 1e-12);
    assert!((y[1] + y[4] - 1.0).abs() < 1e-12);
}

#[test]
fn layer_norm_examples() {
    let one = t64(&[4], vec![1.0; 4]);
    let zero = t64(&[4], vec![0.0; 4]);
    let y = t64(&[4], vec![3.0; 4]).layer_norm(&one, &zero, 1e-5).unwrap();
    assert!(y.to_vec().iter().all(|v| *v == 0.0));
    let y = t64(&[2], vec![1.0, 3.0])
        .layer_norm(&t64(&[2], vec![1.0; 2]), &t64(&[2], vec![0.0; 2]), 1e-5)
        .unwrap()
        .to_vec();
    assert!((y[0] + 1.0).abs() < 1e-3 && (y[1] - 1.0).abs() < 1e-3);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_vec(&mut rng, 24);
    let g = rand_vec(&mut rng, 8);
    let b = rand_vec(&mut rng, 8);
    let y = t64(&[3, 8], x.clone()).layer_norm(&t64(&[8], g.clone()), &t64(&[8], b.clone()), 1e-5).unwrap();
    for r in 0..3 {
        let row = &x[r * 8..(r + 1) * 8];
        let mean = row.iter().sum::<f64>() / 8.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        for j in 0..8 {
            let expect = (row[j] - mean) / (var + 1e-5).sqrt() * g[j] + b[j];
            assert!((y.to_vec()[r * 8 + j] - expect).abs() < 1e-6);
        }
    }
    assert!(t64(&[3, 8], x).layer_norm(&t64(&[4], vec![1.0; 4]), &t64(&[8], b), 1e-5).is_err());
}

#[test]
fn gelu_transpose_linear() {
    assert_eq!(t64(&[1], vec![0.0]).gelu().to_vec(), vec![0.0]);
    // tanh-approximation formula evaluated directly
    let x = 0.7f64;
    let expect = 0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh());
    assert!((t64(&[1], vec![x]).gelu().item() - expect).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let data = rand_vec(&mut rng, 24);
    let t = t64(&[2, 3, 4], data.clone());
    let tt = t.transpose(0, 2).unwrap().transpose(0, 2).unwrap();
    assert_eq!(tt.to_vec(), data);
    assert_eq!(t.transpose(1, 2).unwrap().shape(), &[2, 4, 3]);

    let x = rand_vec(&mut rng, 6 * 4);
    let w = rand_vec(&mut rng, 4 * 5);
    let b = rand_vec(&mut rng, 5);
    let y = t64(&[6, 4], x.clone()).linear(&t64(&[4, 5], w.clone()), Some(&t64(&[5], b.clone()))).unwrap();
    let mm = naive_matmul(&x, &w, 6, 4, 5);
    for (i, v) in y.to_vec().iter().enumerate() {
        assert!((v - (mm[i] + b[i % 5])).abs() < 1e-6);
    }
}

#[test]
fn structural_ops() {
    let a = t64(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]);
    let b = t64(&[2, 1], vec![5.0, 6.0]);
    let c = Tensor::concat(&[a.clone(), b], 1).unwrap();
    assert_eq!(c.to_vec(), vec![1.0, 2.0, 5.0, 3.0, 4.0, 6.0]);
    assert_eq!(c.slice(1, 0, 2).unwrap().to_vec(), a.to_vec());
    assert_eq!(c.slice(1, 2, 3).unwrap().to_vec(), vec![5.0, 6.0]);
    assert_eq!(a.index_select(0, &[1, 1, 0]).unwrap().to_vec(), vec![3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
    assert_eq!(a.mean_axis(0).unwrap().to_vec(), vec![2.0, 3.0]);
    assert_eq!(a.mean_axis(1).unwrap().to_vec(), vec![1.5, 3.5]);
    let bl = t64(&[2], vec![7.0, 8.0]).broadcast_leading(&[2, 1]).unwrap();
    assert_eq!(bl.shape(), &[2, 1, 2]);
    assert_eq!(bl.to_vec(), vec![7.0, 8.0, 7.0, 8.0]);
    assert!(a.reshape(&[3]).is_err());
    assert!(a.slice(0, 1, 1).is_err());
    assert!(a.index_select(0, &[2]).is_err());
    assert!(a.add(&t64(&[3], vec![0.0; 3])).is_err());
    assert!(a.add(&t64(&[2, 2, 2], vec![0.0; 8])).is_err());
}

#[test]
fn backward_examples() {
    let x = Tensor::<f64>::param(&[2, 3], vec![0.5; 6]).unwrap();
    x.sum_all().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![1.0; 6]);

    let x = Tensor::<f64>::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
    x.mul(&x).unwrap().sum_all().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);

    // no implicit reset: second call accumulates
    x.mul(&x).unwrap().sum_all().backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![4.0, 8.0, 12.0]);
    x.zero_grad();
    assert!(x.grad().is_none());

    let nonscalar = x.scale(2.0);
    assert!(matches!(nonscalar.backward(), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn frozen_leaf_never_accumulates() {
    let w = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
    let x = Tensor::<f64>::param(&[2], vec![3.0, 4.0]).unwrap();
    x.mul(&w).unwrap().sum_all().backward().unwrap();
    assert!(w.grad().is_none());
    assert_eq!(x.grad().unwrap(), vec![1.0, 2.0]);
}

#[test]
fn two_path_gradient_is_sum_of_paths() {
    // y = softmax(x) feeds both sum(y*y) and sum(3*y); compare with the
    // manually composed derivative of each path.
    let xs = vec![0.3, -0.2, 0.9];
    let x = Tensor::<f64>::param(&[3], xs.clone()).unwrap();
    let y = x.softmax(0).unwrap();
    let loss = y.mul(&y).unwrap().sum_all().add(&y.scale(3.0).sum_all()).unwrap();
    loss.backward().unwrap();
    let yv = y.to_vec();
    let jac = |i: usize, j: usize| yv[i] * (if i == j { 1.0 } else { 0.0 } - yv[j]);
    for j in 0..3 {
        let path1: f64 = (0..3).map(|i| 2.0 * yv[i] * jac(i, j)).sum();
        let path2: f64 = (0..3).map(|i| 3.0 * jac(i, j)).sum();
        assert!((x.grad().unwrap()[j] - (path1 + path2)).abs() < 1e-12);
    }
}

#[test]
fn grad_check_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = t64(&[3, 4], rand_vec(&mut rng, 12));
    let err = grad_check(|p| Ok(p[0].sum_all()), &[x], 1e-5).unwrap();
    assert!(err < 1e-10, "{err}");
    let x = t64(&[5], rand_vec(&mut rng, 5));
    let err = grad_check(
        |p| {
            let s = p[0].softmax(0)?;
            Ok(s.mul(&s)?.sum_all())
        },
        &[x],
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

/// Every primitive on ten random shapes.
#[test]
fn every_primitive_passes_grad_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..10 {
        let b = 1 + trial % 3;
        let m = 2 + trial % 4;
        let k = 1 + (trial * 7) % 5;
        let n = 2 + (trial * 3) % 4;
        let a = t64(&[b, m, k], rand_vec(&mut rng, b * m * k));
        let w = t64(&[k, n], rand_vec(&mut rng, k * n));
        let bias = t64(&[n], rand_vec(&mut rng, n));
        let sq = t64(&[b, m, k], rand_vec(&mut rng, b * m * k));
        let weights = t64(&[b, m, k], rand_vec(&mut rng, b * m * k));
        // weighted sum so that gradients are not uniform
        let wsum = |t: Tensor<f64>, wt: &Tensor<f64>| -> Result<Tensor<f64>> { Ok(t.mul(wt)?.sum_all()) };
        let check = |name: &str, err: f64| assert!(err < 1e-4, "{name} trial {trial}: {err}");

        let wm = t64(&[b, m, n], rand_vec(&mut rng, b * m * n));
        check("matmul", grad_check(|p| wsum(p[0].matmul(&p[1])?, &wm), &[a.clone(), w.clone()], 1e-5).unwrap());
        check("linear", grad_check(|p| wsum(p[0].linear(&p[1], Some(&p[2]))?, &wm), &[a.clone(), w.clone(), bias.clone()], 1e-5).unwrap());
        let bw = t64(&[b, n, k], rand_vec(&mut rng, b * n * k));
        check("bmm", grad_check(|p| wsum(p[0].matmul(&p[1].transpose(1, 2)?)?, &t64(&[b, m, n], wm.to_vec())), &[a.clone(), bw.clone()], 1e-5).unwrap());
        check("add", grad_check(|p| wsum(p[0].add(&p[1])?, &weights), &[a.clone(), sq.clone()], 1e-5).unwrap());
        let kb = t64(&[k], rand_vec(&mut rng, k));
        check("add_bcast", grad_check(|p| wsum(p[0].add(&p[1])?, &weights), &[a.clone(), kb.clone()], 1e-5).unwrap());
        check("sub", grad_check(|p| wsum(p[0].sub(&p[1])?, &weights), &[a.clone(), kb.clone()], 1e-5).unwrap());
        check("mul", grad_check(|p| wsum(p[0].mul(&p[1])?, &weights), &[a.clone(), kb.clone()], 1e-5).unwrap());
        check("scale", grad_check(|p| wsum(p[0].scale(-1.7), &weights), &[a.clone()], 1e-5).unwrap());
        check("gelu", grad_check(|p| wsum(p[0].scale(2.0).gelu(), &weights), &[a.clone()], 1e-5).unwrap());
        for axis in 0..3 {
            check("softmax", grad_check(|p| wsum(p[0].softmax(axis)?, &weights), &[a.clone()], 1e-5).unwrap());
        }
        let g = t64(&[k], rand_vec(&mut rng, k));
        let kk = t64(&[b, m, k], rand_vec(&mut rng, b * m * k));
        if k > 1 {
            check(
                "layer_norm",
                grad_check(|p| wsum(p[0].layer_norm(&p[1], &p[2], 1e-5)?, &kk), &[a.clone(), g.clone(), kb.clone()], 1e-5).unwrap(),
            );
        }
        let wr = t64(&[m * k, b], rand_vec(&mut rng, b * m * k));
        check("reshape", grad_check(|p| wsum(p[0].reshape(&[m * k, b])?, &wr), &[a.clone()], 1e-5).unwrap());
        let wp = t64(&[k, b, m], rand_vec(&mut rng, b * m * k));
        check("permute", grad_check(|p| wsum(p[0].permute(&[2, 0, 1])?, &wp), &[a.clone()], 1e-5).unwrap());
        let wc = t64(&[b, 2 * m, k], rand_vec(&mut rng, 2 * b * m * k));
        check("concat", grad_check(|p| wsum(Tensor::concat(&[p[0].clone(), p[1].clone()], 1)?, &wc), &[a.clone(), sq.clone()], 1e-5).unwrap());
        let ws = t64(&[b, m - 1, k], rand_vec(&mut rng, b * (m - 1) * k));
        check("slice", grad_check(|p| wsum(p[0].slice(1, 1, m)?, &ws), &[a.clone()], 1e-5).unwrap());
        let wi = t64(&[b, 3, k], rand_vec(&mut rng, b * 3 * k));
        check("index_select", grad_check(|p| wsum(p[0].index_select(1, &[m - 1, 0, m - 1])?, &wi), &[a.clone()], 1e-5).unwrap());
        let table = t64(&[m, k], rand_vec(&mut rng, m * k));
        let we = t64(&[2, k], rand_vec(&mut rng, 2 * k));
        check("embedding", grad_check(|p| wsum(p[0].embedding_lookup(&[1, 1])?, &we), &[table], 1e-5).unwrap());
        let wbl = t64(&[2, b, m, k], rand_vec(&mut rng, 2 * b * m * k));
        check("broadcast", grad_check(|p| wsum(p[0].broadcast_leading(&[2])?, &wbl), &[a.clone()], 1e-5).unwrap());
        let wmean = t64(&[b, k], rand_vec(&mut rng, b * k));
        check("mean_axis", grad_check(|p| wsum(p[0].mean_axis(1)?, &wmean), &[a.clone()], 1e-5).unwrap());
        check("mean_all", grad_check(|p| Ok(p[0].mul(&p[0])?.mean_all()), &[a.clone()], 1e-5).unwrap());
    }
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(xs in proptest::collection::vec(-1000.0f64..1000.0, 1..30)) {
        let n = xs.len();
        let y = t64(&[n], xs).softmax(0).unwrap().to_vec();
        prop_assert!(y.iter().all(|v| *v >= 0.0));
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn softmax_f32_rows_sum_to_one(xs in proptest::collection::vec(-1000.0f32..1000.0, 1..30)) {
        let n = xs.len();
        let y = Tensor::<f32>::from_vec(&[n], xs).unwrap().softmax(0).unwrap().to_vec();
        prop_assert!((y.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matmul_f32_matches_triple_loop(m in 1usize..32, k in 1usize..32, n in 1usize..32, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f32> = (0..m * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..k * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let c = Tensor::from_vec(&[m, k], a.clone()).unwrap().matmul(&Tensor::from_vec(&[k, n], b.clone()).unwrap()).unwrap();
        let a64: Vec<f64> = a.iter().map(|&v| v as f64).collect();
        let b64: Vec<f64> = b.iter().map(|&v| v as f64).collect();
        let oracle = naive_matmul(&a64, &b64, m, k, n);
        for (x, y) in c.to_vec().iter().zip(oracle) {
            prop_assert!((*x as f64 - y).abs() < 1e-5 * (1.0 + k as f64).sqrt());
        }
    }

    #[test]
    fn reshape_permute_slice_roundtrip(d0 in 1usize..5, d1 in 1usize..5, d2 in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = rand_vec(&mut rng, d0 * d1 * d2);
        let t = t64(&[d0, d1, d2], data.clone());
        let p = t.permute(&[1, 2, 0]).unwrap();
        let mut sorted_in = data.clone();
        let mut sorted_out = p.to_vec();
        sorted_in.sort_by(f64::total_cmp);
        sorted_out.sort_by(f64::total_cmp);
        prop_assert_eq!(sorted_in, sorted_out);
        prop_assert_eq!(p.permute(&[2, 0, 1]).unwrap().to_vec(), data.clone());
        prop_assert_eq!(t.reshape(&[d0 * d1 * d2]).unwrap().reshape(&[d0, d1, d2]).unwrap().to_vec(), data.clone());
        let parts: Vec<_> = (0..d1).map(|i| t.slice(1, i, i + 1).unwrap()).collect();
        prop_assert_eq!(Tensor::concat(&parts, 1).unwrap().to_vec(), data);
    }
}
