use std::cell::Cell;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use super::{numel, Result, Scalar, Tensor, TensorError};

thread_local! {
    static MATMUL_MACS: Cell<u64> = const { Cell::new(0) };
}

static KERNEL_THREADS: AtomicUsize = AtomicUsize::new(1);

/// Forward multiply-adds performed by `matmul` on this thread since the last reset.
pub fn matmul_macs() -> u64 {
    MATMUL_MACS.with(|c| c.get())
}

pub fn reset_matmul_macs() {
    MATMUL_MACS.with(|c| c.set(0));
}

/// Number of threads matmul may split output rows across. Each output
/// element is computed by the same sequential loop regardless, so results
/// do not depend on this setting.
pub fn set_kernel_threads(n: usize) {
    let n = n.max(1);
    if n > 1 {
        // Fails harmlessly if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    KERNEL_THREADS.store(n, Ordering::Relaxed);
}

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        return Err(TensorError::AxisOutOfRange { op, axis, rank });
    }
    Ok(())
}

/// (outer, extent, inner) decomposition of a shape around one axis.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (numel(&shape[..axis]), shape[axis], numel(&shape[axis + 1..]))
}

/// `small` must equal `big` or be a trailing suffix of it.
fn suffix_broadcast(op: &'static str, big: &[usize], small: &[usize]) -> Result<usize> {
    if small.len() <= big.len() && big[big.len() - small.len()..] == *small {
        Ok(numel(small))
    } else {
        Err(TensorError::ShapeMismatch {
            op,
            lhs: big.to_vec(),
            rhs: small.to_vec(),
        })
    }
}

fn reduce_leading<T: Scalar>(g: &[T], block: usize) -> Vec<T> {
    let mut out = vec![T::zero(); block];
    for chunk in g.chunks(block) {
        for (o, &v) in out.iter_mut().zip(chunk) {
            *o += v;
        }
    }
    out
}

/// c[m×n] = a[m×k] · b[k×n]
fn gemm<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    let row = |(i, crow): (usize, &mut [T])| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    };
    if KERNEL_THREADS.load(Ordering::Relaxed) > 1 && m * k * n >= 1 << 16 {
        c.par_chunks_mut(n).enumerate().for_each(row);
    } else {
        c.chunks_mut(n).enumerate().for_each(row);
    }
}

fn transpose2<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// Batched `a · b` over flat buffers; `a_batched`/`b_batched` say whether
/// each operand carries a batch of matrices or a single shared one.
#[allow(clippy::too_many_arguments)]
fn batched_gemm<T: Scalar>(
    a: &[T],
    b: &[T],
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
) -> Vec<T> {
    let mut c = vec![T::zero(); batch * m * n];
    for bi in 0..batch {
        let ao = if a_batched { bi * m * k } else { 0 };
        let bo = if b_batched { bi * k * n } else { 0 };
        gemm(&a[ao..ao + m * k], &b[bo..bo + k * n], &mut c[bi * m * n..(bi + 1) * m * n], m, k, n);
    }
    c
}

fn batched_transpose<T: Scalar>(a: &[T], batch: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(a.len());
    for bi in 0..batch {
        out.extend(transpose2(&a[bi * rows * cols..(bi + 1) * rows * cols], rows, cols));
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// Tanh-approximated GELU on a plain value.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let k = T::from_f64(GELU_K);
    let half = T::from_f64(0.5);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64(3.0) * k * x * x)
}

impl<T: Scalar> Tensor<T> {
    fn binary_suffix(
        &self,
        other: &Tensor<T>,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Vec<T>, usize)> {
        let block = suffix_broadcast(op, self.shape(), other.shape())?;
        let a = self.data();
        let b = other.data();
        let out = a
            .chunks(block)
            .flat_map(|chunk| chunk.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)))
            .collect();
        Ok((out, block))
    }

    /// Elementwise sum; `other` may omit leading axes and is broadcast over them.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, block) = self.binary_suffix(other, "add", |x, y| x + y)?;
        let same = block == self.len();
        Ok(Tensor::from_op(
            "add",
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let gb = if same { g.to_vec() } else { reduce_leading(g, block) };
                vec![Some(g.to_vec()), Some(gb)]
            }),
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, block) = self.binary_suffix(other, "sub", |x, y| x - y)?;
        Ok(Tensor::from_op(
            "sub",
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let gb: Vec<T> = reduce_leading(g, block).into_iter().map(|v| -v).collect();
                vec![Some(g.to_vec()), Some(gb)]
            }),
        ))
    }

    /// Elementwise product with the same broadcasting rule as [`Tensor::add`].
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (out, block) = self.binary_suffix(other, "mul", |x, y| x * y)?;
        let a = self.clone();
        let b = other.clone();
        Ok(Tensor::from_op(
            "mul",
            self.shape().to_vec(),
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                let ad = a.data();
                let bd = b.data();
                let ga = a.requires_grad().then(|| {
                    g.chunks(block)
                        .flat_map(|gc| gc.iter().zip(bd.iter()).map(|(&gv, &bv)| gv * bv))
                        .collect()
                });
                let gb = b.requires_grad().then(|| {
                    let prod: Vec<T> = g.iter().zip(ad.iter()).map(|(&gv, &av)| gv * av).collect();
                    reduce_leading(&prod, block)
                });
                vec![ga, gb]
            }),
        ))
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        let out = self.data().iter().map(|&v| v * s).collect();
        Tensor::from_op(
            "scale",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| vec![Some(g.iter().map(|&v| v * s).collect())]),
        )
    }

    /// Matrix product over the last two axes. Leading batch axes must match,
    /// or one operand must be a plain matrix shared across the batch.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: sa.to_vec(),
            rhs: sb.to_vec(),
        };
        if sa.len() < 2 || sb.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let ba = &sa[..sa.len() - 2];
        let bb = &sb[..sb.len() - 2];
        let batch_shape = if ba == bb || bb.is_empty() {
            ba.to_vec()
        } else if ba.is_empty() {
            bb.to_vec()
        } else {
            return Err(mismatch());
        };
        let batch = numel(&batch_shape);
        let (a_batched, b_batched) = (!ba.is_empty(), !bb.is_empty());
        let out = batched_gemm(&self.data(), &other.data(), batch, a_batched, b_batched, m, k, n);
        MATMUL_MACS.with(|c| c.set(c.get() + (batch * m * k * n) as u64));
        let mut shape = batch_shape;
        shape.extend([m, n]);
        let a = self.clone();
        let b = other.clone();
        Ok(Tensor::from_op(
            "matmul",
            shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |g| {
                // dA = dC · Bᵀ, dB = Aᵀ · dC
                let ga = a.requires_grad().then(|| {
                    let bt = batched_transpose(&b.data(), if b_batched { batch } else { 1 }, k, n);
                    let full = batched_gemm(g, &bt, batch, true, b_batched, m, n, k);
                    if a_batched { full } else { reduce_leading(&full, m * k) }
                });
                let gb = b.requires_grad().then(|| {
                    let at = batched_transpose(&a.data(), if a_batched { batch } else { 1 }, m, k);
                    let full = batched_gemm(&at, g, batch, a_batched, true, k, m, n);
                    if b_batched { full } else { reduce_leading(&full, k * n) }
                });
                vec![ga, gb]
            }),
        ))
    }

    /// `x · w + b` with `w: [in, out]` and `b: [out]`.
    pub fn linear(&self, weight: &Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let y = self.matmul(weight)?;
        match bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    pub fn gelu(&self) -> Tensor<T> {
        let out = self.data().iter().map(|&v| gelu_scalar(v)).collect();
        let x = self.clone();
        Tensor::from_op(
            "gelu",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let xd = x.data();
                vec![Some(g.iter().zip(xd.iter()).map(|(&gv, &xv)| gv * gelu_grad_scalar(xv)).collect())]
            }),
        )
    }

    /// Numerically stable softmax along `axis` (the axis maximum is
    /// subtracted before exponentiation).
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("softmax", axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = x[base];
                for j in 1..len {
                    max = max.max(x[base + j * inner]);
                }
                let mut sum = T::zero();
                for j in 0..len {
                    let e = (x[base + j * inner] - max).exp();
                    y[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    y[base + j * inner] = y[base + j * inner] / sum;
                }
            }
        }
        let yc = y.clone();
        Ok(Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            y,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = T::zero();
                        for j in 0..len {
                            dot += g[base + j * inner] * yc[base + j * inner];
                        }
                        for j in 0..len {
                            let idx = base + j * inner;
                            dx[idx] = yc[idx] * (g[idx] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Layer normalization over the last axis followed by a per-channel affine map.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
        let d = *self.shape().last().ok_or(TensorError::Invalid {
            op: "layer_norm",
            msg: "scalar input".into(),
        })?;
        for p in [gain, bias] {
            if p.shape() != [d] {
                return Err(TensorError::ShapeMismatch {
                    op: "layer_norm",
                    lhs: self.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let x = self.data();
        let gd = gain.data();
        let bd = bias.data();
        let rows = x.len() / d;
        let dn = T::from_f64(d as f64);
        let mut xhat = vec![T::zero(); x.len()];
        let mut rstd = vec![T::zero(); rows];
        let mut y = vec![T::zero(); x.len()];
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / dn;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..d {
                let h = (row[j] - mean) * rs;
                xhat[r * d + j] = h;
                y[r * d + j] = h * gd[j] + bd[j];
            }
        }
        let (gain_t, bias_t) = (gain.clone(), bias.clone());
        let input = self.clone();
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            y,
            vec![self.clone(), gain.clone(), bias.clone()],
            Box::new(move |g| {
                let gd = gain_t.data();
                let gx = input.requires_grad().then(|| {
                    let mut dx = vec![T::zero(); g.len()];
                    for r in 0..rows {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for j in 0..d {
                            let dh = g[r * d + j] * gd[j];
                            s1 += dh;
                            s2 += dh * xhat[r * d + j];
                        }
                        for j in 0..d {
                            let dh = g[r * d + j] * gd[j];
                            dx[r * d + j] = rstd[r] * (dh - (s1 + xhat[r * d + j] * s2) / dn);
                        }
                    }
                    dx
                });
                let ggain = gain_t.requires_grad().then(|| {
                    let prod: Vec<T> = g.iter().zip(&xhat).map(|(&a, &b)| a * b).collect();
                    reduce_leading(&prod, d)
                });
                let gbias = bias_t.requires_grad().then(|| reduce_leading(g, d));
                vec![gx, ggain, gbias]
            }),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.len() || shape.iter().any(|&d| d == 0) {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g| vec![Some(g.to_vec())]),
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(TensorError::Invalid {
                op: "permute",
                msg: format!("{axes:?} is not a permutation of {rank} axes"),
            });
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let map = permute_index_map(&in_shape, axes);
        let x = self.data();
        let out: Vec<T> = map.iter().map(|&src| x[src]).collect();
        Ok(Tensor::from_op(
            "permute",
            out_shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); g.len()];
                for (dst, &src) in map.iter().enumerate() {
                    dx[src] = g[dst];
                }
                vec![Some(dx)]
            }),
        ))
    }

    pub fn transpose(&self, a0: usize, a1: usize) -> Result<Tensor<T>> {
        check_axis("transpose", a0.max(a1), self.rank())?;
        let mut axes: Vec<usize> = (0..self.rank()).collect();
        axes.swap(a0, a1);
        self.permute(&axes)
    }

    pub fn concat(parts: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = parts.first().ok_or(TensorError::Invalid {
            op: "concat",
            msg: "no inputs".into(),
        })?;
        check_axis("concat", axis, first.rank())?;
        for p in parts {
            let ok = p.rank() == first.rank()
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let lens: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
        let total: usize = lens.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        let datas: Vec<_> = parts.iter().map(|p| p.data()).collect();
        for o in 0..outer {
            for (d, &l) in datas.iter().zip(&lens) {
                out.extend_from_slice(&d[o * l * inner..(o + 1) * l * inner]);
            }
        }
        drop(datas);
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(
            "concat",
            shape,
            out,
            parts.to_vec(),
            Box::new(move |g| {
                let mut grads: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(outer * l * inner)).collect();
                let mut pos = 0;
                for _ in 0..outer {
                    for (gr, &l) in grads.iter_mut().zip(&lens) {
                        gr.extend_from_slice(&g[pos..pos + l * inner]);
                        pos += l * inner;
                    }
                }
                grads.into_iter().map(Some).collect()
            }),
        ))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor<T>> {
        check_axis("slice", axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        if start >= end || end > len {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("range {start}..{end} invalid for extent {len}"),
            });
        }
        let width = (end - start) * inner;
        let x = self.data();
        let mut out = Vec::with_capacity(outer * width);
        for o in 0..outer {
            let base = o * len * inner + start * inner;
            out.extend_from_slice(&x[base..base + width]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = end - start;
        let total = self.len();
        Ok(Tensor::from_op(
            "slice",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); total];
                for o in 0..outer {
                    let base = o * len * inner + start * inner;
                    dx[base..base + width].copy_from_slice(&g[o * width..(o + 1) * width]);
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Gathers entries along `axis`; indices may repeat (gradients add).
    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor<T>> {
        check_axis("index_select", axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        if indices.is_empty() {
            return Err(TensorError::Invalid {
                op: "index_select",
                msg: "empty index list".into(),
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= len) {
            return Err(TensorError::Invalid {
                op: "index_select",
                msg: format!("index {bad} out of range for extent {len}"),
            });
        }
        let x = self.data();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let base = (o * len + i) * inner;
                out.extend_from_slice(&x[base..base + inner]);
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = indices.len();
        let idx = indices.to_vec();
        let total = self.len();
        Ok(Tensor::from_op(
            "index_select",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); total];
                let mut pos = 0;
                for o in 0..outer {
                    for &i in &idx {
                        let base = (o * len + i) * inner;
                        for (d, &v) in dx[base..base + inner].iter_mut().zip(&g[pos..pos + inner]) {
                            *d += v;
                        }
                        pos += inner;
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    /// Rows of a `[vocab, dim]` table.
    pub fn embedding_lookup(&self, ids: &[usize]) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(TensorError::Invalid {
                op: "embedding_lookup",
                msg: format!("table must be rank 2, got {:?}", self.shape()),
            });
        }
        self.index_select(0, ids)
    }

    /// Repeats the tensor over new leading axes: `[s..] -> [lead.., s..]`.
    pub fn broadcast_leading(&self, lead: &[usize]) -> Result<Tensor<T>> {
        let reps = numel(lead);
        if reps == 0 {
            return Err(TensorError::Invalid {
                op: "broadcast_leading",
                msg: format!("zero extent in {lead:?}"),
            });
        }
        let x = self.data();
        let mut out = Vec::with_capacity(reps * x.len());
        for _ in 0..reps {
            out.extend_from_slice(&x);
        }
        let mut shape = lead.to_vec();
        shape.extend_from_slice(self.shape());
        let block = self.len();
        Ok(Tensor::from_op(
            "broadcast_leading",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| vec![Some(reduce_leading(g, block))]),
        ))
    }

    /// Mean along `axis`, which is removed from the shape.
    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis("mean_axis", axis, self.rank())?;
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.data();
        let inv = T::one() / T::from_f64(len as f64);
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..len {
                for i in 0..inner {
                    out[o * inner + i] += x[(o * len + j) * inner + i];
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        let mut shape = self.shape().to_vec();
        shape.remove(axis);
        Ok(Tensor::from_op(
            "mean_axis",
            shape,
            out,
            vec![self.clone()],
            Box::new(move |g| {
                let mut dx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for j in 0..len {
                        for i in 0..inner {
                            dx[(o * len + j) * inner + i] = g[o * inner + i] * inv;
                        }
                    }
                }
                vec![Some(dx)]
            }),
        ))
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s = self.data().iter().copied().sum();
        let n = self.len();
        Tensor::from_op(
            "sum_all",
            vec![],
            vec![s],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0]; n])]),
        )
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.len();
        let inv = T::one() / T::from_f64(n as f64);
        let s: T = self.data().iter().copied().sum();
        Tensor::from_op(
            "mean_all",
            vec![],
            vec![s * inv],
            vec![self.clone()],
            Box::new(move |g| vec![Some(vec![g[0] * inv; n])]),
        )
    }
}

/// For each output position of a permutation, the flat source index.
fn permute_index_map(in_shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let rank = in_shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let total = numel(in_shape);
    let mut map = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..total {
        map.push(src);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            src += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            src -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    map
}
