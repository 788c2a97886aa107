use super::{Result, Tensor};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences. Returns the maximum over all coordinates of every
/// input of `|analytic − numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<f64>
where
    F: Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>,
{
    let params: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.to_vec()))
        .collect::<Result<_>>()?;
    let loss = f(&params)?;
    loss.backward()?;
    let mut worst = 0.0f64;
    for (k, p) in params.iter().enumerate() {
        let analytic = p.grad().unwrap_or_else(|| vec![0.0; p.len()]);
        let base = inputs[k].to_vec();
        for i in 0..base.len() {
            let eval = |delta: f64| -> Result<f64> {
                let probe: Vec<Tensor<f64>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        if j == k {
                            let mut d = base.clone();
                            d[i] += delta;
                            Tensor::from_vec(t.shape(), d)
                        } else {
                            Ok(t.detach())
                        }
                    })
                    .collect::<Result<_>>()?;
                Ok(f(&probe)?.item())
            };
            let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
            let a = analytic[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
