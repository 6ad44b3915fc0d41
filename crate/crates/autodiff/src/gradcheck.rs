//! Central-difference gradient verification.

use crate::error::{Result, TensorError};
use crate::tensor::{NoGradGuard, Tensor};

/// Max over components of `|analytic - numeric| / max(1, |analytic|)` for a
/// scalar function of one tensor.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    grad_check_many(|xs| f(&xs[0]), std::slice::from_ref(x), h, None)
}

/// Like [`grad_check`] over several inputs at once.
///
/// With `max_coords = Some(n)` only about `n` evenly strided coordinates of
/// each input are probed, which keeps checks of large models affordable.
pub fn grad_check_many<F>(f: F, inputs: &[Tensor], h: f64, max_coords: Option<usize>) -> Result<f64>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves: Vec<Tensor> = inputs.iter().map(Tensor::detach_param).collect();
    let loss = f(&leaves)?;
    check_finite(&loss)?;
    loss.backward()?;

    let mut worst = 0.0f64;
    for (which, leaf) in leaves.iter().enumerate() {
        let analytic = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let step = max_coords.map_or(1, |n| (leaf.numel() / n.max(1)).max(1));
        for idx in (0..leaf.numel()).step_by(step) {
            let probe = |delta: f64| -> Result<f64> {
                let _guard = NoGradGuard::new();
                let mut data = leaf.to_vec();
                data[idx] += delta;
                let moved = Tensor::new(data, leaf.shape())?;
                let args: Vec<Tensor> = leaves
                    .iter()
                    .enumerate()
                    .map(|(j, t)| if j == which { moved.clone() } else { t.detach() })
                    .collect();
                let out = f(&args)?;
                check_finite(&out)?;
                Ok(out.item())
            };
            let numeric = (probe(h)? - probe(-h)?) / (2.0 * h);
            let a = analytic[idx];
            if !a.is_finite() {
                return Err(TensorError::NonFinite { index: idx });
            }
            worst = worst.max((a - numeric).abs() / a.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn check_finite(t: &Tensor) -> Result<()> {
    match t.data().iter().position(|v| !v.is_finite()) {
        Some(index) => Err(TensorError::NonFinite { index }),
        None => Ok(()),
    }
}
