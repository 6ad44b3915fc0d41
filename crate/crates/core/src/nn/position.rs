use crate::error::{Error, Result};
use mutabnet_autodiff::Tensor;

/// Sinusoidal encoding of index `n` over `d` channels, laid out as
/// `[sin θ0, cos θ0, sin θ1, cos θ1, ...]` with `θk = n / 10000^(2k/d)`.
pub fn positional_encoding(n: f64, d: usize) -> Result<Vec<f64>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!("positional encoding needs an even channel count, got {d}")));
    }
    let mut out = Vec::with_capacity(d);
    for k in 0..d / 2 {
        let theta = n / 10000f64.powf(2.0 * k as f64 / d as f64);
        out.push(theta.sin());
        out.push(theta.cos());
    }
    Ok(out)
}

/// `[p(i); p(j)]` with each half over `d/2` channels. Indices are used raw,
/// without normalizing by the feature-map height or width.
pub fn positional_encoding_2d(i: usize, j: usize, d: usize) -> Result<Vec<f64>> {
    if d == 0 || d % 4 != 0 {
        return Err(Error::Config(format!("2-D positional encoding needs channels divisible by 4, got {d}")));
    }
    let mut out = positional_encoding(i as f64, d / 2)?;
    out.extend(positional_encoding(j as f64, d / 2)?);
    Ok(out)
}

/// `[len, d]` table whose row `n` is `positional_encoding(n, d)`.
pub fn sequence_encoding(len: usize, d: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(len * d);
    for n in 0..len {
        data.extend(positional_encoding(n as f64, d)?);
    }
    Ok(Tensor::new(data, &[len, d])?)
}

/// `[h*w, d]` table in row-major pixel order.
pub fn grid_encoding(h: usize, w: usize, d: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(h * w * d);
    for i in 0..h {
        for j in 0..w {
            data.extend(positional_encoding_2d(i, j, d)?);
        }
    }
    Ok(Tensor::new(data, &[h * w, d])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_index_alternates_zero_one() {
        let p = positional_encoding(0.0, 6).unwrap();
        assert_eq!(p, vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn index_one_with_four_channels() {
        let p = positional_encoding(1.0, 4).unwrap();
        let want = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn odd_channels_rejected() {
        assert!(matches!(positional_encoding(3.0, 5), Err(Error::Config(_))));
        assert!(matches!(positional_encoding_2d(1, 1, 6), Err(Error::Config(_))));
    }

    #[test]
    fn grid_rows_follow_row_major_order() {
        let g = grid_encoding(2, 3, 8).unwrap();
        assert_eq!(g.row(5), positional_encoding_2d(1, 2, 8).unwrap().as_slice());
    }
}
