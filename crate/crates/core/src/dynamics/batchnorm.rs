//! Simplified batch-normalization core `X̂ = X/σ_B` (no centering, no learned
//! affine parameters) and the gradient map induced by its Jacobian.

use alloc::format;

#[allow(unused_imports)] // only needed when std is absent from the build
use num_traits::Float;

use crate::{Error, Matrix, Result};

/// Applies `∂X̂/∂X = (σ_B² + ε)^{-1/2} [I − (1/N) X̂X̂ᵀ]` column by column.
///
/// `x` holds one unit per column and one batch entry per row (`N × D`);
/// `σ_B² = (1/N) Σ_n X_n²` per column, so `(1/N) X̂X̂ᵀ` is the orthogonal
/// projector onto that column and the bracket is the tangent projector `S`.
pub fn field_batch_norm_core(x: &Matrix, upstream: &Matrix, eps: f64) -> Result<Matrix> {
    if x.shape() != upstream.shape() {
        return Err(Error::Shape(format!(
            "activations are {:?}, upstream gradient is {:?}",
            x.shape(),
            upstream.shape()
        )));
    }
    if !(eps >= 0.0) {
        return Err(Error::Domain(format!("epsilon {eps} must be non-negative")));
    }
    let n = x.nrows() as f64;
    let mut out = upstream.clone();
    for j in 0..x.ncols() {
        let col = x.column(j);
        let sigma = (col.norm_squared() / n).sqrt();
        if sigma < 1e-12 {
            return Err(Error::DegenerateBatch(sigma));
        }
        let xhat = col / sigma;
        let up = upstream.column(j);
        let projected = up - &xhat * (xhat.dot(&up) / n);
        out.set_column(j, &(projected / (sigma * sigma + eps).sqrt()));
    }
    Ok(out)
}

/// Batch standard deviation `σ_B` of one column, `sqrt((1/N) Σ X_n²)`.
pub fn batch_scale(col: &[f64]) -> f64 {
    (col.iter().map(|v| v * v).sum::<f64>() / col.len() as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_batch() {
        let x = Matrix::zeros(3, 1);
        assert!(matches!(
            field_batch_norm_core(&x, &x, 1e-5),
            Err(Error::DegenerateBatch(_))
        ));
    }

    #[test]
    fn output_orthogonal_to_normalized_activations() {
        let x = Matrix::from_row_slice(4, 2, &[1.0, 0.2, -2.0, 0.5, 0.3, -1.0, 0.7, 0.9]);
        let up = Matrix::from_row_slice(4, 2, &[0.3, -1.0, 2.0, 0.1, -0.5, 0.4, 1.1, 0.8]);
        let out = field_batch_norm_core(&x, &up, 1e-5).unwrap();
        for j in 0..2 {
            let xhat = x.column(j) / batch_scale(x.column(j).as_slice());
            assert!(xhat.dot(&out.column(j)).abs() < 1e-12);
        }
    }
}
