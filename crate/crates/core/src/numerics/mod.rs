//! Differentiable tensor primitives and a finite-difference gradient checker.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var, ZERO_NORM};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op} expects rank {expected}, got rank {found}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("empty input to {0}")]
    EmptyTensor(&'static str),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("non-finite function value at coordinate {0}")]
    NonFiniteValue(usize),
    #[error("finite-difference step must be positive, got {0}")]
    InvalidStep(f64),
}

/// `u.v / (|u||v|)` clamped to `[-1, 1]`; zero when either norm is below
/// [`ZERO_NORM`].
pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64, NumericsError> {
    if u.len() != v.len() {
        return Err(NumericsError::LengthMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    if u.is_empty() {
        return Err(NumericsError::EmptyTensor("cosine_similarity"));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu < ZERO_NORM || nv < ZERO_NORM {
        return Ok(0.0);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// Central-difference gradient estimate of `f` at `theta`.
///
/// Coordinate `j` is `(f(theta + eps e_j) - f(theta - eps e_j)) / (2 eps)`.
pub fn finite_difference_gradient<F>(mut f: F, theta: &[f64], eps: f64) -> Result<Vec<f64>, NumericsError>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(NumericsError::InvalidStep(eps));
    }
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        let orig = point[j];
        point[j] = orig + eps;
        let plus = f(&point);
        point[j] = orig - eps;
        let minus = f(&point);
        point[j] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::NonFiniteValue(j));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Relative error used by the gradient checks: `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest [`relative_error`] over paired entries.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| relative_error(*x, *y))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests;
