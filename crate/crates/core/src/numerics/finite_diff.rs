//! Central finite-difference gradients, used as the independent oracle for
//! every hand-derived backward pass in this crate.

use super::{Matrix, Vector};
use crate::error::{Error, Result};

/// Default perturbation step.
pub const FD_STEP: f64 = 1e-5;

/// Gradient of a scalar function of a matrix by central differences:
/// `(f(x + h e) - f(x - h e)) / 2h` entry by entry.
pub fn finite_diff_grad<F>(mut f: F, x: &Matrix, h: f64) -> Result<Matrix>
where
    F: FnMut(&Matrix) -> Result<f64>,
{
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for i in 0..x.rows() {
        for j in 0..x.cols() {
            let orig = probe.get(i, j);
            probe.set(i, j, orig + h);
            let plus = f(&probe)?;
            probe.set(i, j, orig - h);
            let minus = f(&probe)?;
            probe.set(i, j, orig);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::NonFiniteEval { row: i, col: j });
            }
            grad.set(i, j, (plus - minus) / (2.0 * h));
        }
    }
    Ok(grad)
}

/// Vector-argument variant, for parameter gradients.
pub fn finite_diff_grad_vec<F>(mut f: F, x: &Vector, h: f64) -> Result<Vector>
where
    F: FnMut(&Vector) -> Result<f64>,
{
    let mut grad = Vector::zeros(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.get(i);
        probe.set(i, orig + h);
        let plus = f(&probe)?;
        probe.set(i, orig - h);
        let minus = f(&probe)?;
        probe.set(i, orig);
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFiniteEval { row: 0, col: i });
        }
        grad.set(i, (plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Max relative error between an analytic gradient and its finite-difference
/// estimate, with an absolute floor so near-zero entries compare absolutely.
pub fn max_rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1.0))
        .fold(0.0, f64::max)
}
