//! Central finite-difference gradient checking.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{MagError, Result};
use crate::tensor::Matrix;

/// Default perturbation for [`grad_check`].
pub const DEFAULT_EPS: f64 = 1e-5;

/// Compare the analytic gradient reported by `f` with central differences.
///
/// `f` maps a full parameter list to `(loss, gradients)` with one gradient per
/// parameter, shaped like it. Every scalar entry of every parameter is
/// perturbed by `±eps`. Returns the maximum over entries of
/// `|g_a − g_fd| / max(1, |g_a|, |g_fd|)`.
pub fn grad_check<F>(mut f: F, params: &[Matrix], eps: f64) -> Result<f64>
where
    F: FnMut(&[Matrix]) -> Result<(f64, Vec<Matrix>)>,
{
    if !(eps > 0.0 && eps <= 1e-2) {
        return Err(MagError::Config(format!("grad_check eps must lie in (0, 1e-2], got {eps}")));
    }
    let (loss, analytic) = f(params)?;
    if !loss.is_finite() {
        return Err(MagError::numeric("grad_check loss"));
    }
    if analytic.len() != params.len() {
        return Err(MagError::Data(format!(
            "gradient count {} differs from parameter count {}",
            analytic.len(),
            params.len()
        )));
    }
    let mut work: Vec<Matrix> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (p, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[p].shape() {
            return Err(MagError::shape("grad_check", params[p].shape(), grad.shape()));
        }
        for i in 0..params[p].len() {
            let original = params[p].data()[i];
            work[p].data_mut()[i] = original + eps;
            let (plus, _) = f(&work)?;
            work[p].data_mut()[i] = original - eps;
            let (minus, _) = f(&work)?;
            work[p].data_mut()[i] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(MagError::numeric("grad_check perturbed loss"));
            }
            let fd = (plus - minus) / (2.0 * eps);
            let ga = grad.data()[i];
            let err = (ga - fd).abs() / 1.0f64.max(ga.abs()).max(fd.abs());
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
