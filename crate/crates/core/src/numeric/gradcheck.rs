//! Central finite differences for gradient verification.
//!
//! The checker only perturbs parameter values and re-runs a caller-supplied
//! forward closure, so it stays independent of the backward implementation
//! it is used to verify.

use super::{ParamId, ParamSet};

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Numerical gradient of `f` w.r.t. every entry of parameter `pid`,
/// via (f(p+eps) - f(p-eps)) / (2 eps).
pub fn central_diff_param<F>(params: &mut ParamSet, pid: ParamId, eps: f64, mut f: F) -> Vec<f64>
where
    F: FnMut(&ParamSet) -> f64,
{
    let n = params.get(pid).value.len();
    let mut grad = vec![0.0; n];
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        let orig = params.get(pid).value.values[i];
        params.get_mut(pid).value.values[i] = orig + eps;
        let plus = f(params);
        params.get_mut(pid).value.values[i] = orig - eps;
        let minus = f(params);
        params.get_mut(pid).value.values[i] = orig;
        grad[i] = (plus - minus) / (2.0 * eps);
    }
    grad
}

/// Relative closeness with a small absolute floor so near-zero gradients
/// are compared in absolute terms.
pub fn rel_close(analytic: f64, numeric: f64, rel_tol: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs()).max(1e-3);
    (analytic - numeric).abs() <= rel_tol * scale
}

/// True when every analytic/numeric pair satisfies [`rel_close`].
pub fn grads_close(analytic: &[f64], numeric: &[f64], rel_tol: f64) -> bool {
    analytic.len() == numeric.len()
        && analytic
            .iter()
            .zip(numeric)
            .all(|(&a, &n)| rel_close(a, n, rel_tol))
}
