//! Finite-difference gradient oracle.
//!
//! Central differences `(f(x+eps) - f(x-eps)) / 2eps` per coordinate, used
//! throughout the test suites as the independent reference for
//! [`Graph::backward`](crate::graph::Graph::backward). The function under
//! test must be deterministic in its parameters (freeze any sampling).

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::Real;

/// Coordinate-wise central-difference gradient of `f` at `params`.
pub fn finite_difference_gradient<F>(mut f: F, params: &[Real], eps: Real) -> Result<Vec<Real>>
where
    F: FnMut(&[Real]) -> Real,
{
    let mut work = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + eps;
        let up = f(&work);
        work[i] = orig - eps;
        let down = f(&work);
        work[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite {
                context: format!("finite difference at coordinate {i}"),
            });
        }
        grad.push((up - down) / (2.0 * eps));
    }
    Ok(grad)
}

/// Numerical gradient w.r.t. one named array of a [`ParamSet`], holding the
/// rest fixed.
pub fn finite_difference_named<F>(
    f: F,
    params: &ParamSet,
    name: &str,
    eps: Real,
) -> Result<Vec<Real>>
where
    F: Fn(&ParamSet) -> Real,
{
    let base = params
        .get(name)
        .ok_or_else(|| Error::UnknownParam(name.to_string()))?
        .values
        .clone();
    let mut work = params.clone();
    finite_difference_gradient(
        |coords| {
            work.get_mut(name).unwrap().values.copy_from_slice(coords);
            f(&work)
        },
        &base,
        eps,
    )
}

/// Largest per-coordinate relative error between two gradients.
/// Coordinates where both magnitudes fall below `1e-6` count as exact;
/// they are dominated by finite-difference noise.
pub fn max_relative_error(analytic: &[Real], numeric: &[Real]) -> Real {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let scale = a.abs().max(n.abs());
            if scale < 1e-6 {
                0.0
            } else {
                (a - n).abs() / scale
            }
        })
        .fold(0.0, Real::max)
}
