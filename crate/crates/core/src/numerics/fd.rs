//! Central finite differences, the reference oracle for every analytic
//! derivative in the crate.

use crate::error::{Error, Result};

/// Step used for coordinate `x`: `1e-6 · (1 + |x|)`.
pub fn fd_step(x: f64) -> f64 {
    1e-6 * (1.0 + x.abs())
}

/// Central-difference gradient of a scalar function.
pub fn fd_gradient<F>(f: F, point: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let h = fd_step(point[i]);
        x[i] = point[i] + h;
        let up = f(&x);
        x[i] = point[i] - h;
        let down = f(&x);
        x[i] = point[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite-difference evaluation at coordinate {i}"
            )));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Central-difference jacobian of a vector function, `m × n` row-major.
pub fn fd_jacobian<F>(f: F, point: &[f64]) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = point.to_vec();
    let mut cols = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let h = fd_step(point[i]);
        x[i] = point[i] + h;
        let up = f(&x);
        x[i] = point[i] - h;
        let down = f(&x);
        x[i] = point[i];
        if up.iter().chain(&down).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "finite-difference evaluation at coordinate {i}"
            )));
        }
        cols.push(
            up.iter()
                .zip(&down)
                .map(|(u, d)| (u - d) / (2.0 * h))
                .collect::<Vec<_>>(),
        );
    }
    let m = cols.first().map_or(0, Vec::len);
    Ok((0..m).map(|r| cols.iter().map(|c| c[r]).collect()).collect())
}

/// Relative error with denominator `max(1, |reference|)`, maximised over
/// entries.
pub fn max_rel_error(analytic: &[f64], reference: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(reference)
        .map(|(a, r)| (a - r).abs() / r.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares `analytic` against central differences of `f` at `point` and
/// returns the maximum relative error.
pub fn finite_diff_check<F>(f: F, point: &[f64], analytic: &[f64]) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if analytic.len() != point.len() {
        return Err(Error::dim("finite_diff_check", point.len(), analytic.len()));
    }
    let fd = fd_gradient(f, point)?;
    Ok(max_rel_error(analytic, &fd))
}
