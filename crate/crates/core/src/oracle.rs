//! Reference formulas written out directly, for cross-checking the generic
//! engine. Nothing here calls into `inference`, `targets` or `numerics`.

use crate::error::{Error, Result};

fn sigmoid(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// Doubly robust ATE score for binary `d` with `E[y | d, x] = θ₁ + θ₂d` and
/// propensity `p`.
pub fn oracle_aipw(y: f64, d: f64, theta1: f64, theta2: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::DegenerateDesign(format!("propensity {p} outside (0, 1)")));
    }
    let mu1 = theta1 + theta2;
    let mu0 = theta1;
    Ok(mu1 - mu0 + d * (y - mu1) / p - (1.0 - d) * (y - mu0) / (1.0 - p))
}

/// Efficient score for the average partial effect in
/// `y = θ₁(x) + θ₂(x)'t + ε`: `θ₂ + V⁻¹(t − E)(y − θ₁ − θ₂'t)` with
/// `E = E[t | x]` and `V = Var(t | x)`.
pub fn oracle_graham_pinto(y: f64, t: &[f64], theta1: f64, theta2: &[f64], e: &[f64], v: &[Vec<f64>]) -> Result<Vec<f64>> {
    let k = t.len();
    if theta2.len() != k || e.len() != k || v.len() != k || v.iter().any(|r| r.len() != k) {
        return Err(Error::dim("graham-pinto oracle", k, theta2.len()));
    }
    let resid = y - theta1 - theta2.iter().zip(t).map(|(a, b)| a * b).sum::<f64>();
    let rhs: Vec<f64> = t.iter().zip(e).map(|(a, b)| a - b).collect();
    let w = gauss_solve(v, &rhs)?;
    Ok(theta2.iter().zip(w).map(|(a, b)| a + b * resid).collect())
}

/// Gaussian elimination with partial pivoting.
fn gauss_solve(a: &[Vec<f64>], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(r, v)| r.iter().copied().chain([*v]).collect()).collect();
    let scale = a.iter().flatten().fold(0.0_f64, |s, v| s.max(v.abs()));
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))
            .expect("non-empty");
        if !(m[p][c].abs() > 1e-12 * scale.max(1e-300)) {
            return Err(Error::DegenerateDesign("singular conditional variance".into()));
        }
        m.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for j in c..=n {
                m[r][j] -= f * m[c][j];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|j| m[r][j] * x[j]).sum();
        x[r] = (m[r][n] - s) / m[r][r];
    }
    Ok(x)
}

/// Scans `r = step, 2·step, …, r_max` for the first sign change of
/// `g(r) = r − (1 + r(1 − G(θ't(r)))θ_R)/(D(r)δ_R)`, `D(r) = G(δ₀ + δ_R r)`,
/// and returns the midpoint of the bracketing cell. `rate_index` is 1-based.
pub fn oracle_grid_fixed_point(
    theta: &[f64],
    tstar: &[f64],
    rate_index: usize,
    default_intercept: f64,
    default_slope: f64,
    r_max: f64,
    step: f64,
) -> Result<f64> {
    if rate_index == 0 || rate_index > theta.len() || tstar.len() != theta.len() {
        return Err(Error::IndexOutOfRange {
            index: rate_index,
            len: theta.len(),
        });
    }
    let j = rate_index - 1;
    let g = |r: f64| {
        let u: f64 = theta
            .iter()
            .zip(tstar)
            .enumerate()
            .map(|(i, (a, b))| a * if i == j { r } else { *b })
            .sum();
        let d = sigmoid(default_intercept + default_slope * r);
        r - (1.0 + r * (1.0 - sigmoid(u)) * theta[j]) / (d * default_slope)
    };
    let cells = (r_max / step).floor() as usize;
    let mut prev = g(step);
    for k in 2..=cells {
        let r = k as f64 * step;
        let cur = g(r);
        if prev <= 0.0 && cur > 0.0 {
            return Ok(r - 0.5 * step);
        }
        prev = cur;
    }
    Err(Error::NoBracket { r_max })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aipw_hand_case() {
        assert_eq!(oracle_aipw(1.0, 1.0, 0.0, 0.0, 0.5).unwrap(), 2.0);
        assert!(matches!(oracle_aipw(1.0, 1.0, 0.0, 0.0, 1.0), Err(Error::DegenerateDesign(_))));
    }

    #[test]
    fn graham_pinto_at_conditional_mean() {
        let v = vec![vec![2.0, 0.3], vec![0.3, 1.0]];
        let psi = oracle_graham_pinto(4.0, &[0.2, 0.7], 1.0, &[0.5, -1.5], &[0.2, 0.7], &v).unwrap();
        assert_eq!(psi, vec![0.5, -1.5]);
        let sing = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert!(oracle_graham_pinto(4.0, &[0.0, 0.7], 1.0, &[0.5, -1.5], &[0.2, 0.7], &sing).is_err());
    }

    #[test]
    fn grid_brackets_root() {
        let r = oracle_grid_fixed_point(&[1.0, -0.1], &[1.0, 0.0], 2, -3.0, 0.05, 200.0, 1e-3).unwrap();
        let u = 1.0 - 0.1 * r;
        let d = sigmoid(-3.0 + 0.05 * r);
        let g = r - (1.0 - 0.1 * r * (1.0 - sigmoid(u))) / (d * 0.05);
        assert!(g.abs() < 1.0, "{r} {g}");
    }
}
