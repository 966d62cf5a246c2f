//! Per-observation structural losses `ℓ(y, t, θ)`.
//!
//! Every likelihood is stored as a negative log-likelihood, so fitting is
//! always minimisation. Each catalog model supplies its value, gradient
//! `ℓ_θ` and hessian `ℓ_θθ` in closed form; [`CustomLoss`] derives both
//! from a user value function by forward-mode differentiation.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::numerics::special::{clamp_index, logistic, norm_sf, normal_hazard, softplus, LOG_FLOOR};
use crate::numerics::{dot, Hyper, Mat, Real};

/// Mean function of a conditional-mean loss, `E[Y | t] = G(θ't)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Link {
    Identity,
    Logistic,
}

impl Link {
    pub fn name(self) -> &'static str {
        match self {
            Link::Identity => "identity",
            Link::Logistic => "logistic",
        }
    }

    pub fn g(self, u: f64) -> f64 {
        match self {
            Link::Identity => u,
            Link::Logistic => logistic(u),
        }
    }

    /// `dG/du`
    pub fn g_dot(self, u: f64) -> f64 {
        match self {
            Link::Identity => 1.0,
            Link::Logistic => {
                let g = logistic(u);
                g * (1.0 - g)
            }
        }
    }

    pub fn g_generic<T: Real>(self, u: &T) -> T {
        match self {
            Link::Identity => u.clone(),
            Link::Logistic => u.logistic(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LossDims {
    pub dy: usize,
    pub dt: usize,
    pub dtheta: usize,
}

/// Value, gradient and hessian at one observation.
#[derive(Debug, Clone, PartialEq)]
pub struct LossEval {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Mat,
}

pub trait LossModel: Debug + Send + Sync {
    /// Configuration key (`"linear"`, `"logit"`, ...).
    fn key(&self) -> &str;
    fn dims(&self) -> LossDims;
    fn value(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<f64>;
    fn grad(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Vec<f64>>;
    fn hess(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Mat>;

    fn value_grad(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((self.value(y, t, theta)?, self.grad(y, t, theta)?))
    }

    fn eval(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<LossEval> {
        let (value, grad) = self.value_grad(y, t, theta)?;
        Ok(LossEval {
            value,
            grad,
            hess: self.hess(y, t, theta)?,
        })
    }

    /// True when `ℓ_θθ` does not depend on `y`, which lets the projected
    /// hessian be computed from the treatment distribution alone.
    fn hessian_free_of_y(&self) -> bool {
        false
    }

    /// Link of a conditional-mean loss with gradient `t (G(θ't) − y)`.
    fn link(&self) -> Option<Link> {
        None
    }

    /// Whether the first treatment coordinate is an intercept that data
    /// ingestion should prepend.
    fn expects_intercept(&self) -> bool {
        true
    }

    /// Parameter components that must stay positive (trained through a
    /// softplus output).
    fn positive_components(&self) -> Vec<usize> {
        Vec::new()
    }

    /// A valid outcome value, used when the hessian is known to ignore `y`.
    fn placeholder_y(&self) -> Vec<f64> {
        vec![0.0; self.dims().dy]
    }
}

pub type SharedLoss = Arc<dyn LossModel>;

fn check_dims(key: &str, d: LossDims, y: &[f64], t: &[f64], theta: &[f64]) -> Result<()> {
    if y.len() != d.dy {
        return Err(Error::dim(format!("{key} loss: y"), d.dy, y.len()));
    }
    if t.len() != d.dt {
        return Err(Error::dim(format!("{key} loss: t"), d.dt, t.len()));
    }
    if theta.len() != d.dtheta {
        return Err(Error::dim(format!("{key} loss: theta"), d.dtheta, theta.len()));
    }
    Ok(())
}

fn scaled_outer(t: &[f64], w: f64) -> Mat {
    let mut m = Mat::outer(t, t);
    m.as_mut_slice().iter_mut().for_each(|v| *v *= w);
    m
}

/// Squared error `(y − θ't)² / 2`.
#[derive(Debug, Clone)]
pub struct LinearSq {
    dt: usize,
}

impl LinearSq {
    pub fn new(dt: usize) -> Self {
        Self { dt }
    }
}

impl LossModel for LinearSq {
    fn key(&self) -> &str {
        "linear"
    }
    fn dims(&self) -> LossDims {
        LossDims {
            dy: 1,
            dt: self.dt,
            dtheta: self.dt,
        }
    }
    fn value(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<f64> {
        check_dims(self.key(), self.dims(), y, t, theta)?;
        let r = y[0] - dot(theta, t);
        Ok(0.5 * r * r)
    }
    fn grad(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        check_dims(self.key(), self.dims(), y, t, theta)?;
        let r = dot(theta, t) - y[0];
        Ok(t.iter().map(|ti| ti * r).collect())
    }
    fn hess(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Mat> {
        check_dims(self.key(), self.dims(), y, t, theta)?;
        Ok(Mat::outer(t, t))
    }
    fn hessian_free_of_y(&self) -> bool {
        true
    }
    fn link(&self) -> Option<Link> {
        Some(Link::Identity)
    }
}

/// Bernoulli/logistic negative log-likelihood, shared by the binary logit
/// and the fractional quasi-likelihood. Written as `softplus(u) − y·u`,
/// which equals `−[y log G + (1−y) log(1−G)]` without evaluating logs of
/// saturated probabilities.
#[derive(Debug, Clone)]
pub struct LogisticNll {
    dt: usize,
    fractional: bool,
}

impl LogisticNll {
    /// Binary outcome `y ∈ {0, 1}`.
    pub fn logit(dt: usize) -> Self {
        Self {
            dt,
            fractional: false,
        }
    }

    /// Fractional outcome `y ∈ [0, 1]`.
    pub fn fractional(dt: usize) -> Self {
        Self {
            dt,
            fractional: true,
        }
    }

    fn check_y(&self, y: f64) -> Result<()> {
        if self.fractional {
            if !(0.0..=1.0).contains(&y) {
                return Err(Error::YOutOfRange(y));
            }
        } else if y != 0.0 && y != 1.0 {
            return Err(Error::NotBinary(y));
        }
        Ok(())
    }

    fn index(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<f64> {
        check_dims(self.key(), self.dims(), y, t, theta)?;
        self.check_y(y[0])?;
        Ok(clamp_index(dot(theta, t)))
    }
}

impl LossModel for LogisticNll {
    fn key(&self) -> &str {
        if self.fractional {
            "fractional"
        } else {
            "logit"
        }
    }
    fn dims(&self) -> LossDims {
        LossDims {
            dy: 1,
            dt: self.dt,
            dtheta: self.dt,
        }
    }
    fn value(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<f64> {
        let u = self.index(y, t, theta)?;
        Ok(softplus(u) - y[0] * u)
    }
    fn grad(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let u = self.index(y, t, theta)?;
        let r = logistic(u) - y[0];
        Ok(t.iter().map(|ti| ti * r).collect())
    }
    fn value_grad(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let u = self.index(y, t, theta)?;
        let r = logistic(u) - y[0];
        Ok((softplus(u) - y[0] * u, t.iter().map(|ti| ti * r).collect()))
    }
    fn hess(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Mat> {
        let u = self.index(y, t, theta)?;
        Ok(scaled_outer(t, Link::Logistic.g_dot(u)))
    }
    fn hessian_free_of_y(&self) -> bool {
        true
    }
    fn link(&self) -> Option<Link> {
        Some(Link::Logistic)
    }
}

/// Multinomial logit with an outside option.
///
/// `y` is a length-`J` indicator vector (all zero for the outside option),
/// `t` packs the `k` characteristics of each inside option, choice by
/// choice (`J·k` entries). `θ` packs the `J` choice intercepts followed by
/// the `k` shared slopes, so `u_j = θ_j + θ_{J+1..}'t_j` and `u_0 = 0`.
#[derive(Debug, Clone)]
pub struct MultinomialNll {
    choices: usize,
    chars: usize,
}

impl MultinomialNll {
    pub fn new(choices: usize, chars: usize) -> Self {
        Self { choices, chars }
    }

    pub fn choices(&self) -> usize {
        self.choices
    }

    fn utilities<T: Real>(&self, t: &[f64], theta: &[T]) -> Vec<T> {
        let j = self.choices;
        (0..j)
            .map(|c| {
                let mut u = theta[c].clone();
                for m in 0..self.chars {
                    u = u + theta[j + m].clone() * t[c * self.chars + m];
                }
                u
            })
            .collect()
    }

    fn check(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<()> {
        check_dims(self.key(), self.dims(), y, t, theta)?;
        let mut set = 0;
        for &v in y {
            if v == 1.0 {
                set += 1;
            } else if v != 0.0 {
                return Err(Error::NotBinary(v));
            }
        }
        if set > 1 {
            return Err(Error::MultipleChoicesSet);
        }
        Ok(())
    }

    /// Choice probabilities of the inside options (softmax with `u_0 = 0`).
    fn probabilities(&self, t: &[f64], theta: &[f64]) -> Vec<f64> {
        let u: Vec<f64> = self.utilities(t, theta).into_iter().map(clamp_index).collect();
        let m = u.iter().copied().fold(0.0_f64, f64::max);
        let denom = (-m).exp() + u.iter().map(|v| (v - m).exp()).sum::<f64>();
        u.iter().map(|v| (v - m).exp() / denom).collect()
    }

    /// Row `j` of the utility jacobian `∂u_j/∂θ`.
    fn design_row(&self, t: &[f64], j: usize) -> Vec<f64> {
        let mut row = vec![0.0; self.choices + self.chars];
        row[j] = 1.0;
        row[self.choices..].copy_from_slice(&t[j * self.chars..(j + 1) * self.chars]);
        row
    }
}

impl LossModel for MultinomialNll {
    fn key(&self) -> &str {
        "multinomial"
    }
    fn dims(&self) -> LossDims {
        LossDims {
            dy: self.choices,
            dt: self.choices * self.chars,
            dtheta: self.choices + self.chars,
        }
    }
    fn expects_intercept(&self) -> bool {
        false
    }
    fn value(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<f64> {
        self.check(y, t, theta)?;
        let u: Vec<f64> = self.utilities(t, theta).into_iter().map(clamp_index).collect();
        let m = u.iter().copied().fold(0.0_f64, f64::max);
        let lse = m + ((-m).exp() + u.iter().map(|v| (v - m).exp()).sum::<f64>()).ln();
        Ok(lse - dot(y, &u))
    }
    fn grad(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        self.check(y, t, theta)?;
        let p = self.probabilities(t, theta);
        let mut g = vec![0.0; self.choices + self.chars];
        for j in 0..self.choices {
            let r = p[j] - y[j];
            for (gk, a) in g.iter_mut().zip(self.design_row(t, j)) {
                *gk += r * a;
            }
        }
        Ok(g)
    }
    fn hess(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Mat> {
        self.check(y, t, theta)?;
        let p = self.probabilities(t, theta);
        let rows: Vec<Vec<f64>> = (0..self.choices).map(|j| self.design_row(t, j)).collect();
        let d = self.choices + self.chars;
        // Aᵀ (diag p − p pᵀ) A
        let mut h = Mat::zeros(d, d);
        for j in 0..self.choices {
            for l in 0..self.choices {
                let w = if j == l { p[j] - p[j] * p[l] } else { -p[j] * p[l] };
                if w == 0.0 {
                    continue;
                }
                for a in 0..d {
                    for b in 0..d {
                        h[(a, b)] += w * rows[j][a] * rows[l][b];
                    }
                }
            }
        }
        Ok(h.symmetrize())
    }
    fn hessian_free_of_y(&self) -> bool {
        true
    }
}

/// Type I Tobit negative log-likelihood in the transformed parameters
/// `θ = (β/σ, 1/σ)`: the last component is the inverse scale.
///
/// Censored observations (`y = 0`) contribute `−log(1 − Φ(θ₁'t))`, the rest
/// `−log θ₂ + (θ₂y − θ₁'t)²/2` (the constant `log √(2π)` is dropped).
#[derive(Debug, Clone)]
pub struct Tobit1 {
    dt: usize,
}

impl Tobit1 {
    pub fn new(dt: usize) -> Self {
        Self { dt }
    }

    fn split<'a>(&self, y: &[f64], t: &[f64], theta: &'a [f64]) -> Result<(&'a [f64], f64)> {
        check_dims(self.key(), self.dims(), y, t, theta)?;
        if y[0] < 0.0 {
            return Err(Error::NegativeY(y[0]));
        }
        let scale = theta[self.dt];
        if !(scale > 0.0) {
            return Err(Error::NonPositiveScale(scale));
        }
        Ok((&theta[..self.dt], scale))
    }
}

impl LossModel for Tobit1 {
    fn key(&self) -> &str {
        "tobit1"
    }
    fn dims(&self) -> LossDims {
        LossDims {
            dy: 1,
            dt: self.dt,
            dtheta: self.dt + 1,
        }
    }
    fn positive_components(&self) -> Vec<usize> {
        vec![self.dt]
    }
    fn value(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<f64> {
        let (beta, inv_scale) = self.split(y, t, theta)?;
        let u = dot(beta, t);
        if y[0] == 0.0 {
            Ok(-norm_sf(u).max(LOG_FLOOR).ln())
        } else {
            let r = inv_scale * y[0] - u;
            Ok(-inv_scale.ln() + 0.5 * r * r)
        }
    }
    fn grad(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let (beta, inv_scale) = self.split(y, t, theta)?;
        let u = dot(beta, t);
        let mut g = vec![0.0; self.dt + 1];
        if y[0] == 0.0 {
            let h = normal_hazard(u);
            for (gk, tk) in g.iter_mut().zip(t) {
                *gk = h * tk;
            }
        } else {
            let r = inv_scale * y[0] - u;
            for (gk, tk) in g.iter_mut().zip(t) {
                *gk = -r * tk;
            }
            g[self.dt] = -1.0 / inv_scale + r * y[0];
        }
        Ok(g)
    }
    fn hess(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Mat> {
        let (beta, inv_scale) = self.split(y, t, theta)?;
        let u = dot(beta, t);
        let d = self.dt + 1;
        let mut h = Mat::zeros(d, d);
        if y[0] == 0.0 {
            // d/du [φ/(1−Φ)] = λ(λ − u)
            let lam = normal_hazard(u);
            let w = lam * (lam - u);
            for a in 0..self.dt {
                for b in 0..self.dt {
                    h[(a, b)] = w * t[a] * t[b];
                }
            }
        } else {
            for a in 0..self.dt {
                for b in 0..self.dt {
                    h[(a, b)] = t[a] * t[b];
                }
                h[(a, self.dt)] = -y[0] * t[a];
                h[(self.dt, a)] = -y[0] * t[a];
            }
            h[(self.dt, self.dt)] = 1.0 / (inv_scale * inv_scale) + y[0] * y[0];
        }
        Ok(h)
    }
    fn placeholder_y(&self) -> Vec<f64> {
        vec![0.0]
    }
}

/// Stacked reduced-form and first-stage squared losses of the linear IV
/// model. `y = (outcome, endogenous treatment)`, `t = z` (instrument vector
/// with intercept), `θ = (α, β, ζ₁, ζ₂)` generalised to `(a; c)` with one
/// coefficient per instrument coordinate in each block.
#[derive(Debug, Clone)]
pub struct IvStacked {
    dz: usize,
}

impl IvStacked {
    pub fn new(dz: usize) -> Self {
        Self { dz }
    }

    fn residuals(&self, y: &[f64], z: &[f64], theta: &[f64]) -> Result<(f64, f64)> {
        check_dims(self.key(), self.dims(), y, z, theta)?;
        let (a, c) = theta.split_at(self.dz);
        Ok((y[0] - dot(a, z), y[1] - dot(c, z)))
    }
}

impl LossModel for IvStacked {
    fn key(&self) -> &str {
        "iv"
    }
    fn dims(&self) -> LossDims {
        LossDims {
            dy: 2,
            dt: self.dz,
            dtheta: 2 * self.dz,
        }
    }
    fn value(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<f64> {
        let (r1, r2) = self.residuals(y, t, theta)?;
        Ok(0.5 * (r1 * r1 + r2 * r2))
    }
    fn grad(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        let (r1, r2) = self.residuals(y, t, theta)?;
        // −(r₁, r₂) ⊗ z
        Ok(t.iter().map(|z| -r1 * z).chain(t.iter().map(|z| -r2 * z)).collect())
    }
    fn hess(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Mat> {
        check_dims(self.key(), self.dims(), y, t, theta)?;
        Ok(kron_identity2(&Mat::outer(t, t)))
    }
    fn hessian_free_of_y(&self) -> bool {
        true
    }
}

/// `I₂ ⊗ A`
pub fn kron_identity2(a: &Mat) -> Mat {
    let n = a.rows();
    let mut out = Mat::zeros(2 * n, 2 * n);
    for blk in 0..2 {
        for i in 0..n {
            for j in 0..n {
                out[(blk * n + i, blk * n + j)] = a[(i, j)];
            }
        }
    }
    out
}

/// A user value function, differentiated automatically.
pub trait ScalarLoss: Debug + Send + Sync {
    fn value<T: Real>(&self, y: &[f64], t: &[f64], theta: &[T]) -> Result<T>;
}

/// Loss defined by a [`ScalarLoss`]; gradient and hessian come from one
/// second-order forward pass. Flags are conservatively off.
#[derive(Debug, Clone)]
pub struct CustomLoss<F> {
    dims: LossDims,
    f: F,
    intercept: bool,
}

impl<F: ScalarLoss> CustomLoss<F> {
    pub fn new(dims: LossDims, f: F) -> Self {
        Self {
            dims,
            f,
            intercept: false,
        }
    }

    pub fn with_intercept(mut self, yes: bool) -> Self {
        self.intercept = yes;
        self
    }

    pub fn inner(&self) -> &F {
        &self.f
    }
}

impl<F: ScalarLoss> LossModel for CustomLoss<F> {
    fn key(&self) -> &str {
        "custom"
    }
    fn dims(&self) -> LossDims {
        self.dims
    }
    fn expects_intercept(&self) -> bool {
        self.intercept
    }
    fn value(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<f64> {
        check_dims("custom", self.dims, y, t, theta)?;
        self.f.value(y, t, theta)
    }
    fn grad(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        Ok(self.value_grad(y, t, theta)?.1)
    }
    fn value_grad(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_dims("custom", self.dims, y, t, theta)?;
        let seeded = crate::numerics::Dual::seed(theta);
        let out = self.f.value(y, t, &seeded)?;
        Ok((out.value, out.gradient(theta.len())))
    }
    fn hess(&self, y: &[f64], t: &[f64], theta: &[f64]) -> Result<Mat> {
        check_dims("custom", self.dims, y, t, theta)?;
        let n = theta.len();
        let out = self.f.value(y, t, &Hyper::seed(theta))?;
        Mat::new(n, n, out.hessian(n)).map(|h| h.symmetrize())
    }
}

/// A loss value written in the expression language, with variables
/// `y1..`, `t1..` and `theta1..`.
#[derive(Debug, Clone)]
pub struct ExprLoss {
    expr: Expr,
}

impl ExprLoss {
    pub fn parse(src: &str) -> Result<Self> {
        Ok(Self {
            expr: Expr::parse(src, &["y", "t", "theta"])?,
        })
    }

    /// Smallest dimensions consistent with the variables referenced.
    pub fn min_dims(&self) -> LossDims {
        LossDims {
            dy: self.expr.max_index("y"),
            dt: self.expr.max_index("t"),
            dtheta: self.expr.max_index("theta"),
        }
    }
}

impl ScalarLoss for ExprLoss {
    fn value<T: Real>(&self, y: &[f64], t: &[f64], theta: &[T]) -> Result<T> {
        let mut data = BTreeMap::new();
        data.insert("y", y);
        data.insert("t", t);
        self.expr.eval(&Bindings {
            active: ("theta", theta),
            data: &data,
        })
    }
}

/// Resolves a configuration key. `dt` is the treatment width as the loss
/// sees it (intercept included); `choices` is needed for `multinomial`,
/// `expression` for `custom`.
pub fn loss_from_key(
    key: &str,
    dt: usize,
    choices: Option<usize>,
    expression: Option<&str>,
) -> Result<SharedLoss> {
    Ok(match key {
        "linear" => Arc::new(LinearSq::new(dt)),
        "logit" => Arc::new(LogisticNll::logit(dt)),
        "fractional" => Arc::new(LogisticNll::fractional(dt)),
        "tobit1" => Arc::new(Tobit1::new(dt)),
        "iv" => Arc::new(IvStacked::new(dt)),
        "multinomial" => {
            let j = choices.ok_or_else(|| Error::Config("multinomial needs `choices`".into()))?;
            if j == 0 || dt % j != 0 {
                return Err(Error::Config(format!(
                    "multinomial: treatment width {dt} is not a multiple of {j} choices"
                )));
            }
            Arc::new(MultinomialNll::new(j, dt / j))
        }
        "custom" => {
            let src = expression.ok_or_else(|| Error::Config("custom loss needs `expression`".into()))?;
            let e = ExprLoss::parse(src)?;
            let min = e.min_dims();
            let dims = LossDims {
                dy: min.dy.max(1),
                dt: dt.max(min.dt),
                dtheta: min.dtheta,
            };
            if dims.dtheta == 0 {
                return Err(Error::Config("custom loss does not reference any theta".into()));
            }
            Arc::new(CustomLoss::new(dims, e))
        }
        other => return Err(Error::UnknownKey(other.to_string())),
    })
}
