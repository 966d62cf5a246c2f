//! Target functionals `H(x, θ; t*)` and their Jacobians `H_θ`.
//!
//! Indices in keys (`coef:2`, `ame:3`) are 1-based, matching the usual
//! `θ₁, θ₂, ...` notation; `θ₁` is the intercept coefficient.

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::loss::{Link, LossModel};
use crate::numerics::special::logistic;
use crate::numerics::{dot, Dual, Mat, Real};

/// Minimum `|θ₁|` accepted by the willingness-to-pay ratio.
pub const WTP_INTERCEPT_TOL: f64 = 1e-8;

pub trait Target: Debug + Send + Sync {
    fn name(&self) -> String;
    /// Output dimension `dμ`.
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Vec<f64>>;
    /// `dμ × dθ` Jacobian in θ.
    fn jac(&self, x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Mat>;

    /// Link the loss must have for the target to be meaningful.
    fn required_link(&self) -> Option<Link> {
        None
    }

    fn check_loss(&self, loss: &dyn LossModel) -> Result<()> {
        if let Some(want) = self.required_link() {
            let found = loss.link();
            if found != Some(want) {
                return Err(Error::LinkMismatch {
                    expected: want.name().into(),
                    found: found.map_or(loss.key().to_string(), |l| l.name().to_string()),
                });
            }
        }
        Ok(())
    }
}

pub type SharedTarget = Arc<dyn Target>;

fn one_based(k: usize, len: usize) -> Result<usize> {
    if k == 0 || k > len {
        Err(Error::IndexOutOfRange { index: k, len })
    } else {
        Ok(k - 1)
    }
}

fn check_theta(name: &str, theta: &[f64], tstar: &[f64]) -> Result<()> {
    if theta.len() != tstar.len() {
        return Err(Error::dim(format!("{name}: t*"), theta.len(), tstar.len()));
    }
    Ok(())
}

fn row(v: Vec<f64>) -> Mat {
    let n = v.len();
    Mat::new(1, n, v).expect("finite jacobian row")
}

/// `H = θ_k`.
#[derive(Debug, Clone)]
pub struct Coefficient {
    k: usize,
    dtheta: usize,
}

impl Coefficient {
    /// `k` is 1-based.
    pub fn new(k: usize, dtheta: usize) -> Result<Self> {
        Ok(Self {
            k: one_based(k, dtheta)?,
            dtheta,
        })
    }
}

impl Target for Coefficient {
    fn name(&self) -> String {
        format!("coef:{}", self.k + 1)
    }
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, _x: &[f64], theta: &[f64], _tstar: &[f64]) -> Result<Vec<f64>> {
        if theta.len() != self.dtheta {
            return Err(Error::dim("coef target: theta", self.dtheta, theta.len()));
        }
        Ok(vec![theta[self.k]])
    }
    fn jac(&self, _x: &[f64], theta: &[f64], _tstar: &[f64]) -> Result<Mat> {
        if theta.len() != self.dtheta {
            return Err(Error::dim("coef target: theta", self.dtheta, theta.len()));
        }
        let mut e = vec![0.0; self.dtheta];
        e[self.k] = 1.0;
        Ok(row(e))
    }
}

/// Average marginal effect of treatment `r` at `t*` for a conditional-mean
/// model: `H = Ġ(θ't*)·θ_r`.
#[derive(Debug, Clone)]
pub struct MarginalEffect {
    link: Link,
    r: usize,
}

impl MarginalEffect {
    pub fn new(link: Link, r: usize, dtheta: usize) -> Result<Self> {
        Ok(Self {
            link,
            r: one_based(r, dtheta)?,
        })
    }
}

impl Target for MarginalEffect {
    fn name(&self) -> String {
        format!("ame:{}", self.r + 1)
    }
    fn dim(&self) -> usize {
        1
    }
    fn required_link(&self) -> Option<Link> {
        Some(self.link)
    }
    fn eval(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Vec<f64>> {
        check_theta("ame", theta, tstar)?;
        Ok(vec![self.link.g_dot(dot(theta, tstar)) * theta[self.r]])
    }
    fn jac(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Mat> {
        check_theta("ame", theta, tstar)?;
        let u = dot(theta, tstar);
        let (gd, gdd) = match self.link {
            Link::Identity => (1.0, 0.0),
            Link::Logistic => {
                let g = logistic(u);
                let gd = g * (1.0 - g);
                (gd, gd * (1.0 - 2.0 * g))
            }
        };
        let mut j: Vec<f64> = tstar.iter().map(|ts| gdd * ts * theta[self.r]).collect();
        j[self.r] += gd;
        Ok(row(j))
    }
}

/// Average change in the marginal effect for a logistic-link model:
/// `H = θ_r²·G(1−G)(1−2G)` at `G = G(θ't*)`.
#[derive(Debug, Clone)]
pub struct MarginalEffectChange {
    r: usize,
}

impl MarginalEffectChange {
    pub fn new(r: usize, dtheta: usize) -> Result<Self> {
        Ok(Self {
            r: one_based(r, dtheta)?,
        })
    }
}

impl Target for MarginalEffectChange {
    fn name(&self) -> String {
        format!("acme:{}", self.r + 1)
    }
    fn dim(&self) -> usize {
        1
    }
    fn required_link(&self) -> Option<Link> {
        Some(Link::Logistic)
    }
    fn eval(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Vec<f64>> {
        check_theta("acme", theta, tstar)?;
        let g = logistic(dot(theta, tstar));
        let b = theta[self.r];
        Ok(vec![b * b * g * (1.0 - g) * (1.0 - 2.0 * g)])
    }
    fn jac(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Mat> {
        check_theta("acme", theta, tstar)?;
        let g = logistic(dot(theta, tstar));
        let gd = g * (1.0 - g);
        let s = gd * (1.0 - 2.0 * g);
        let s_dot = gd * (1.0 - 6.0 * g + 6.0 * g * g);
        let b = theta[self.r];
        let mut j: Vec<f64> = tstar.iter().map(|ts| b * b * s_dot * ts).collect();
        j[self.r] += 2.0 * b * s;
        Ok(row(j))
    }
}

/// Price elasticity at the rate in `t*`: `H = (1 − G(θ't*))·θ_r·t*_r`.
#[derive(Debug, Clone)]
pub struct Elasticity {
    r: usize,
}

impl Elasticity {
    pub fn new(r: usize, dtheta: usize) -> Result<Self> {
        Ok(Self {
            r: one_based(r, dtheta)?,
        })
    }
}

impl Target for Elasticity {
    fn name(&self) -> String {
        format!("elasticity:{}", self.r + 1)
    }
    fn dim(&self) -> usize {
        1
    }
    fn required_link(&self) -> Option<Link> {
        Some(Link::Logistic)
    }
    fn eval(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Vec<f64>> {
        check_theta("elasticity", theta, tstar)?;
        let g = logistic(dot(theta, tstar));
        Ok(vec![(1.0 - g) * theta[self.r] * tstar[self.r]])
    }
    fn jac(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Mat> {
        check_theta("elasticity", theta, tstar)?;
        let g = logistic(dot(theta, tstar));
        let rate = tstar[self.r];
        let c = -g * (1.0 - g) * theta[self.r] * rate;
        let mut j: Vec<f64> = tstar.iter().map(|ts| c * ts).collect();
        j[self.r] += (1.0 - g) * rate;
        Ok(row(j))
    }
}

/// Willingness to pay `H = θ_r / θ₁`.
#[derive(Debug, Clone)]
pub struct WillingnessToPay {
    r: usize,
}

impl WillingnessToPay {
    pub fn new(r: usize, dtheta: usize) -> Result<Self> {
        let r = one_based(r, dtheta)?;
        if r == 0 {
            return Err(Error::Config("wtp: rate index must differ from the intercept".into()));
        }
        Ok(Self { r })
    }

    fn intercept(theta: &[f64]) -> Result<f64> {
        let a = theta[0];
        if a.abs() < WTP_INTERCEPT_TOL {
            Err(Error::DivideByZeroIntercept(a))
        } else {
            Ok(a)
        }
    }
}

impl Target for WillingnessToPay {
    fn name(&self) -> String {
        format!("wtp:{}", self.r + 1)
    }
    fn dim(&self) -> usize {
        1
    }
    fn required_link(&self) -> Option<Link> {
        Some(Link::Logistic)
    }
    fn eval(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Vec<f64>> {
        check_theta("wtp", theta, tstar)?;
        Ok(vec![theta[self.r] / Self::intercept(theta)?])
    }
    fn jac(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Mat> {
        check_theta("wtp", theta, tstar)?;
        let a = Self::intercept(theta)?;
        let mut j = vec![0.0; theta.len()];
        j[0] = -theta[self.r] / (a * a);
        j[self.r] = 1.0 / a;
        Ok(row(j))
    }
}

/// Logistic default model `P[D = 1 | r] = G(δ₀ + δ_R r)`, taken as given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultSpec {
    pub intercept: f64,
    pub slope: f64,
}

impl DefaultSpec {
    pub fn new(intercept: f64, slope: f64) -> Self {
        Self { intercept, slope }
    }

    pub fn prob<T: Real>(&self, r: &T) -> T {
        (r.clone() * self.slope + self.intercept).logistic()
    }
}

/// Units in which offered rates (and `t*`'s rate entry) are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateUnits {
    #[default]
    Percent,
    Fraction,
}

impl RateUnits {
    /// Default upper end of the rate bracket.
    pub fn r_max(self) -> f64 {
        match self {
            RateUnits::Percent => 200.0,
            RateUnits::Fraction => 2.0,
        }
    }

    /// Multiplier turning a rate into interest per unit of principal.
    pub fn to_fraction(self) -> f64 {
        match self {
            RateUnits::Percent => 0.01,
            RateUnits::Fraction => 1.0,
        }
    }
}

/// Settings shared by the optimal-rate targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateProblem {
    pub defaults: DefaultSpec,
    /// 1-based index of the rate coefficient in θ (and the rate entry of t*).
    pub rate_index: usize,
    #[serde(default)]
    pub units: RateUnits,
    #[serde(default)]
    pub r_max: Option<f64>,
    /// Accept `θ_R = 0`, where the fixed point still exists.
    #[serde(default)]
    pub allow_boundary: bool,
}

impl RateProblem {
    pub fn new(defaults: DefaultSpec, rate_index: usize) -> Self {
        Self {
            defaults,
            rate_index,
            units: RateUnits::Percent,
            r_max: None,
            allow_boundary: false,
        }
    }

    pub fn bracket(&self) -> f64 {
        self.r_max.unwrap_or_else(|| self.units.r_max())
    }

    fn rate(&self, dtheta: usize) -> Result<usize> {
        one_based(self.rate_index, dtheta)
    }
}

/// Index `θ't*` with the rate entry of `t*` replaced by `r`.
fn index_at<T: Real>(r: &T, theta: &[T], tstar: &[f64], rate: usize) -> T {
    let mut u = T::from_f64(0.0);
    for (j, th) in theta.iter().enumerate() {
        u = if j == rate {
            u + th.clone() * r.clone()
        } else {
            u + th.clone() * tstar[j]
        };
    }
    u
}

/// `g(r) = r − (1 + r(1 − G(u(r)))θ_R) / (D(r)δ_R)`; its root is the
/// profit-maximising rate.
fn rate_residual<T: Real>(r: &T, theta: &[T], tstar: &[f64], rate: usize, d: &DefaultSpec) -> T {
    let g = index_at(r, theta, tstar, rate).logistic();
    let num = r.clone() * (-g + 1.0) * theta[rate].clone() + 1.0;
    r.clone() - num / (d.prob(r) * d.slope)
}

fn profit_at<T: Real>(r: &T, theta: &[T], tstar: &[f64], p: &RateProblem, rate: usize, loan: f64) -> T {
    let g = index_at(r, theta, tstar, rate).logistic();
    r.clone() * g * (-p.defaults.prob(r) + 1.0) * (loan * p.units.to_fraction())
}

/// Solves the optimal-rate fixed point by bisection on `(0, r_max]`.
pub fn optimal_rate(theta: &[f64], tstar: &[f64], p: &RateProblem) -> Result<f64> {
    check_theta("opt_rate", theta, tstar)?;
    let rate = p.rate(theta.len())?;
    let theta_r = theta[rate];
    let d = &p.defaults;
    if !(d.slope > 0.0) {
        return Err(Error::SignConditionViolated(format!(
            "default slope must be positive, got {}",
            d.slope
        )));
    }
    let ok = if p.allow_boundary { theta_r <= 0.0 } else { theta_r < 0.0 };
    if !ok {
        return Err(Error::SignConditionViolated(format!(
            "rate coefficient must be negative, got {theta_r}"
        )));
    }
    let g = |r: f64| rate_residual(&r, theta, tstar, rate, d);
    let r_max = p.bracket();
    let g_hi = g(r_max);
    if !(g_hi > 0.0) {
        return Err(Error::NoBracket { r_max });
    }
    // g(0⁺) = −1/(D(0)δ_R) < 0
    let (mut lo, mut hi) = (0.0_f64, r_max);
    loop {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let r = if lo > 0.0 && g(lo).abs() < g(hi).abs() { lo } else { hi };
    Ok(r)
}

/// `∂r*/∂θ = −g_θ / g_r` at the root.
pub fn optimal_rate_jacobian(theta: &[f64], tstar: &[f64], p: &RateProblem, r: f64) -> Result<Vec<f64>> {
    let rate = p.rate(theta.len())?;
    let n = theta.len();
    let th: Vec<Dual> = (0..n).map(|i| Dual::variable(theta[i], i, n + 1)).collect();
    let rv = Dual::variable(r, n, n + 1);
    let g = rate_residual(&rv, &th, tstar, rate, &p.defaults);
    let grad = g.gradient(n + 1);
    let g_r = grad[n];
    if g_r == 0.0 || !g_r.is_finite() {
        return Err(Error::NonFinite("optimal-rate implicit derivative".into()));
    }
    Ok(grad[..n].iter().map(|v| -v / g_r).collect())
}

/// `H = r*(θ)`.
#[derive(Debug, Clone)]
pub struct OptimalRate {
    problem: RateProblem,
}

impl OptimalRate {
    pub fn new(problem: RateProblem) -> Self {
        Self { problem }
    }
}

impl Target for OptimalRate {
    fn name(&self) -> String {
        "opt_rate".into()
    }
    fn dim(&self) -> usize {
        1
    }
    fn required_link(&self) -> Option<Link> {
        Some(Link::Logistic)
    }
    fn eval(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![optimal_rate(theta, tstar, &self.problem)?])
    }
    fn jac(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Mat> {
        let r = optimal_rate(theta, tstar, &self.problem)?;
        Ok(row(optimal_rate_jacobian(theta, tstar, &self.problem, r)?))
    }
}

/// How the profit Jacobian treats the dependence of `r*` on θ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfitJacobian {
    /// Hold `r*` fixed; exact because `∂π/∂r = 0` at the optimum.
    #[default]
    Envelope,
    /// Chain through `∂r*/∂θ` as well.
    Implicit,
}

/// Expected profit at the optimal rate, `π = L·r*·G(u(r*))·(1 − D(r*))`.
#[derive(Debug, Clone)]
pub struct ProfitAtOptimum {
    problem: RateProblem,
    loan: f64,
    mode: ProfitJacobian,
}

impl ProfitAtOptimum {
    pub fn new(problem: RateProblem, loan: f64) -> Self {
        Self {
            problem,
            loan,
            mode: ProfitJacobian::Envelope,
        }
    }

    pub fn with_jacobian(mut self, mode: ProfitJacobian) -> Self {
        self.mode = mode;
        self
    }
}

impl Target for ProfitAtOptimum {
    fn name(&self) -> String {
        "profit_at_opt".into()
    }
    fn dim(&self) -> usize {
        1
    }
    fn required_link(&self) -> Option<Link> {
        Some(Link::Logistic)
    }
    fn eval(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Vec<f64>> {
        let r = optimal_rate(theta, tstar, &self.problem)?;
        let rate = self.problem.rate(theta.len())?;
        Ok(vec![profit_at(&r, theta, tstar, &self.problem, rate, self.loan)])
    }
    fn jac(&self, _x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Mat> {
        let r = optimal_rate(theta, tstar, &self.problem)?;
        let rate = self.problem.rate(theta.len())?;
        let n = theta.len();
        let th: Vec<Dual> = (0..n).map(|i| Dual::variable(theta[i], i, n + 1)).collect();
        let rv = Dual::variable(r, n, n + 1);
        let grad = profit_at(&rv, &th, tstar, &self.problem, rate, self.loan).gradient(n + 1);
        let mut j = grad[..n].to_vec();
        if self.mode == ProfitJacobian::Implicit {
            let dr = optimal_rate_jacobian(theta, tstar, &self.problem, r)?;
            for (jk, dk) in j.iter_mut().zip(dr) {
                *jk += grad[n] * dk;
            }
        }
        Ok(row(j))
    }
}

/// User target built from one expression per output component, with
/// variables `theta1..`, `x1..` and `tstar1..`; Jacobian by forward mode.
#[derive(Debug, Clone)]
pub struct CustomTarget {
    exprs: Vec<Expr>,
    source: Vec<String>,
}

impl CustomTarget {
    pub fn parse<S: AsRef<str>>(sources: &[S]) -> Result<Self> {
        if sources.is_empty() {
            return Err(Error::Config("custom target needs at least one expression".into()));
        }
        let exprs = sources
            .iter()
            .map(|s| Expr::parse(s.as_ref(), &["theta", "x", "tstar"]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            exprs,
            source: sources.iter().map(|s| s.as_ref().to_string()).collect(),
        })
    }

    fn bound<'a>(x: &'a [f64], tstar: &'a [f64]) -> BTreeMap<&'static str, &'a [f64]> {
        let mut m = BTreeMap::new();
        m.insert("x", x);
        m.insert("tstar", tstar);
        m
    }

    fn check(&self, x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<()> {
        for e in &self.exprs {
            for (group, len) in [("theta", theta.len()), ("x", x.len()), ("tstar", tstar.len())] {
                let need = e.max_index(group);
                if need > len {
                    return Err(Error::IndexOutOfRange { index: need, len });
                }
            }
        }
        Ok(())
    }
}

impl Target for CustomTarget {
    fn name(&self) -> String {
        format!("custom:{}", self.source.join(";"))
    }
    fn dim(&self) -> usize {
        self.exprs.len()
    }
    fn eval(&self, x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Vec<f64>> {
        self.check(x, theta, tstar)?;
        let data = Self::bound(x, tstar);
        let b = Bindings {
            active: ("theta", theta),
            data: &data,
        };
        self.exprs.iter().map(|e| e.eval(&b)).collect()
    }
    fn jac(&self, x: &[f64], theta: &[f64], tstar: &[f64]) -> Result<Mat> {
        self.check(x, theta, tstar)?;
        let data = Self::bound(x, tstar);
        let seeded = Dual::seed(theta);
        let b = Bindings {
            active: ("theta", seeded.as_slice()),
            data: &data,
        };
        let n = theta.len();
        let mut out = Vec::with_capacity(self.exprs.len() * n);
        for e in &self.exprs {
            out.extend(e.eval(&b)?.gradient(n));
        }
        Mat::new(self.exprs.len(), n, out)
    }
}

/// Everything needed to resolve a target key.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TargetOptions {
    #[serde(default)]
    pub rate: Option<RateProblem>,
    #[serde(default)]
    pub loan: Option<f64>,
    #[serde(default)]
    pub profit_jacobian: ProfitJacobian,
    #[serde(default)]
    pub expressions: Vec<String>,
}

fn parse_index(key: &str, arg: Option<&str>) -> Result<usize> {
    let a = arg.ok_or_else(|| Error::Config(format!("target `{key}` needs an index")))?;
    a.parse()
        .map_err(|_| Error::Config(format!("target `{key}`: bad index `{a}`")))
}

/// Builds a target from its key and checks it against the loss.
pub fn target_from_key(key: &str, loss: &dyn LossModel, opts: &TargetOptions) -> Result<SharedTarget> {
    let dtheta = loss.dims().dtheta;
    let (head, arg) = match key.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (key, None),
    };
    let glm_link = || {
        loss.link().ok_or_else(|| Error::LinkMismatch {
            expected: "identity or logistic".into(),
            found: loss.key().into(),
        })
    };
    let rate_problem = || {
        opts.rate
            .clone()
            .ok_or_else(|| Error::Config(format!("target `{key}` needs a `rate` block")))
    };
    let t: SharedTarget = match head {
        "coef" => Arc::new(Coefficient::new(parse_index(key, arg)?, dtheta)?),
        "ame" => Arc::new(MarginalEffect::new(glm_link()?, parse_index(key, arg)?, dtheta)?),
        "acme" => Arc::new(MarginalEffectChange::new(parse_index(key, arg)?, dtheta)?),
        "elasticity" => Arc::new(Elasticity::new(parse_index(key, arg)?, dtheta)?),
        "wtp" => Arc::new(WillingnessToPay::new(parse_index(key, arg)?, dtheta)?),
        "opt_rate" => {
            let p = rate_problem()?;
            p.rate(dtheta)?;
            Arc::new(OptimalRate::new(p))
        }
        "profit_at_opt" => {
            let p = rate_problem()?;
            p.rate(dtheta)?;
            let loan = opts
                .loan
                .ok_or_else(|| Error::Config("profit_at_opt needs `loan`".into()))?;
            Arc::new(ProfitAtOptimum::new(p, loan).with_jacobian(opts.profit_jacobian))
        }
        "custom" => Arc::new(CustomTarget::parse(&opts.expressions)?),
        _ => return Err(Error::UnknownKey(key.to_string())),
    };
    t.check_loss(loss)?;
    Ok(t)
}
