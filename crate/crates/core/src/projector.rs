//! The projected hessian `L(x) = E[ℓ_θθ(Y, T, θ(x)) | X = x]`.
//!
//! Three routes: a network regression of the hessian entries on `x`, an
//! exact or simulated integral over a known treatment distribution
//! (randomized designs), and the conditional-mean shortcut
//! `L(x) = E[Ġ(θ(x)'T)·T·Tᵀ | x]`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{Link, LossDims, LossModel};
use crate::net::{NetConfig, ParamFn, StructuredNet, TrainConfig};
use crate::numerics::{condition_number, sym_eigen, Mat};

/// Warning threshold for `cond(L̂(x))`.
pub const COND_WARN: f64 = 1e8;
/// Default number of Monte Carlo draws for continuous treatment marginals.
pub const DEFAULT_DRAWS: usize = 100_000;
/// Largest product support enumerated exactly.
const MAX_EXACT_SUPPORT: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regularization {
    None,
    Ridge { lambda: f64 },
    EigFloor { lambda: f64 },
}

impl Default for Regularization {
    fn default() -> Self {
        Regularization::EigFloor { lambda: 1e-8 }
    }
}

impl fmt::Display for Regularization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regularization::None => write!(f, "reg:none"),
            Regularization::Ridge { lambda } => write!(f, "reg:ridge:{lambda}"),
            Regularization::EigFloor { lambda } => write!(f, "reg:eig_floor:{lambda}"),
        }
    }
}

impl FromStr for Regularization {
    type Err = Error;

    /// Accepts `reg:none`, `reg:ridge:λ`, `reg:eig_floor:λ` (the `reg:`
    /// prefix is optional).
    fn from_str(s: &str) -> Result<Self> {
        let body = s.strip_prefix("reg:").unwrap_or(s);
        let lambda = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .ok()
                .filter(|l| l.is_finite() && *l >= 0.0)
                .ok_or_else(|| Error::Config(format!("bad regularization strength in `{s}`")))
        };
        match body.split_once(':') {
            None if body == "none" => Ok(Regularization::None),
            Some(("ridge", v)) => Ok(Regularization::Ridge { lambda: lambda(v)? }),
            Some(("eig_floor", v)) => Ok(Regularization::EigFloor { lambda: lambda(v)? }),
            _ => Err(Error::UnknownKey(s.to_string())),
        }
    }
}

/// Applies a regularization scheme to a symmetric matrix.
pub fn regularize(l: &Mat, scheme: Regularization) -> Mat {
    match scheme {
        Regularization::None => l.clone(),
        Regularization::Ridge { lambda } => l.add_scaled_identity(lambda),
        Regularization::EigFloor { lambda } => {
            let (vals, vecs) = sym_eigen(l);
            if vals.iter().all(|&v| v >= lambda) {
                return l.clone();
            }
            let clipped: Vec<f64> = vals.iter().map(|&v| v.max(lambda)).collect();
            crate::numerics::dense::from_eigen(&clipped, &vecs).symmetrize()
        }
    }
}

/// One coordinate of a product treatment distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Constant { value: f64 },
    Bernoulli { p: f64 },
    Categorical { values: Vec<f64>, probs: Vec<f64> },
    Uniform { low: f64, high: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Marginal {
    fn support(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Marginal::Constant { value } => Some(vec![(*value, 1.0)]),
            Marginal::Bernoulli { p } => Some(vec![(0.0, 1.0 - p), (1.0, *p)]),
            Marginal::Categorical { values, probs } => {
                Some(values.iter().copied().zip(probs.iter().copied()).collect())
            }
            Marginal::Uniform { .. } | Marginal::Normal { .. } => None,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Marginal::Constant { value } => *value,
            Marginal::Bernoulli { p } => f64::from(u8::from(rng.gen_bool(*p))),
            Marginal::Categorical { values, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("non-empty categorical")
            }
            Marginal::Uniform { low, high } => rng.gen_range(*low..*high),
            Marginal::Normal { mean, sd } => Normal::new(*mean, *sd).expect("valid normal").sample(rng),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Marginal::Bernoulli { p } if !(0.0..=1.0).contains(p) => {
                Err(Error::Config(format!("bernoulli p = {p} outside [0, 1]")))
            }
            Marginal::Categorical { values, probs } => check_probs(values.len(), probs),
            Marginal::Uniform { low, high } if !(low < high) => {
                Err(Error::Config("uniform marginal needs low < high".into()))
            }
            Marginal::Normal { sd, .. } if !(*sd > 0.0) => Err(Error::Config("normal marginal needs sd > 0".into())),
            _ => Ok(()),
        }
    }
}

fn check_probs(len: usize, probs: &[f64]) -> Result<()> {
    if len == 0 || probs.len() != len {
        return Err(Error::Config("support and probabilities must be non-empty and aligned".into()));
    }
    if probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Config("probabilities must be non-negative".into()));
    }
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(Error::Config(format!("probabilities sum to {s}, not 1")));
    }
    Ok(())
}

/// Distribution `F_T` of a treatment assigned independently of `X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatmentDistribution {
    /// Equally weighted sample of full treatment vectors.
    Empirical { sample: Vec<Vec<f64>> },
    /// Finite support of full treatment vectors.
    Discrete { support: Vec<Vec<f64>>, probs: Vec<f64> },
    /// Independent coordinates, optionally preceded by an intercept of 1.
    Product {
        intercept: bool,
        marginals: Vec<Marginal>,
    },
}

impl TreatmentDistribution {
    pub fn validate(&self) -> Result<()> {
        match self {
            TreatmentDistribution::Empirical { sample } => {
                if sample.is_empty() {
                    return Err(Error::Config("empirical treatment sample is empty".into()));
                }
                Ok(())
            }
            TreatmentDistribution::Discrete { support, probs } => check_probs(support.len(), probs),
            TreatmentDistribution::Product { marginals, .. } => marginals.iter().try_for_each(Marginal::validate),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            TreatmentDistribution::Empirical { sample } => sample.first().map_or(0, Vec::len),
            TreatmentDistribution::Discrete { support, .. } => support.first().map_or(0, Vec::len),
            TreatmentDistribution::Product { intercept, marginals } => marginals.len() + usize::from(*intercept),
        }
    }

    /// Exact weighted support when the distribution is finite.
    pub fn exact_support(&self) -> Option<(Vec<Vec<f64>>, Vec<f64>)> {
        match self {
            TreatmentDistribution::Empirical { sample } => {
                let w = 1.0 / sample.len() as f64;
                Some((sample.clone(), vec![w; sample.len()]))
            }
            TreatmentDistribution::Discrete { support, probs } => Some((support.clone(), probs.clone())),
            TreatmentDistribution::Product { intercept, marginals } => {
                let supports: Vec<Vec<(f64, f64)>> = marginals.iter().map(Marginal::support).collect::<Option<_>>()?;
                let size: usize = supports.iter().map(Vec::len).product();
                if size > MAX_EXACT_SUPPORT {
                    return None;
                }
                let start = if *intercept { vec![1.0] } else { vec![] };
                let mut pts = vec![(start, 1.0)];
                for s in &supports {
                    pts = pts
                        .into_iter()
                        .flat_map(|(v, w)| {
                            s.iter().map(move |&(a, p)| {
                                let mut v = v.clone();
                                v.push(a);
                                (v, w * p)
                            })
                        })
                        .collect();
                }
                Some(pts.into_iter().unzip())
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            TreatmentDistribution::Empirical { sample } => sample[rng.gen_range(0..sample.len())].clone(),
            TreatmentDistribution::Discrete { support, probs } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for (s, p) in support.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return s.clone();
                    }
                }
                support.last().expect("non-empty support").clone()
            }
            TreatmentDistribution::Product { intercept, marginals } => {
                let mut v = Vec::with_capacity(marginals.len() + 1);
                if *intercept {
                    v.push(1.0);
                }
                v.extend(marginals.iter().map(|m| m.sample(rng)));
                v
            }
        }
    }
}

/// Treatment points and weights used to integrate over `F_T`.
#[derive(Debug, Clone)]
pub struct Quadrature {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// Simulated (equal weights) rather than exact.
    simulated: bool,
}

impl Quadrature {
    pub fn new(dist: &TreatmentDistribution, draws: usize, seed: u64) -> Result<Self> {
        dist.validate()?;
        if let Some((points, weights)) = dist.exact_support() {
            return Ok(Self {
                points,
                weights,
                simulated: false,
            });
        }
        if draws < 2 {
            return Err(Error::Config("Monte Carlo projection needs at least 2 draws".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = (0..draws).map(|_| dist.sample(&mut rng)).collect();
        Ok(Self {
            points,
            weights: vec![1.0 / draws as f64; draws],
            simulated: true,
        })
    }

    pub fn is_simulated(&self) -> bool {
        self.simulated
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// `E_T[ℓ_θθ(·, T, θ)]` and, for simulated integrals, the Monte Carlo
/// standard error of each entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomizedEstimate {
    pub mean: Mat,
    pub se: Option<Mat>,
}

/// Integrates the loss hessian over a known treatment distribution at a
/// fixed θ. Requires a hessian that does not involve the outcome.
pub fn compute_randomized(theta: &[f64], quad: &Quadrature, loss: &dyn LossModel) -> Result<RandomizedEstimate> {
    if !loss.hessian_free_of_y() {
        return Err(Error::FlagViolation);
    }
    let d = theta.len();
    let y = loss.placeholder_y();
    let hs = quad
        .points
        .iter()
        .map(|t| loss.hess(&y, t, theta))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = Mat::zeros(d, d);
    for (h, &w) in hs.iter().zip(&quad.weights) {
        for (m, v) in mean.as_mut_slice().iter_mut().zip(h.as_slice()) {
            *m += w * v;
        }
    }
    let se = quad.simulated.then(|| {
        let n = quad.len() as f64;
        let mut ss = vec![0.0; d * d];
        for h in &hs {
            for ((s, v), m) in ss.iter_mut().zip(h.as_slice()).zip(mean.as_slice()) {
                *s += (v - m) * (v - m);
            }
        }
        let data = ss.into_iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect();
        Mat::new(d, d, data).expect("finite standard errors")
    });
    Ok(RandomizedEstimate {
        mean: mean.symmetrize(),
        se,
    })
}

/// Squared error on every output, used to regress hessian entries on `x`.
#[derive(Debug, Clone)]
struct VechSquared {
    m: usize,
}

impl LossModel for VechSquared {
    fn key(&self) -> &str {
        "vech_squared"
    }
    fn dims(&self) -> LossDims {
        LossDims {
            dy: self.m,
            dt: 0,
            dtheta: self.m,
        }
    }
    fn value(&self, y: &[f64], _t: &[f64], theta: &[f64]) -> Result<f64> {
        Ok(0.5 * y.iter().zip(theta).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }
    fn grad(&self, y: &[f64], _t: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
        Ok(theta.iter().zip(y).map(|(b, a)| b - a).collect())
    }
    fn hess(&self, _y: &[f64], _t: &[f64], _theta: &[f64]) -> Result<Mat> {
        Ok(Mat::identity(self.m))
    }
}

/// Options for the auxiliary hessian regression.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionOptions {
    pub hidden_widths: Vec<usize>,
    pub train: TrainConfig,
    pub seed: u64,
    /// Number of bootstrap members; with more than one, predictions are the
    /// member average and the member spread is reported as a standard error.
    #[serde(default = "one")]
    pub ensemble: usize,
}

fn one() -> usize {
    1
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self {
            hidden_widths: vec![80, 40],
            train: TrainConfig::default(),
            seed: 0,
            ensemble: 1,
        }
    }
}

/// How `L(x)` is produced at evaluation time.
#[derive(Clone)]
pub enum HessianSource {
    /// Networks regressing `vech(ℓ_θθ)` on `x`.
    Regression { members: Vec<StructuredNet>, dtheta: usize },
    /// Integral over a known treatment distribution at `θ̂(x)`.
    Randomized { quad: Arc<Quadrature>, loss: Arc<dyn LossModel> },
    /// A known function of `(x, θ(x))`.
    Known(Arc<dyn Fn(&[f64], &[f64]) -> Result<Mat> + Send + Sync>),
}

impl fmt::Debug for HessianSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HessianSource::Regression { members, dtheta } => f
                .debug_struct("Regression")
                .field("members", &members.len())
                .field("dtheta", dtheta)
                .finish(),
            HessianSource::Randomized { quad, loss } => f
                .debug_struct("Randomized")
                .field("points", &quad.len())
                .field("loss", &loss.key())
                .finish(),
            HessianSource::Known(_) => f.write_str("Known"),
        }
    }
}

/// A fitted or computed `L(x)` together with its regularization.
#[derive(Debug, Clone)]
pub struct ProjectedHessian {
    pub source: HessianSource,
    pub regularization: Regularization,
    pub provenance: String,
}

impl ProjectedHessian {
    pub fn known<F>(f: F, regularization: Regularization) -> Self
    where
        F: Fn(&[f64], &[f64]) -> Result<Mat> + Send + Sync + 'static,
    {
        Self {
            source: HessianSource::Known(Arc::new(f)),
            regularization,
            provenance: format!("known;{regularization}"),
        }
    }

    pub fn randomized(quad: Quadrature, loss: Arc<dyn LossModel>, regularization: Regularization) -> Result<Self> {
        if !loss.hessian_free_of_y() {
            return Err(Error::FlagViolation);
        }
        let provenance = format!(
            "L:randomized;{};{} points;{regularization}",
            if quad.simulated { "monte_carlo" } else { "exact" },
            quad.len()
        );
        Ok(Self {
            source: HessianSource::Randomized {
                quad: Arc::new(quad),
                loss,
            },
            regularization,
            provenance,
        })
    }

    /// Unregularized `L̂` at each row of `x` (with `θ̂` at the same rows),
    /// plus per-entry standard errors when the source provides them.
    pub fn raw_rows(&self, x: &Mat, theta: &Mat) -> Result<Vec<(Mat, Option<Mat>)>> {
        match &self.source {
            HessianSource::Regression { members, dtheta } => {
                let preds = members.iter().map(|m| m.forward(x)).collect::<Result<Vec<_>>>()?;
                let b = preds.len() as f64;
                let m = preds[0].cols();
                (0..x.rows())
                    .map(|i| {
                        let mean: Vec<f64> = (0..m).map(|k| preds.iter().map(|p| p[(i, k)]).sum::<f64>() / b).collect();
                        let l = Mat::from_vech(*dtheta, &mean)?;
                        let se = if preds.len() > 1 {
                            let sd: Vec<f64> = (0..m)
                                .map(|k| {
                                    let ss: f64 = preds.iter().map(|p| (p[(i, k)] - mean[k]).powi(2)).sum();
                                    (ss / (b - 1.0)).sqrt()
                                })
                                .collect();
                            Some(Mat::from_vech(*dtheta, &sd)?)
                        } else {
                            None
                        };
                        Ok((l, se))
                    })
                    .collect()
            }
            HessianSource::Randomized { quad, loss } => (0..x.rows())
                .map(|i| {
                    let r = compute_randomized(theta.row(i), quad, loss.as_ref())?;
                    Ok((r.mean, r.se))
                })
                .collect(),
            HessianSource::Known(f) => (0..x.rows())
                .map(|i| Ok((f(x.row(i), theta.row(i))?.symmetrize(), None)))
                .collect(),
        }
    }

    /// Regularized `L̂(x)` for each row.
    pub fn eval_rows(&self, x: &Mat, theta: &Mat) -> Result<Vec<Mat>> {
        Ok(self
            .raw_rows(x, theta)?
            .into_iter()
            .map(|(l, _)| regularize(&l, self.regularization))
            .collect())
    }

    pub fn eval(&self, x: &[f64], theta: &[f64]) -> Result<Mat> {
        let xm = Mat::new(1, x.len(), x.to_vec())?;
        let tm = Mat::new(1, theta.len(), theta.to_vec())?;
        Ok(self.eval_rows(&xm, &tm)?.remove(0))
    }
}

/// Largest condition number among the given matrices.
pub fn max_condition(ls: &[Mat]) -> f64 {
    ls.iter().map(condition_number).fold(0.0, f64::max)
}

fn regress_vech(data: &Dataset, targets: Mat, dtheta: usize, opts: &RegressionOptions, label: &str) -> Result<ProjectedHessian> {
    let m = targets.cols();
    let ds = Dataset::new(targets, Mat::zeros(data.n(), 0), data.x.clone())?;
    let loss = VechSquared { m };
    let b = opts.ensemble.max(1);
    let mut members = Vec::with_capacity(b);
    for k in 0..b {
        let seed = opts.seed.wrapping_add(k as u64);
        let net = StructuredNet::new(NetConfig {
            seed,
            bound: None,
            ..NetConfig::new(data.x.cols(), opts.hidden_widths.clone(), m)
        })?;
        let train = TrainConfig {
            seed: opts.train.seed.wrapping_add(k as u64),
            ..opts.train.clone()
        };
        let fit_on = if b == 1 {
            ds.clone()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_b007);
            let idx: Vec<usize> = (0..ds.n()).map(|_| rng.gen_range(0..ds.n())).collect();
            ds.subset(&idx)
        };
        members.push(net.train(&fit_on, &loss, &train)?.0);
    }
    Ok(ProjectedHessian {
        source: HessianSource::Regression { members, dtheta },
        regularization: Regularization::default(),
        provenance: format!("{label};{b} member(s)"),
    })
}

/// Regresses the distinct entries of `ℓ_θθ(yᵢ, tᵢ, θ̂(xᵢ))` on `xᵢ`.
/// `theta` must have been fitted on data disjoint from `data`.
pub fn fit_regression(
    data: &Dataset,
    theta: &dyn ParamFn,
    loss: &dyn LossModel,
    opts: &RegressionOptions,
) -> Result<ProjectedHessian> {
    let d = loss.dims().dtheta;
    let th = theta.eval_rows(&data.x)?;
    let mut targets = Mat::zeros(data.n(), d * (d + 1) / 2);
    for i in 0..data.n() {
        let h = loss.hess(data.y.row(i), data.t.row(i), th.row(i))?;
        targets.row_mut(i).copy_from_slice(&h.vech());
    }
    regress_vech(data, targets, d, opts, "L:regression")
}

/// `L(x) = E[Ġ(θ(x)'T)·T·Tᵀ | x]` for conditional-mean losses. The linear
/// link needs no `θ̂`.
pub fn glm_closed_form(
    data: &Dataset,
    theta: Option<&dyn ParamFn>,
    loss: &dyn LossModel,
    link: Link,
    opts: &RegressionOptions,
) -> Result<ProjectedHessian> {
    if loss.link() != Some(link) {
        return Err(Error::LinkMismatch {
            expected: link.name().into(),
            found: loss.link().map_or(loss.key().to_string(), |l| l.name().to_string()),
        });
    }
    let dt = data.t.cols();
    let th = match (link, theta) {
        (Link::Identity, _) => None,
        (Link::Logistic, Some(f)) => Some(f.eval_rows(&data.x)?),
        (Link::Logistic, None) => {
            return Err(Error::Config("the logistic link needs θ̂ for the projected hessian".into()));
        }
    };
    let mut targets = Mat::zeros(data.n(), dt * (dt + 1) / 2);
    for i in 0..data.n() {
        let t = data.t.row(i);
        let w = th.as_ref().map_or(1.0, |m| link.g_dot(crate::numerics::dot(m.row(i), t)));
        let tt = Mat::outer(t, t).scale(w);
        targets.row_mut(i).copy_from_slice(&tt.vech());
    }
    regress_vech(data, targets, dt, opts, &format!("L:glm;{}", link.name()))
}

impl ProjectedHessian {
    pub fn with_regularization(mut self, r: Regularization) -> Self {
        self.regularization = r;
        self.provenance = match self.provenance.rsplit_once(";reg:") {
            Some((head, _)) => format!("{head};{r}"),
            None => format!("{};{r}", self.provenance),
        };
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::{LinearSq, LogisticNll, Tobit1};
    use crate::numerics::special::logistic;

    #[test]
    fn regularization_examples() {
        let a = Mat::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        assert_eq!(regularize(&a, "reg:ridge:0".parse().unwrap()), a);
        let d = Mat::diag(&[2.0, 1e-15]);
        let f = regularize(&d, "eig_floor:1e-6".parse().unwrap());
        assert!(f.max_abs_diff(&Mat::diag(&[2.0, 1e-6])) < 1e-15);
        assert_eq!(regularize(&a, Regularization::None), a);
        assert!(matches!("reg:lasso:1".parse::<Regularization>(), Err(Error::UnknownKey(_))));
        assert_eq!(Regularization::default().to_string(), "reg:eig_floor:0.00000001");
    }

    #[test]
    fn randomized_linear_is_second_moment() {
        let dist = TreatmentDistribution::Discrete {
            support: vec![vec![1.0, 0.0], vec![1.0, 2.0]],
            probs: vec![0.25, 0.75],
        };
        let q = Quadrature::new(&dist, 0, 0).unwrap();
        let r = compute_randomized(&[3.0, -7.0], &q, &LinearSq::new(2)).unwrap();
        assert_eq!(r.mean, Mat::from_rows(&[vec![1.0, 1.5], vec![1.5, 3.0]]).unwrap());
        assert!(r.se.is_none());
    }

    #[test]
    fn randomized_logit_at_zero() {
        let dist = TreatmentDistribution::Discrete {
            support: vec![vec![1.0, 0.0], vec![1.0, 1.0]],
            probs: vec![0.5, 0.5],
        };
        let q = Quadrature::new(&dist, 0, 0).unwrap();
        let r = compute_randomized(&[0.0, 0.0], &q, &LogisticNll::logit(2)).unwrap();
        let want = Mat::from_rows(&[vec![0.25, 0.125], vec![0.125, 0.125]]).unwrap();
        assert_eq!(r.mean, want);
    }

    #[test]
    fn randomized_logit_matches_enumeration() {
        let support = vec![vec![1.0, -1.0], vec![1.0, 0.5], vec![1.0, 2.0]];
        let probs = vec![0.2, 0.5, 0.3];
        let q = Quadrature::new(
            &TreatmentDistribution::Discrete {
                support: support.clone(),
                probs: probs.clone(),
            },
            0,
            0,
        )
        .unwrap();
        let theta = [0.4, -1.3];
        let r = compute_randomized(&theta, &q, &LogisticNll::logit(2)).unwrap();
        for a in 0..2 {
            for b in 0..2 {
                let mut want = 0.0;
                for (t, p) in support.iter().zip(&probs) {
                    let g = logistic(theta[0] * t[0] + theta[1] * t[1]);
                    want += p * g * (1.0 - g) * t[a] * t[b];
                }
                assert!((r.mean[(a, b)] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn randomized_requires_flag() {
        let q = Quadrature::new(
            &TreatmentDistribution::Empirical {
                sample: vec![vec![1.0]],
            },
            0,
            0,
        )
        .unwrap();
        assert!(matches!(
            compute_randomized(&[0.0, 1.0], &q, &Tobit1::new(1)),
            Err(Error::FlagViolation)
        ));
    }

    #[test]
    fn product_distribution_support_and_mc() {
        let dist = TreatmentDistribution::Product {
            intercept: true,
            marginals: vec![Marginal::Bernoulli { p: 0.3 }],
        };
        let (pts, w) = dist.exact_support().unwrap();
        assert_eq!(pts, vec![vec![1.0, 0.0], vec![1.0, 1.0]]);
        assert!((w[1] - 0.3).abs() < 1e-15);

        let cont = TreatmentDistribution::Product {
            intercept: true,
            marginals: vec![Marginal::Uniform { low: -1.0, high: 1.0 }],
        };
        let q = Quadrature::new(&cont, DEFAULT_DRAWS, 1).unwrap();
        assert!(q.is_simulated());
        let r = compute_randomized(&[0.0, 0.0], &q, &LinearSq::new(2)).unwrap();
        let se = r.se.unwrap();
        // E[T²] = 1/3 for U(−1, 1)
        assert!((r.mean[(1, 1)] - 1.0 / 3.0).abs() < 4.0 * se[(1, 1)]);
        assert!(se[(0, 0)] < 1e-12);
    }

    #[test]
    fn probabilities_must_sum_to_one() {
        let d = TreatmentDistribution::Discrete {
            support: vec![vec![1.0], vec![2.0]],
            probs: vec![0.5, 0.6],
        };
        assert!(matches!(d.validate(), Err(Error::Config(_))));
    }
}
