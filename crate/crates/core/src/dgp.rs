//! Simulation designs with known `θ₀(x)` and `μ₀`, and the coverage harness.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, DatasetMeta};
use crate::error::{Error, Result};
use crate::inference::{cross_fit, mix, InferenceConfig, KnownHessian, Pipeline, ProjectorConfig, ThetaSpec};
use crate::loss::{loss_from_key, SharedLoss};
use crate::net::ParamFn;
use crate::numerics::special::logistic;
use crate::numerics::Mat;
use crate::projector::{Marginal, ProjectedHessian, Quadrature, Regularization, TreatmentDistribution, DEFAULT_DRAWS};
use crate::targets::{target_from_key, DefaultSpec, RateProblem, SharedTarget, TargetOptions};

pub const DGP_SCHEMA: &str = "hinf.dgp/1";
pub const COVERAGE_SCHEMA: &str = "hinf.coverage/1";
pub const TRUTH_DRAWS: usize = 1_000_000;
pub const MIN_REPLICATIONS: usize = 50;

fn one() -> f64 {
    1.0
}

/// One component of `θ₀(x)`, drawn from a fixed library.
///
/// | kind          | value                              |
/// |---------------|------------------------------------|
/// | `constant`    | `offset`                           |
/// | `affine`      | `offset + Σ coef_j x_j`            |
/// | `sine`        | `offset + scale·sin(π·freq·x_c)`   |
/// | `quadratic`   | `offset + scale·x_c²`              |
/// | `interaction` | `offset + scale·x_a·x_b`           |
/// | `radial`      | `offset + scale·exp(−freq·‖x‖²)`   |
///
/// Coordinates are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formula {
    pub kind: String,
    #[serde(default)]
    pub offset: f64,
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default = "one")]
    pub freq: f64,
    #[serde(default)]
    pub coef: Vec<f64>,
    #[serde(default)]
    pub coords: Vec<usize>,
}

impl Formula {
    fn base(kind: &str, offset: f64) -> Self {
        Self {
            kind: kind.into(),
            offset,
            scale: 1.0,
            freq: 1.0,
            coef: Vec::new(),
            coords: Vec::new(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self::base("constant", c)
    }

    pub fn affine(offset: f64, coef: &[f64]) -> Self {
        Self {
            coef: coef.to_vec(),
            ..Self::base("affine", offset)
        }
    }

    pub fn sine(offset: f64, scale: f64, coord: usize) -> Self {
        Self {
            scale,
            coords: vec![coord],
            ..Self::base("sine", offset)
        }
    }

    pub fn quadratic(offset: f64, scale: f64, coord: usize) -> Self {
        Self {
            scale,
            coords: vec![coord],
            ..Self::base("quadratic", offset)
        }
    }

    pub fn interaction(offset: f64, scale: f64, a: usize, b: usize) -> Self {
        Self {
            scale,
            coords: vec![a, b],
            ..Self::base("interaction", offset)
        }
    }

    pub fn radial(offset: f64, scale: f64, freq: f64) -> Self {
        Self {
            scale,
            freq,
            ..Self::base("radial", offset)
        }
    }

    /// Checks the key and coordinates against `dx`.
    pub fn validate(&self, dx: usize) -> Result<()> {
        let coords = match self.kind.as_str() {
            "constant" | "radial" => 0,
            "affine" => {
                if self.coef.len() > dx {
                    return Err(Error::dim("affine formula coefficients", dx, self.coef.len()));
                }
                0
            }
            "sine" | "quadratic" => 1,
            "interaction" => 2,
            other => return Err(Error::UnknownFormulaKey(other.to_string())),
        };
        if self.coords.len() != coords {
            return Err(Error::Config(format!(
                "formula `{}` takes {coords} coordinate(s), got {}",
                self.kind,
                self.coords.len()
            )));
        }
        for &c in &self.coords {
            if c == 0 || c > dx {
                return Err(Error::IndexOutOfRange { index: c, len: dx });
            }
        }
        Ok(())
    }

    /// Supremum of `|value|` over `[−1, 1]^dx`.
    pub fn bound(&self) -> f64 {
        let o = self.offset.abs();
        match self.kind.as_str() {
            "affine" => o + self.coef.iter().map(|c| c.abs()).sum::<f64>(),
            "constant" => o,
            _ => o + self.scale.abs(),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let c = |k: usize| x[self.coords[k] - 1];
        self.offset
            + match self.kind.as_str() {
                "affine" => self.coef.iter().zip(x).map(|(a, b)| a * b).sum(),
                "sine" => self.scale * (std::f64::consts::PI * self.freq * c(0)).sin(),
                "quadratic" => self.scale * c(0) * c(0),
                "interaction" => self.scale * c(0) * c(1),
                "radial" => self.scale * (-self.freq * x.iter().map(|v| v * v).sum::<f64>()).exp(),
                _ => 0.0,
            }
    }
}

/// `θ₀(x)` as a vector of library formulas.
#[derive(Debug, Clone)]
pub struct FormulaParams(pub Vec<Formula>);

impl ParamFn for FormulaParams {
    fn dtheta(&self) -> usize {
        self.0.len()
    }

    fn eval_rows(&self, x: &Mat) -> Result<Mat> {
        let mut out = Mat::zeros(x.rows(), self.0.len());
        for i in 0..x.rows() {
            for (k, f) in self.0.iter().enumerate() {
                out[(i, k)] = f.eval(x.row(i));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreatmentDesign {
    /// `T ~ F_T` independent of `X`.
    Randomized { dist: TreatmentDistribution },
    /// `T = (1, D)` with `D ~ Bernoulli(p(x))`,
    /// `p(x) = 0.1 + 0.8·G(index(x))`.
    Confounded { index: Formula },
}

impl TreatmentDesign {
    pub fn dt(&self) -> usize {
        match self {
            TreatmentDesign::Randomized { dist } => dist.dim(),
            TreatmentDesign::Confounded { .. } => 2,
        }
    }
}

pub fn bounded_propensity(index: f64) -> f64 {
    0.1 + 0.8 * logistic(index)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeModel {
    /// `y = θ't + sd·ε`, `ε ~ N(0, 1)`.
    Linear { sd: f64 },
    /// `y ~ Bernoulli(G(θ't))`.
    Logit,
}

impl OutcomeModel {
    pub fn loss_key(self) -> &'static str {
        match self {
            OutcomeModel::Linear { .. } => "linear",
            OutcomeModel::Logit => "logit",
        }
    }
}

fn truth_draws() -> usize {
    TRUTH_DRAWS
}

/// The functional whose population value the truth bundle reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthTarget {
    pub key: String,
    pub tstar: Vec<f64>,
    #[serde(default)]
    pub options: TargetOptions,
    #[serde(default = "truth_draws")]
    pub draws: usize,
}

fn default_bound() -> f64 {
    crate::net::DEFAULT_BOUND
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DgpSpec {
    pub name: String,
    pub dx: usize,
    /// Leading covariates that are continuous on `[−1, 1]`; the rest are
    /// binary in `{0, 1}`.
    pub dc: usize,
    pub theta: Vec<Formula>,
    pub treatment: TreatmentDesign,
    pub outcome: OutcomeModel,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub target: Option<TruthTarget>,
    /// Every formula must stay within `±bound`.
    #[serde(default = "default_bound")]
    pub bound: f64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dc > self.dx {
            return Err(Error::Config(format!("dc = {} exceeds dx = {}", self.dc, self.dx)));
        }
        if self.n == 0 {
            return Err(Error::Config("n must be positive".into()));
        }
        for f in &self.theta {
            f.validate(self.dx)?;
            if f.bound() > self.bound {
                return Err(Error::Config(format!(
                    "formula `{}` reaches {} beyond the bound {}",
                    f.kind,
                    f.bound(),
                    self.bound
                )));
            }
        }
        match &self.treatment {
            TreatmentDesign::Randomized { dist } => dist.validate()?,
            TreatmentDesign::Confounded { index } => index.validate(self.dx)?,
        }
        if self.treatment.dt() != self.theta.len() {
            return Err(Error::dim("treatment width vs θ₀ components", self.theta.len(), self.treatment.dt()));
        }
        if let OutcomeModel::Linear { sd } = self.outcome {
            if !(sd >= 0.0) {
                return Err(Error::Config("outcome sd must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn theta0(&self) -> FormulaParams {
        FormulaParams(self.theta.clone())
    }

    pub fn loss(&self) -> Result<SharedLoss> {
        loss_from_key(self.outcome.loss_key(), self.treatment.dt(), None, None)
    }

    pub fn target(&self) -> Result<Option<(SharedTarget, Vec<f64>)>> {
        let Some(tt) = &self.target else {
            return Ok(None);
        };
        let loss = self.loss()?;
        Ok(Some((target_from_key(&tt.key, loss.as_ref(), &tt.options)?, tt.tstar.clone())))
    }

    pub fn propensity(&self, x: &[f64]) -> Option<f64> {
        match &self.treatment {
            TreatmentDesign::Confounded { index } => Some(bounded_propensity(index.eval(x))),
            TreatmentDesign::Randomized { .. } => None,
        }
    }

    fn draw_x(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..self.dx)
            .map(|j| {
                if j < self.dc {
                    rng.gen_range(-1.0..1.0)
                } else {
                    f64::from(u8::from(rng.gen_bool(0.5)))
                }
            })
            .collect()
    }

    /// `L(x, θ) = E[ℓ_θθ | x]` implied by the design.
    pub fn true_hessian(&self) -> Result<KnownHessian> {
        let loss = self.loss()?;
        match &self.treatment {
            TreatmentDesign::Randomized { dist } => {
                let ph = ProjectedHessian::randomized(
                    Quadrature::new(dist, DEFAULT_DRAWS, mix(self.seed, 0x7))?,
                    loss,
                    Regularization::None,
                )?;
                Ok(Arc::new(move |x: &[f64], th: &[f64]| ph.eval(x, th)))
            }
            TreatmentDesign::Confounded { index } => {
                let index = index.clone();
                Ok(Arc::new(move |x: &[f64], th: &[f64]| {
                    let p = bounded_propensity(index.eval(x));
                    let y = loss.placeholder_y();
                    let h0 = loss.hess(&y, &[1.0, 0.0], th)?;
                    let h1 = loss.hess(&y, &[1.0, 1.0], th)?;
                    Ok(h0.scale(1.0 - p).add(&h1.scale(p)))
                }))
            }
        }
    }
}

/// What is known about a simulated sample.
#[derive(Debug, Clone)]
pub struct Truth {
    /// `θ₀(xᵢ)`, row-aligned with the data.
    pub theta: Mat,
    pub propensity: Option<Vec<f64>>,
    pub mu0: Option<Mu0>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mu0 {
    pub value: Vec<f64>,
    /// Monte Carlo standard error of `value`.
    pub se: Vec<f64>,
    pub draws: usize,
    /// Draws where the target was undefined.
    pub skipped: usize,
}

/// Draws a sample without computing `μ₀`.
pub fn sample(spec: &DgpSpec) -> Result<(Dataset, Truth)> {
    spec.validate()?;
    let (n, dx, dt) = (spec.n, spec.dx, spec.treatment.dt());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x = Mat::zeros(n, dx);
    let mut t = Mat::zeros(n, dt);
    let mut y = Mat::zeros(n, 1);
    let mut theta = Mat::zeros(n, dt);
    let mut prop = Vec::new();
    for i in 0..n {
        let xi = spec.draw_x(&mut rng);
        let ti = match &spec.treatment {
            TreatmentDesign::Randomized { dist } => dist.sample(&mut rng),
            TreatmentDesign::Confounded { index } => {
                let p = bounded_propensity(index.eval(&xi));
                prop.push(p);
                vec![1.0, f64::from(u8::from(rng.gen_bool(p)))]
            }
        };
        let th: Vec<f64> = spec.theta.iter().map(|f| f.eval(&xi)).collect();
        let u: f64 = th.iter().zip(&ti).map(|(a, b)| a * b).sum();
        y[(i, 0)] = match spec.outcome {
            OutcomeModel::Linear { sd } => {
                let e: f64 = rng.sample(StandardNormal);
                u + sd * e
            }
            OutcomeModel::Logit => f64::from(u8::from(rng.gen_bool(logistic(u)))),
        };
        x.row_mut(i).copy_from_slice(&xi);
        t.row_mut(i).copy_from_slice(&ti);
        theta.row_mut(i).copy_from_slice(&th);
    }
    let mut ds = Dataset::new(y, t, x)?;
    ds.meta = DatasetMeta {
        y_names: vec!["y".into()],
        t_names: std::iter::once("(intercept)".to_string())
            .chain((1..dt).map(|j| format!("t{j}")))
            .collect(),
        x_names: (1..=dx).map(|j| format!("x{j}")).collect(),
        intercept: true,
        ..DatasetMeta::default()
    };
    let propensity = matches!(spec.treatment, TreatmentDesign::Confounded { .. }).then_some(prop);
    Ok((
        ds,
        Truth {
            theta,
            propensity,
            mu0: None,
        },
    ))
}

/// Draws a sample and the population value of the spec's target.
pub fn generate(spec: &DgpSpec) -> Result<(Dataset, Truth)> {
    let (ds, mut truth) = sample(spec)?;
    truth.mu0 = true_mu0(spec)?;
    Ok((ds, truth))
}

const MU0_CHUNK: usize = 10_000;

/// `E[H(X, θ₀(X); t*)]` by simulation over fresh covariate draws.
pub fn true_mu0(spec: &DgpSpec) -> Result<Option<Mu0>> {
    spec.validate()?;
    let Some((target, tstar)) = spec.target()? else {
        return Ok(None);
    };
    let draws = spec.target.as_ref().map_or(TRUTH_DRAWS, |t| t.draws);
    let d = target.dim();
    let chunks = draws.div_ceil(MU0_CHUNK);
    let base = mix(spec.seed, 0xC0FFEE);
    // Per-chunk sums of H and H² keep the result independent of scheduling.
    let parts: Vec<(Vec<f64>, Vec<f64>, usize, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(base, c as u64));
            let m = MU0_CHUNK.min(draws - c * MU0_CHUNK);
            let mut s = vec![0.0; d];
            let mut ss = vec![0.0; d];
            let (mut used, mut skipped) = (0, 0);
            for _ in 0..m {
                let x = spec.draw_x(&mut rng);
                let th: Vec<f64> = spec.theta.iter().map(|f| f.eval(&x)).collect();
                match target.eval(&x, &th, &tstar) {
                    Ok(h) => {
                        for k in 0..d {
                            s[k] += h[k];
                            ss[k] += h[k] * h[k];
                        }
                        used += 1;
                    }
                    Err(e) if crate::inference::is_observation_level(&e) => skipped += 1,
                    Err(e) => return Err(e),
                }
            }
            Ok((s, ss, used, skipped))
        })
        .collect::<Result<_>>()?;
    let used: usize = parts.iter().map(|p| p.2).sum();
    let skipped: usize = parts.iter().map(|p| p.3).sum();
    if used < 2 {
        return Err(Error::DegenerateDesign("target undefined on almost every draw".into()));
    }
    let m = used as f64;
    let mut value = vec![0.0; d];
    let mut se = vec![0.0; d];
    for k in 0..d {
        let s: f64 = parts.iter().map(|p| p.0[k]).sum();
        let ss: f64 = parts.iter().map(|p| p.1[k]).sum();
        let mean = s / m;
        value[k] = mean;
        let var = ((ss - m * mean * mean) / (m - 1.0)).max(0.0);
        se[k] = (var / m).sqrt();
    }
    Ok(Some(Mu0 {
        value,
        se,
        draws,
        skipped,
    }))
}

/// Built-in designs: `linear-hetero`, `randomized-logit`, `smooth-logit`
/// and `lending`.
pub fn preset(name: &str, n: usize, seed: u64) -> Result<DgpSpec> {
    let uniform_tau = TreatmentDistribution::Product {
        intercept: true,
        marginals: vec![Marginal::Uniform { low: -1.0, high: 1.0 }],
    };
    let spec = match name {
        "linear-hetero" => DgpSpec {
            name: name.into(),
            dx: 2,
            dc: 2,
            theta: vec![Formula::affine(0.5, &[1.0, 0.0]), Formula::sine(1.0, 0.5, 1)],
            treatment: TreatmentDesign::Confounded {
                index: Formula::affine(0.0, &[1.5, 1.0]),
            },
            outcome: OutcomeModel::Linear { sd: 1.0 },
            n,
            seed,
            target: Some(TruthTarget {
                key: "coef:2".into(),
                tstar: vec![1.0, 1.0],
                options: TargetOptions::default(),
                draws: TRUTH_DRAWS,
            }),
            bound: default_bound(),
        },
        "randomized-logit" => DgpSpec {
            name: name.into(),
            dx: 2,
            dc: 2,
            theta: vec![Formula::sine(0.0, 0.8, 1), Formula::quadratic(0.7, 0.5, 2)],
            treatment: TreatmentDesign::Randomized {
                dist: TreatmentDistribution::Product {
                    intercept: true,
                    marginals: vec![Marginal::Categorical {
                        values: vec![-1.0, 0.0, 1.0],
                        probs: vec![0.25, 0.5, 0.25],
                    }],
                },
            },
            outcome: OutcomeModel::Logit,
            n,
            seed,
            target: Some(TruthTarget {
                key: "ame:2".into(),
                tstar: vec![1.0, 0.0],
                options: TargetOptions::default(),
                draws: TRUTH_DRAWS,
            }),
            bound: default_bound(),
        },
        "smooth-logit" => DgpSpec {
            name: name.into(),
            dx: 1,
            dc: 1,
            theta: vec![Formula::sine(0.0, 1.0, 1), Formula::quadratic(1.0, 0.5, 1)],
            treatment: TreatmentDesign::Randomized { dist: uniform_tau },
            outcome: OutcomeModel::Logit,
            n,
            seed,
            target: Some(TruthTarget {
                key: "ame:2".into(),
                tstar: vec![1.0, 0.0],
                options: TargetOptions::default(),
                draws: TRUTH_DRAWS,
            }),
            bound: default_bound(),
        },
        "lending" => DgpSpec {
            name: name.into(),
            dx: 2,
            dc: 2,
            theta: vec![
                Formula::affine(1.0, &[0.5, 0.0]),
                Formula::sine(0.0, 0.3, 2),
                Formula::constant(-0.1),
            ],
            treatment: TreatmentDesign::Randomized {
                dist: TreatmentDistribution::Product {
                    intercept: true,
                    marginals: vec![Marginal::Bernoulli { p: 0.5 }, Marginal::Uniform { low: 5.0, high: 20.0 }],
                },
            },
            outcome: OutcomeModel::Logit,
            n,
            seed,
            target: Some(TruthTarget {
                key: "opt_rate".into(),
                tstar: vec![1.0, 1.0, 0.0],
                options: TargetOptions {
                    rate: Some(RateProblem::new(DefaultSpec::new(-3.0, 0.05), 3)),
                    loan: Some(1.0),
                    ..TargetOptions::default()
                },
                draws: TRUTH_DRAWS,
            }),
            bound: default_bound(),
        },
        other => return Err(Error::UnknownKey(other.to_string())),
    };
    Ok(spec)
}

/// Pipeline settings shared by every replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub replications: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    pub theta: ThetaSpec,
    pub projector: ProjectorConfig,
    #[serde(default)]
    pub regularization: Regularization,
    #[serde(default)]
    pub inference: InferenceConfig,
}

fn default_level() -> f64 {
    0.95
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub index: usize,
    pub data_seed: u64,
    pub mu_hat: Option<Vec<f64>>,
    pub ci: Option<Vec<[f64; 2]>>,
    pub covered: Option<bool>,
    pub plugin_mu: Option<Vec<f64>>,
    pub plugin_covered: Option<bool>,
    pub max_cond_l: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub schema: String,
    pub design: String,
    pub replications: usize,
    pub nominal_level: f64,
    /// Share of successful replications whose interval covers `μ₀` in every
    /// component.
    pub coverage: f64,
    pub plugin_coverage: Option<f64>,
    pub mean_ci_length: f64,
    pub mean_abs_error: f64,
    pub failed: usize,
    pub mu0: Mu0,
    pub records: Vec<ReplicationRecord>,
}

fn covers(ci: &[[f64; 2]], mu0: &[f64]) -> bool {
    ci.iter().zip(mu0).all(|(c, m)| c[0] <= *m && *m <= c[1])
}

fn run_replication(spec: &DgpSpec, cfg: &CoverageConfig, index: usize, mu0: &Mu0) -> ReplicationRecord {
    let data_seed = mix(spec.seed, 1 + index as u64);
    let mut record = ReplicationRecord {
        index,
        data_seed,
        mu_hat: None,
        ci: None,
        covered: None,
        plugin_mu: None,
        plugin_covered: None,
        max_cond_l: None,
        error: None,
    };
    let attempt = || -> Result<crate::inference::InferenceResult> {
        let rep = DgpSpec {
            seed: data_seed,
            ..spec.clone()
        };
        let (data, _) = sample(&rep)?;
        let (target, tstar) = spec
            .target()?
            .ok_or_else(|| Error::Config("coverage needs a target in the design".into()))?;
        let truth = matches!(cfg.projector, ProjectorConfig::Truth)
            .then(|| spec.true_hessian())
            .transpose()?;
        let pipeline = Pipeline {
            loss: spec.loss()?,
            target,
            tstar,
            theta: cfg.theta.clone(),
            projector: cfg.projector.resolve(&data, truth)?,
            regularization: cfg.regularization,
            inference: InferenceConfig {
                seed: mix(cfg.inference.seed, index as u64),
                levels: vec![cfg.level],
                parallel: false,
                ..cfg.inference.clone()
            },
        };
        cross_fit(&data, &pipeline)
    };
    match attempt() {
        Ok(r) => {
            let ci = r.confidence_interval(cfg.level);
            record.covered = Some(covers(&ci, &mu0.value));
            record.ci = Some(ci);
            record.mu_hat = Some(r.mu.clone());
            record.max_cond_l = Some(r.diagnostics.max_cond_l);
            if let Some(p) = &r.plugin {
                let pci = &p.ci[&crate::inference::level_key(cfg.level)];
                record.plugin_covered = Some(covers(pci, &mu0.value));
                record.plugin_mu = Some(p.mu.clone());
            }
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Runs the full cross-fit pipeline on `replications` independent samples.
/// Failed replications are recorded and excluded from the rates.
pub fn coverage_experiment(spec: &DgpSpec, cfg: &CoverageConfig) -> Result<CoverageReport> {
    if cfg.replications < MIN_REPLICATIONS {
        return Err(Error::Config(format!(
            "coverage needs at least {MIN_REPLICATIONS} replications, got {}",
            cfg.replications
        )));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) {
        return Err(Error::Config(format!("level {} outside (0, 1)", cfg.level)));
    }
    let mu0 = true_mu0(spec)?.ok_or_else(|| Error::Config("coverage needs a target in the design".into()))?;
    let records: Vec<ReplicationRecord> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(spec, cfg, r, &mu0))
        .collect();
    let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| r.error.is_none()).collect();
    let failed = records.len() - ok.len();
    let m = ok.len().max(1) as f64;
    let rate = |f: &dyn Fn(&ReplicationRecord) -> Option<bool>| {
        ok.iter().filter(|r| f(r) == Some(true)).count() as f64 / m
    };
    let coverage = rate(&|r| r.covered);
    let plugin_coverage = cfg.inference.report_plugin.then(|| rate(&|r| r.plugin_covered));
    let mean_ci_length = ok
        .iter()
        .map(|r| r.ci.as_ref().map_or(0.0, |c| c[0][1] - c[0][0]))
        .sum::<f64>()
        / m;
    let mean_abs_error = ok
        .iter()
        .map(|r| r.mu_hat.as_ref().map_or(0.0, |v| (v[0] - mu0.value[0]).abs()))
        .sum::<f64>()
        / m;
    Ok(CoverageReport {
        schema: COVERAGE_SCHEMA.into(),
        design: spec.name.clone(),
        replications: cfg.replications,
        nominal_level: cfg.level,
        coverage,
        plugin_coverage,
        mean_ci_length,
        mean_abs_error,
        failed,
        mu0,
        records,
    })
}
