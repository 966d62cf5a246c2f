//! The orthogonal score, cross-fitting, variance and confidence intervals.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{Link, LossModel, SharedLoss};
use crate::net::{NetConfig, ParamFn, StructuredNet, TrainConfig};
use crate::numerics::special::norm_quantile;
use crate::numerics::{solve_spd, Mat};
use crate::projector::{
    fit_regression, glm_closed_form, max_condition, ProjectedHessian, Quadrature, Regularization, RegressionOptions,
    TreatmentDistribution, COND_WARN,
};
use crate::targets::{SharedTarget, Target};

pub const RESULT_SCHEMA: &str = "hinf.result/1";

/// `ψ = H − H_θ·L⁻¹·ℓ_θ` at one observation.
#[allow(clippy::too_many_arguments)]
pub fn influence_eval(
    y: &[f64],
    t: &[f64],
    x: &[f64],
    theta: &[f64],
    l: &Mat,
    loss: &dyn LossModel,
    target: &dyn Target,
    tstar: &[f64],
) -> Result<Vec<f64>> {
    let h = target.eval(x, theta, tstar)?;
    let hj = target.jac(x, theta, tstar)?;
    let g = loss.grad(y, t, theta)?;
    let v = solve_spd(l, &g)?;
    let corr = hj.matvec(&v);
    Ok(h.iter().zip(corr).map(|(a, b)| a - b).collect())
}

/// Closed form of the score for a scalar treatment with intercept,
/// `t = (1, τ)`, and a conditional-mean loss:
/// `ψ = H + [Ḣ₁(λ₂ − λ₁τ) + Ḣ₂(λ₀τ − λ₁)]/(λ₂λ₀ − λ₁²)·(y − G(θ't))`
/// with `λ_k = E[Ġ·T^k | x]`.
pub fn influence_eval_univariate(
    y: f64,
    t: &[f64],
    theta: &[f64],
    lambdas: [f64; 3],
    link: Link,
    h: f64,
    h_theta: &[f64],
) -> Result<f64> {
    if t.len() != 2 {
        return Err(Error::dim("univariate score: t", 2, t.len()));
    }
    if theta.len() != 2 || h_theta.len() != 2 {
        return Err(Error::dim("univariate score: theta", 2, theta.len().min(h_theta.len())));
    }
    let [l0, l1, l2] = lambdas;
    let det = l2 * l0 - l1 * l1;
    if !(det > 0.0) || !(l0 > 0.0) {
        return Err(Error::NotSpd {
            index: 1,
            pivot: det,
            threshold: 0.0,
        });
    }
    let tau = t[1];
    let resid = y - link.g(theta[0] * t[0] + theta[1] * tau);
    Ok(h + (h_theta[0] * (l2 - l1 * tau) + h_theta[1] * (l0 * tau - l1)) / det * resid)
}

/// Per-observation target failures that the skip policy may absorb.
pub fn is_observation_level(e: &Error) -> bool {
    matches!(
        e,
        Error::SignConditionViolated(_) | Error::NoBracket { .. } | Error::DivideByZeroIntercept(_)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipPolicy {
    #[default]
    Skip,
    Abort,
}

fn default_folds() -> usize {
    3
}

fn default_levels() -> Vec<f64> {
    vec![0.95]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    #[serde(default = "default_folds")]
    pub folds: usize,
    /// Fit `θ̂` and `L̂` on separate halves of each fold complement when
    /// `L̂` depends on `θ̂`.
    #[serde(default = "default_true")]
    pub three_way: bool,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub skip_policy: SkipPolicy,
    /// Also report the uncorrected plug-in mean of `H`.
    #[serde(default)]
    pub report_plugin: bool,
    /// Run the orthogonality diagnostic on each evaluation fold.
    #[serde(default)]
    pub orthogonality: bool,
    /// Run folds on the rayon pool.
    #[serde(default = "default_true")]
    pub parallel: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            folds: 3,
            three_way: true,
            levels: default_levels(),
            seed: 0,
            skip_policy: SkipPolicy::Skip,
            report_plugin: false,
            orthogonality: false,
            parallel: true,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("at least 2 folds are required".into()));
        }
        if let Some(l) = self.levels.iter().find(|l| !(**l > 0.0 && **l < 1.0)) {
            return Err(Error::Config(format!("confidence level {l} outside (0, 1)")));
        }
        Ok(())
    }
}

/// Network and optimiser settings for `θ̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThetaSpec {
    pub hidden_widths: Vec<usize>,
    #[serde(default)]
    pub head_partition: Option<Vec<Vec<usize>>>,
    #[serde(default = "default_bound")]
    pub bound: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_bound() -> Option<f64> {
    Some(crate::net::DEFAULT_BOUND)
}

impl Default for ThetaSpec {
    fn default() -> Self {
        Self {
            hidden_widths: vec![80, 40],
            head_partition: None,
            bound: default_bound(),
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

impl ThetaSpec {
    pub fn net_config(&self, input_dim: usize, loss: &dyn LossModel, seed: u64) -> NetConfig {
        NetConfig {
            input_dim,
            hidden_widths: self.hidden_widths.clone(),
            dtheta: loss.dims().dtheta,
            head_partition: self.head_partition.clone(),
            seed,
            bound: self.bound,
            positive: loss.positive_components(),
        }
    }

    /// Trains `θ̂` on `data`.
    pub fn fit(&self, data: &Dataset, loss: &dyn LossModel, seed: u64) -> Result<StructuredNet> {
        let net = StructuredNet::new(self.net_config(data.x.cols(), loss, seed))?;
        let train = TrainConfig {
            seed: mix(self.train.seed, seed),
            ..self.train.clone()
        };
        Ok(net.train(data, loss, &train)?.0)
    }
}

pub type KnownHessian = Arc<dyn Fn(&[f64], &[f64]) -> Result<Mat> + Send + Sync>;

/// How each fold obtains `L̂`.
#[derive(Clone)]
pub enum ProjectorStrategy {
    Regression(RegressionOptions),
    Glm(RegressionOptions),
    Randomized {
        dist: TreatmentDistribution,
        draws: usize,
        seed: u64,
    },
    Known(KnownHessian),
}

impl std::fmt::Debug for ProjectorStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProjectorStrategy::Regression(o) => f.debug_tuple("Regression").field(o).finish(),
            ProjectorStrategy::Glm(o) => f.debug_tuple("Glm").field(o).finish(),
            ProjectorStrategy::Randomized { dist, draws, seed } => f
                .debug_struct("Randomized")
                .field("dist", dist)
                .field("draws", draws)
                .field("seed", seed)
                .finish(),
            ProjectorStrategy::Known(_) => f.write_str("Known"),
        }
    }
}

impl ProjectorStrategy {
    /// Whether `L̂` is estimated from `θ̂`, so the two must come from
    /// different samples.
    fn needs_theta(&self, loss: &dyn LossModel) -> bool {
        match self {
            ProjectorStrategy::Regression(_) => true,
            ProjectorStrategy::Glm(_) => loss.link() != Some(Link::Identity),
            ProjectorStrategy::Randomized { .. } | ProjectorStrategy::Known(_) => false,
        }
    }

    fn check(&self, loss: &dyn LossModel) -> Result<()> {
        match self {
            ProjectorStrategy::Randomized { dist, .. } => {
                if !loss.hessian_free_of_y() {
                    return Err(Error::FlagViolation);
                }
                dist.validate()?;
                if dist.dim() != loss.dims().dt {
                    return Err(Error::dim("treatment distribution", loss.dims().dt, dist.dim()));
                }
                Ok(())
            }
            ProjectorStrategy::Glm(_) if loss.link().is_none() => Err(Error::LinkMismatch {
                expected: "identity or logistic".into(),
                found: loss.key().into(),
            }),
            _ => Ok(()),
        }
    }

    fn build(
        &self,
        l_data: &Dataset,
        theta: &dyn ParamFn,
        loss: &SharedLoss,
        reg: Regularization,
        seed: u64,
    ) -> Result<ProjectedHessian> {
        let seeded = |o: &RegressionOptions| RegressionOptions {
            seed: mix(o.seed, seed),
            ..o.clone()
        };
        let ph = match self {
            ProjectorStrategy::Regression(o) => fit_regression(l_data, theta, loss.as_ref(), &seeded(o))?,
            ProjectorStrategy::Glm(o) => {
                let link = loss.link().expect("checked");
                glm_closed_form(l_data, Some(theta), loss.as_ref(), link, &seeded(o))?
            }
            ProjectorStrategy::Randomized { dist, draws, seed } => {
                ProjectedHessian::randomized(Quadrature::new(dist, *draws, *seed)?, loss.clone(), reg)?
            }
            ProjectorStrategy::Known(f) => {
                let f = f.clone();
                ProjectedHessian::known(move |x, th| f(x, th), reg)
            }
        };
        Ok(ph.with_regularization(reg))
    }
}

/// Serializable choice of projector strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProjectorConfig {
    Regression(RegressionOptions),
    Glm(RegressionOptions),
    /// With no `dist`, the empirical distribution of the observed treatments
    /// is used, which is valid when treatments were randomized.
    Randomized {
        #[serde(default)]
        dist: Option<TreatmentDistribution>,
        #[serde(default = "default_draws")]
        draws: usize,
        #[serde(default)]
        seed: u64,
    },
    /// The true `L` of a simulation design.
    Truth,
}

fn default_draws() -> usize {
    crate::projector::DEFAULT_DRAWS
}

impl ProjectorConfig {
    pub fn resolve(&self, data: &Dataset, truth: Option<KnownHessian>) -> Result<ProjectorStrategy> {
        Ok(match self {
            ProjectorConfig::Regression(o) => ProjectorStrategy::Regression(o.clone()),
            ProjectorConfig::Glm(o) => ProjectorStrategy::Glm(o.clone()),
            ProjectorConfig::Randomized { dist, draws, seed } => ProjectorStrategy::Randomized {
                dist: dist.clone().unwrap_or_else(|| TreatmentDistribution::Empirical {
                    sample: data.t.to_rows(),
                }),
                draws: *draws,
                seed: *seed,
            },
            ProjectorConfig::Truth => ProjectorStrategy::Known(
                truth.ok_or_else(|| Error::Config("projector `truth` is only available for simulated data".into()))?,
            ),
        })
    }
}

/// SplitMix64 step, used to derive independent seeds.
pub fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeded assignment of `n` observations to `folds` near-equal folds.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = vec![Vec::new(); folds];
    for (k, i) in idx.into_iter().enumerate() {
        out[k % folds].push(i);
    }
    for f in &mut out {
        f.sort_unstable();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mu_s: Vec<f64>,
    pub psi_s: Vec<Vec<f64>>,
    pub n_s: usize,
}

/// Mean and variance of fold-grouped scores: `μ̂` is the mean of the fold
/// means and each fold variance is centred at that global `μ̂`.
pub fn score_statistics(folds: &[Vec<Vec<f64>>]) -> Result<(Vec<f64>, Mat, Vec<FoldSummary>)> {
    let d = folds
        .iter()
        .flat_map(|f| f.first())
        .map(Vec::len)
        .next()
        .ok_or_else(|| Error::DegenerateDesign("no scores".into()))?;
    let mut fold_means = Vec::with_capacity(folds.len());
    for (s, f) in folds.iter().enumerate() {
        if f.is_empty() {
            return Err(Error::FoldTooSmall { fold: s + 1, size: 0 });
        }
        let mut m = vec![0.0; d];
        for psi in f {
            for (a, b) in m.iter_mut().zip(psi) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|v| *v /= f.len() as f64);
        fold_means.push(m);
    }
    let s = folds.len() as f64;
    let mu: Vec<f64> = (0..d).map(|k| fold_means.iter().map(|m| m[k]).sum::<f64>() / s).collect();
    let mut psi = Mat::zeros(d, d);
    let mut summaries = Vec::with_capacity(folds.len());
    for (f, m) in folds.iter().zip(fold_means) {
        let mut ps = Mat::zeros(d, d);
        for v in f {
            let c: Vec<f64> = v.iter().zip(&mu).map(|(a, b)| a - b).collect();
            for i in 0..d {
                for j in 0..d {
                    ps[(i, j)] += c[i] * c[j];
                }
            }
        }
        let ps = ps.scale(1.0 / f.len() as f64);
        psi = psi.add(&ps);
        summaries.push(FoldSummary {
            mu_s: m,
            psi_s: ps.to_rows(),
            n_s: f.len(),
        });
    }
    Ok((mu, psi.scale(1.0 / s).symmetrize(), summaries))
}

/// `μ̂ ± z_{1−α/2}·sqrt(diag Ψ̂ / n)` per component.
pub fn interval(mu: &[f64], psi: &Mat, n: usize, level: f64) -> Vec<[f64; 2]> {
    let z = norm_quantile(0.5 + level / 2.0);
    mu.iter()
        .enumerate()
        .map(|(k, m)| {
            let hw = z * (psi[(k, k)].max(0.0) / n as f64).sqrt();
            [m - hw, m + hw]
        })
        .collect()
}

pub fn level_key(level: f64) -> String {
    format!("{level}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionSlopes {
    pub direction: String,
    pub eps: f64,
    pub orthogonal: Vec<f64>,
    pub plugin: Vec<f64>,
    /// `|m(ε) + m(−ε) − 2m(0)|` of the orthogonal score.
    pub orthogonal_curvature: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub max_cond_l: f64,
    pub orthogonality_slopes: Vec<DirectionSlopes>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginSummary {
    pub mu: Vec<f64>,
    pub psi_matrix: Vec<Vec<f64>>,
    pub ci: BTreeMap<String, Vec<[f64; 2]>>,
}

/// Per-observation output kept alongside the summary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreDetails {
    pub fold: Vec<usize>,
    /// `θ̂(xᵢ)` from the fold's off-sample fit, row-aligned with the data.
    pub theta: Vec<Vec<f64>>,
    /// `ψᵢ`, or `None` when the observation was skipped.
    pub psi: Vec<Option<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub schema: String,
    pub target: String,
    pub mu: Vec<f64>,
    pub psi_matrix: Vec<Vec<f64>>,
    pub n: usize,
    pub folds: Vec<FoldSummary>,
    pub ci: BTreeMap<String, Vec<[f64; 2]>>,
    pub skipped: usize,
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plugin: Option<PluginSummary>,
    #[serde(skip)]
    pub details: ScoreDetails,
}

impl InferenceResult {
    pub fn psi(&self) -> Mat {
        Mat::from_rows(&self.psi_matrix).expect("finite variance")
    }

    pub fn confidence_interval(&self, level: f64) -> Vec<[f64; 2]> {
        interval(&self.mu, &self.psi(), self.n, level)
    }

    pub fn std_errors(&self) -> Vec<f64> {
        let p = self.psi();
        (0..self.mu.len()).map(|k| (p[(k, k)].max(0.0) / self.n as f64).sqrt()).collect()
    }
}

/// Everything `cross_fit` needs besides the data.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub loss: SharedLoss,
    pub target: SharedTarget,
    pub tstar: Vec<f64>,
    pub theta: ThetaSpec,
    pub projector: ProjectorStrategy,
    pub regularization: Regularization,
    pub inference: InferenceConfig,
}

struct FoldOutput {
    eval_idx: Vec<usize>,
    theta: Mat,
    psi: Vec<Option<Vec<f64>>>,
    plugin: Vec<Option<Vec<f64>>>,
    skipped: usize,
    max_cond: f64,
    slopes: Vec<DirectionSlopes>,
}

fn run_fold(data: &Dataset, p: &Pipeline, s: usize, folds: &[Vec<usize>]) -> Result<FoldOutput> {
    let cfg = &p.inference;
    let loss = p.loss.as_ref();
    let eval_idx = folds[s].clone();
    let mut rest: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != s)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    rest.sort_unstable();
    let fold_seed = mix(cfg.seed, s as u64 + 1);
    let (theta_idx, l_idx) = if cfg.three_way && p.projector.needs_theta(loss) {
        let mut shuffled = rest.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(fold_seed, 0x3)));
        let half = shuffled.len() / 2;
        let (a, b) = shuffled.split_at(half);
        let (mut a, mut b) = (a.to_vec(), b.to_vec());
        a.sort_unstable();
        b.sort_unstable();
        (a, b)
    } else {
        (rest.clone(), rest)
    };
    let theta_net = p.theta.fit(&data.subset(&theta_idx), loss, mix(p.theta.seed, fold_seed))?;
    let lhat = p
        .projector
        .build(&data.subset(&l_idx), &theta_net, &p.loss, p.regularization, fold_seed)?;

    let ev = data.subset(&eval_idx);
    let theta = theta_net.forward(&ev.x)?;
    let ls = lhat.eval_rows(&ev.x, &theta)?;
    let max_cond = max_condition(&ls);

    let target = p.target.as_ref();
    let per_row = |i: usize| -> Result<(Option<Vec<f64>>, Option<Vec<f64>>)> {
        let (y, t, x, th) = (ev.y.row(i), ev.t.row(i), ev.x.row(i), theta.row(i));
        let psi = influence_eval(y, t, x, th, &ls[i], loss, target, &p.tstar);
        match psi {
            Ok(v) => {
                let plug = cfg
                    .report_plugin
                    .then(|| target.eval(x, th, &p.tstar))
                    .transpose()?;
                Ok((Some(v), plug))
            }
            Err(e) if is_observation_level(&e) && cfg.skip_policy == SkipPolicy::Skip => Ok((None, None)),
            Err(e) => Err(e),
        }
    };
    let rows: Vec<_> = if cfg.parallel {
        (0..ev.n()).into_par_iter().map(per_row).collect::<Result<_>>()?
    } else {
        (0..ev.n()).map(per_row).collect::<Result<_>>()?
    };
    let skipped = rows.iter().filter(|(p, _)| p.is_none()).count();
    let (psi, plugin) = rows.into_iter().unzip();

    let slopes = if cfg.orthogonality {
        orthogonality_diagnostic(&ev, &theta_net, &lhat, loss, target, &p.tstar, &Direction::builtin(ev.x.cols()), 1e-3)?
    } else {
        Vec::new()
    };
    Ok(FoldOutput {
        eval_idx,
        theta,
        psi,
        plugin,
        skipped,
        max_cond,
        slopes,
    })
}

/// S-fold cross-fitted estimate of `μ₀ = E[H(X, θ₀(X); t*)]`.
pub fn cross_fit(data: &Dataset, p: &Pipeline) -> Result<InferenceResult> {
    let cfg = &p.inference;
    cfg.validate()?;
    p.projector.check(p.loss.as_ref())?;
    p.target.check_loss(p.loss.as_ref())?;
    let n = data.n();
    let dt = p.loss.dims().dt;
    if data.t.cols() != dt {
        return Err(Error::dim("data t columns", dt, data.t.cols()));
    }
    if p.tstar.len() != dt && !p.target.name().starts_with("custom") {
        return Err(Error::dim("t*", dt, p.tstar.len()));
    }
    let folds = assign_folds(n, cfg.folds, cfg.seed);
    if n < 10 * cfg.folds {
        let (k, f) = folds.iter().enumerate().min_by_key(|(_, f)| f.len()).expect("folds");
        return Err(Error::FoldTooSmall { fold: k + 1, size: f.len() });
    }
    let outputs: Vec<FoldOutput> = if cfg.parallel {
        (0..cfg.folds)
            .into_par_iter()
            .map(|s| run_fold(data, p, s, &folds))
            .collect::<Result<_>>()?
    } else {
        (0..cfg.folds).map(|s| run_fold(data, p, s, &folds)).collect::<Result<_>>()?
    };

    let kept = |o: &FoldOutput, plug: bool| -> Vec<Vec<f64>> {
        let src = if plug { &o.plugin } else { &o.psi };
        src.iter().flatten().cloned().collect()
    };
    let grouped: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| kept(o, false)).collect();
    for (s, g) in grouped.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::FoldTooSmall { fold: s + 1, size: 0 });
        }
    }
    let (mu, psi, fold_summaries) = score_statistics(&grouped)?;
    let n_used: usize = grouped.iter().map(Vec::len).sum();
    let ci = cfg
        .levels
        .iter()
        .map(|&l| (level_key(l), interval(&mu, &psi, n_used, l)))
        .collect();

    let plugin = if cfg.report_plugin {
        let g: Vec<Vec<Vec<f64>>> = outputs.iter().map(|o| kept(o, true)).collect();
        let (pm, pp, _) = score_statistics(&g)?;
        let pci = cfg
            .levels
            .iter()
            .map(|&l| (level_key(l), interval(&pm, &pp, n_used, l)))
            .collect();
        Some(PluginSummary {
            mu: pm,
            psi_matrix: pp.to_rows(),
            ci: pci,
        })
    } else {
        None
    };

    let max_cond_l = outputs.iter().map(|o| o.max_cond).fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if max_cond_l > COND_WARN {
        warnings.push(format!(
            "max condition number of L̂ is {max_cond_l:.3e}; the invertibility premise is doubtful"
        ));
    }
    let skipped: usize = outputs.iter().map(|o| o.skipped).sum();
    if skipped > 0 {
        warnings.push(format!("{skipped} observation(s) skipped by the target"));
    }

    let mut details = ScoreDetails {
        fold: vec![0; n],
        theta: vec![Vec::new(); n],
        psi: vec![None; n],
    };
    for (s, o) in outputs.iter().enumerate() {
        for (r, &i) in o.eval_idx.iter().enumerate() {
            details.fold[i] = s + 1;
            details.theta[i] = o.theta.row(r).to_vec();
            details.psi[i] = o.psi[r].clone();
        }
    }

    Ok(InferenceResult {
        schema: RESULT_SCHEMA.into(),
        target: p.target.name(),
        mu,
        psi_matrix: psi.to_rows(),
        n: n_used,
        folds: fold_summaries,
        ci,
        skipped,
        diagnostics: Diagnostics {
            max_cond_l,
            orthogonality_slopes: average_slopes(outputs.into_iter().map(|o| o.slopes).collect()),
            warnings,
        },
        plugin,
        details,
    })
}

fn average_slopes(per_fold: Vec<Vec<DirectionSlopes>>) -> Vec<DirectionSlopes> {
    let Some(first) = per_fold.first() else {
        return Vec::new();
    };
    let k = per_fold.len() as f64;
    first
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let avg = |f: fn(&DirectionSlopes) -> &Vec<f64>| -> Vec<f64> {
                (0..f(d).len())
                    .map(|c| per_fold.iter().map(|p| f(&p[j])[c]).sum::<f64>() / k)
                    .collect()
            };
            DirectionSlopes {
                direction: d.direction.clone(),
                eps: d.eps,
                orthogonal: avg(|s| &s.orthogonal),
                plugin: avg(|s| &s.plugin),
                orthogonal_curvature: avg(|s| &s.orthogonal_curvature),
            }
        })
        .collect()
}

/// Bounded perturbation `δ(x) = g(x)·(1, …, 1)` of every parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// `g ≡ 1`
    Constant,
    /// `g(x) = max(0, 1 − x_j²)` for the 0-based coordinate `j`.
    Bump(usize),
}

impl Direction {
    pub fn builtin(dx: usize) -> Vec<Direction> {
        std::iter::once(Direction::Constant).chain((0..dx).map(Direction::Bump)).collect()
    }

    pub fn weight(self, x: &[f64]) -> f64 {
        match self {
            Direction::Constant => 1.0,
            Direction::Bump(j) => (1.0 - x[j] * x[j]).max(0.0),
        }
    }

    pub fn name(self) -> String {
        match self {
            Direction::Constant => "constant".into(),
            Direction::Bump(j) => format!("bump:x{}", j + 1),
        }
    }
}

/// Mean orthogonal score and mean plug-in `H` along `θ + ε·δ`.
fn perturbed_means(
    data: &Dataset,
    theta: &Mat,
    lhat: &ProjectedHessian,
    loss: &dyn LossModel,
    target: &dyn Target,
    tstar: &[f64],
    dir: Direction,
    eps: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut th = theta.clone();
    for i in 0..data.n() {
        let w = eps * dir.weight(data.x.row(i));
        th.row_mut(i).iter_mut().for_each(|v| *v += w);
    }
    let ls = lhat.eval_rows(&data.x, &th)?;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..data.n())
        .into_par_iter()
        .map(|i| {
            let (y, t, x, p) = (data.y.row(i), data.t.row(i), data.x.row(i), th.row(i));
            let psi = influence_eval(y, t, x, p, &ls[i], loss, target, tstar)?;
            Ok((psi, target.eval(x, p, tstar)?))
        })
        .collect::<Result<_>>()?;
    let d = target.dim();
    let n = data.n() as f64;
    let mut m = vec![0.0; d];
    let mut h = vec![0.0; d];
    for (psi, hv) in &rows {
        for k in 0..d {
            m[k] += psi[k] / n;
            h[k] += hv[k] / n;
        }
    }
    Ok((m, h))
}

/// Central-difference slopes at 0 of the mean orthogonal score and of the
/// mean plug-in target along each direction.
#[allow(clippy::too_many_arguments)]
pub fn orthogonality_diagnostic(
    data: &Dataset,
    theta: &dyn ParamFn,
    lhat: &ProjectedHessian,
    loss: &dyn LossModel,
    target: &dyn Target,
    tstar: &[f64],
    directions: &[Direction],
    eps: f64,
) -> Result<Vec<DirectionSlopes>> {
    let th = theta.eval_rows(&data.x)?;
    let (m0, _) = perturbed_means(data, &th, lhat, loss, target, tstar, Direction::Constant, 0.0)?;
    directions
        .iter()
        .map(|&dir| {
            let (mp, hp) = perturbed_means(data, &th, lhat, loss, target, tstar, dir, eps)?;
            let (mm, hm) = perturbed_means(data, &th, lhat, loss, target, tstar, dir, -eps)?;
            let slope = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| (p - q) / (2.0 * eps)).collect();
            Ok(DirectionSlopes {
                direction: dir.name(),
                eps,
                orthogonal: slope(&mp, &mm),
                plugin: slope(&hp, &hm),
                orthogonal_curvature: mp
                    .iter()
                    .zip(&mm)
                    .zip(&m0)
                    .map(|((p, q), z)| (p + q - 2.0 * z).abs())
                    .collect(),
            })
        })
        .collect()
}
