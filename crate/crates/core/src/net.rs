//! The structured network: ReLU trunk, parameter layer emitting `θ(x)`,
//! and a model layer that scores `θ(x)` through a [`LossModel`].

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::loss::{LossDims, LossModel};
use crate::numerics::special::{logistic, softplus};
use crate::numerics::{Mat, NodeId, Tape};

pub const DEFAULT_BOUND: f64 = 10.0;

fn default_widths() -> Vec<usize> {
    vec![80, 40]
}

fn default_bound() -> Option<f64> {
    Some(DEFAULT_BOUND)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    #[serde(default = "default_widths")]
    pub hidden_widths: Vec<usize>,
    pub dtheta: usize,
    /// For each parameter, the 1-based input coordinates its own sub-trunk
    /// sees. `None` means one shared trunk for all parameters.
    #[serde(default)]
    pub head_partition: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub seed: u64,
    /// Smooth clamp `M·tanh(z/M)` on the parameter layer; `None` leaves the
    /// outputs linear.
    #[serde(default = "default_bound")]
    pub bound: Option<f64>,
    /// Parameters (0-based) emitted through a softplus, hence positive.
    #[serde(default)]
    pub positive: Vec<usize>,
}

impl NetConfig {
    pub fn new(input_dim: usize, hidden_widths: Vec<usize>, dtheta: usize) -> Self {
        Self {
            input_dim,
            hidden_widths,
            dtheta,
            head_partition: None,
            seed: 0,
            bound: Some(DEFAULT_BOUND),
            positive: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dtheta == 0 {
            return Err(Error::Config("dtheta must be at least 1".into()));
        }
        if self.hidden_widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be at least 1".into()));
        }
        if let Some(b) = self.bound {
            if !(b > 0.0) {
                return Err(Error::Config(format!("bound must be positive, got {b}")));
            }
        }
        if let Some(k) = self.positive.iter().find(|&&k| k >= self.dtheta) {
            return Err(Error::IndexOutOfRange {
                index: k + 1,
                len: self.dtheta,
            });
        }
        if let Some(parts) = &self.head_partition {
            if parts.len() != self.dtheta {
                return Err(Error::dim("head_partition", self.dtheta, parts.len()));
            }
            for p in parts {
                if p.is_empty() {
                    return Err(Error::Config("head_partition subsets must be non-empty".into()));
                }
                if let Some(&bad) = p.iter().find(|&&i| i == 0 || i > self.input_dim) {
                    return Err(Error::IndexOutOfRange {
                        index: bad,
                        len: self.input_dim,
                    });
                }
            }
        }
        Ok(())
    }

    fn output_map(&self, k: usize) -> OutputMap {
        if self.positive.contains(&k) {
            OutputMap::Softplus
        } else if let Some(m) = self.bound {
            OutputMap::Clamp(m)
        } else {
            OutputMap::Identity
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum OutputMap {
    Identity,
    Clamp(f64),
    Softplus,
}

impl OutputMap {
    fn apply(self, z: f64) -> (f64, f64) {
        match self {
            OutputMap::Identity => (z, 1.0),
            OutputMap::Clamp(m) => {
                let t = (z / m).tanh();
                (m * t, 1.0 - t * t)
            }
            OutputMap::Softplus => (softplus(z), logistic(z)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 128,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 10,
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Config("validation_fraction must lie in [0, 1)".into()));
        }
        if n < 2 * self.batch_size {
            return Err(Error::Config(format!(
                "training needs at least 2·batch_size = {} rows, got {n}",
                2 * self.batch_size
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// `in × out`
    w: Mat,
    b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct Tower {
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuredNet {
    config: NetConfig,
    towers: Vec<Tower>,
}

impl StructuredNet {
    /// He-uniform hidden layers and LeCun-uniform parameter layer, biases
    /// zero, all drawn from `config.seed`.
    pub fn new(config: NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let plan: Vec<(Vec<usize>, Vec<usize>)> = match &config.head_partition {
            None => vec![((0..config.input_dim).collect(), (0..config.dtheta).collect())],
            Some(parts) => parts
                .iter()
                .enumerate()
                .map(|(k, p)| (p.iter().map(|i| i - 1).collect(), vec![k]))
                .collect(),
        };
        let towers = plan
            .into_iter()
            .map(|(inputs, outputs)| {
                let mut sizes = vec![inputs.len()];
                sizes.extend(&config.hidden_widths);
                sizes.push(outputs.len());
                let last = sizes.len() - 2;
                let layers = sizes
                    .windows(2)
                    .enumerate()
                    .map(|(l, io)| {
                        let fan_in = io[0].max(1) as f64;
                        let a = if l == last { (3.0 / fan_in).sqrt() } else { (6.0 / fan_in).sqrt() };
                        let w = (0..io[0] * io[1]).map(|_| rng.gen_range(-a..a)).collect();
                        Layer {
                            w: Mat::from_vec_unchecked(io[0], io[1], w),
                            b: vec![0.0; io[1]],
                        }
                    })
                    .collect();
                Tower {
                    inputs,
                    outputs,
                    layers,
                }
            })
            .collect();
        Ok(Self { config, towers })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn num_weights(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for t in &self.towers {
            for l in &t.layers {
                out.push(l.w.as_slice());
                out.push(l.b.as_slice());
            }
        }
        out
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for t in &mut self.towers {
            for l in &mut t.layers {
                out.push(l.w.as_mut_slice());
                out.push(l.b.as_mut_slice());
            }
        }
        out
    }

    /// All weights in storage order: towers, layers, then `W` (row-major)
    /// before `b`.
    pub fn weights(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_weights(&mut self, w: &[f64]) -> Result<()> {
        if w.len() != self.num_weights() {
            return Err(Error::dim("StructuredNet::set_weights", self.num_weights(), w.len()));
        }
        let mut off = 0;
        for s in self.param_slices_mut() {
            s.copy_from_slice(&w[off..off + s.len()]);
            off += s.len();
        }
        Ok(())
    }

    fn check_x(&self, x: &Mat) -> Result<()> {
        if x.cols() != self.config.input_dim {
            return Err(Error::dim("network input", self.config.input_dim, x.cols()));
        }
        Ok(())
    }

    fn tower_input(t: &Tower, x: &Mat) -> Mat {
        let mut m = Mat::zeros(x.rows(), t.inputs.len());
        for i in 0..x.rows() {
            let (src, dst) = (x.row(i), m.row_mut(i));
            for (d, &j) in dst.iter_mut().zip(&t.inputs) {
                *d = src[j];
            }
        }
        m
    }

    /// `θ(x)` for every row of `x`.
    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        self.check_x(x)?;
        let n = x.rows();
        let mut theta = Mat::zeros(n, self.config.dtheta);
        for t in &self.towers {
            let mut h = Self::tower_input(t, x);
            let last = t.layers.len() - 1;
            for (l, layer) in t.layers.iter().enumerate() {
                let mut z = h.matmul(&layer.w);
                for i in 0..n {
                    for (v, b) in z.row_mut(i).iter_mut().zip(&layer.b) {
                        *v += b;
                        if l < last && *v < 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                h = z;
            }
            for i in 0..n {
                for (c, &k) in t.outputs.iter().enumerate() {
                    theta.row_mut(i)[k] = self.config.output_map(k).apply(h[(i, c)]).0;
                }
            }
        }
        Ok(theta)
    }

    pub fn theta(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.config.input_dim {
            return Err(Error::dim("network input", self.config.input_dim, x.len()));
        }
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network input {bad}")));
        }
        Ok(self.forward(&Mat::from_vec_unchecked(1, x.len(), x.to_vec()))?.into_vec())
    }

    /// Records the forward pass; returns the weight leaves in storage order
    /// and the `n × dθ` parameter-layer node.
    fn record(&self, tape: &mut Tape, x: &Mat) -> Result<(Vec<NodeId>, NodeId)> {
        let n = x.rows();
        let d = self.config.dtheta;
        let mut leaves = Vec::new();
        let mut acc: Option<NodeId> = None;
        for t in &self.towers {
            let mut h = tape.leaf(Self::tower_input(t, x));
            let last = t.layers.len() - 1;
            for (l, layer) in t.layers.iter().enumerate() {
                let w = tape.leaf(layer.w.clone());
                let b = tape.leaf(Mat::from_vec_unchecked(1, layer.b.len(), layer.b.clone()));
                leaves.push(w);
                leaves.push(b);
                h = tape.matmul(h, w)?;
                h = tape.add_row(h, b)?;
                if l < last {
                    h = tape.relu(h);
                }
            }
            let full = if t.outputs.len() == d && t.outputs.iter().enumerate().all(|(i, &k)| i == k) {
                h
            } else {
                let mut sel = Mat::zeros(t.outputs.len(), d);
                for (c, &k) in t.outputs.iter().enumerate() {
                    sel[(c, k)] = 1.0;
                }
                let s = tape.leaf(sel);
                tape.matmul(h, s)?
            };
            acc = Some(match acc {
                None => full,
                Some(a) => tape.add(a, full)?,
            });
        }
        let pre = acc.expect("at least one tower");
        debug_assert_eq!(tape.value(pre).shape(), (n, d));
        let cfg = &self.config;
        let theta = tape.map(pre, |k, z| cfg.output_map(k).apply(z));
        Ok((leaves, theta))
    }

    /// Mean loss over the rows and its gradient in every weight, in the
    /// order of [`StructuredNet::weights`].
    pub fn loss_and_grad(&self, x: &Mat, y: &Mat, t: &Mat, loss: &dyn LossModel) -> Result<(f64, Vec<Mat>)> {
        self.check_x(x)?;
        let mut tape = Tape::new();
        let (leaves, theta) = self.record(&mut tape, x)?;
        let n = x.rows();
        let th = tape.value(theta);
        let mut g = Mat::zeros(n, self.config.dtheta);
        let mut total = 0.0;
        for i in 0..n {
            let (v, gi) = loss.value_grad(y.row(i), t.row(i), th.row(i))?;
            total += v;
            for (dst, src) in g.row_mut(i).iter_mut().zip(gi) {
                *dst = src / n as f64;
            }
        }
        let mean = total / n as f64;
        let out = tape.row_objective(theta, mean, g)?;
        let grads = tape.grad_reverse(out);
        let gs = leaves
            .iter()
            .map(|&id| {
                grads.get(id).cloned().unwrap_or_else(|| {
                    let v = tape.value(id);
                    Mat::zeros(v.rows(), v.cols())
                })
            })
            .collect();
        Ok((mean, gs))
    }

    /// Mean loss of the network's `θ(x)` on a dataset.
    pub fn mean_loss(&self, data: &Dataset, loss: &dyn LossModel) -> Result<f64> {
        let theta = self.forward(&data.x)?;
        let mut total = 0.0;
        for i in 0..data.n() {
            total += loss.value(data.y.row(i), data.t.row(i), theta.row(i))?;
        }
        Ok(total / data.n() as f64)
    }

    fn check_loss(&self, data: &Dataset, loss: &dyn LossModel) -> Result<()> {
        let LossDims { dy, dt, dtheta } = loss.dims();
        if dtheta != self.config.dtheta {
            return Err(Error::dim("loss dtheta", self.config.dtheta, dtheta));
        }
        if data.y.cols() != dy {
            return Err(Error::dim("data y columns", dy, data.y.cols()));
        }
        if data.t.cols() != dt {
            return Err(Error::dim("data t columns", dt, data.t.cols()));
        }
        self.check_x(&data.x)
    }

    /// Minibatch Adam with early stopping on a held-out split. Returns the
    /// weights with the best validation loss and the per-epoch trace.
    pub fn train(
        &self,
        data: &Dataset,
        loss: &dyn LossModel,
        cfg: &TrainConfig,
    ) -> Result<(StructuredNet, Vec<EpochRecord>)> {
        self.check_loss(data, loss)?;
        if cfg.epochs == 0 {
            return Ok((self.clone(), Vec::new()));
        }
        let n = data.n();
        cfg.validate(n)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let n_val = (cfg.validation_fraction * n as f64).floor() as usize;
        let (val_idx, train_idx) = order.split_at(n_val);
        let val = (n_val > 0).then(|| data.subset(val_idx));
        let mut train_idx = train_idx.to_vec();
        let batch = cfg.batch_size.min(train_idx.len());

        let mut net = self.clone();
        let sizes: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        let mut m: Vec<Vec<f64>> = sizes.iter().map(|&s| vec![0.0; s]).collect();
        let mut v = m.clone();
        let mut step = 0i32;

        let mut best: Option<(f64, StructuredNet)> = None;
        let mut wait = 0;
        let mut trace = Vec::new();
        for epoch in 0..cfg.epochs {
            train_idx.shuffle(&mut rng);
            let mut sum = 0.0;
            for (b, idx) in train_idx.chunks(batch).enumerate() {
                let (x, y, t) = (
                    data.x.select_rows(idx),
                    data.y.select_rows(idx),
                    data.t.select_rows(idx),
                );
                let (value, grads) = net.loss_and_grad(&x, &y, &t, loss)?;
                if !value.is_finite() || grads.iter().any(|g| g.as_slice().iter().any(|v| !v.is_finite())) {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                sum += value * idx.len() as f64;
                step += 1;
                let c1 = 1.0 - cfg.beta1.powi(step);
                let c2 = 1.0 - cfg.beta2.powi(step);
                for (((p, g), mk), vk) in net.param_slices_mut().into_iter().zip(&grads).zip(&mut m).zip(&mut v) {
                    for (((w, &gi), mi), vi) in p.iter_mut().zip(g.as_slice()).zip(mk.iter_mut()).zip(vk.iter_mut()) {
                        *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                        *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                        *w -= cfg.learning_rate * (*mi / c1) / ((*vi / c2).sqrt() + cfg.eps);
                    }
                }
            }
            let train_loss = sum / train_idx.len() as f64;
            let validation_loss = val.as_ref().map(|d| net.mean_loss(d, loss)).transpose()?;
            trace.push(EpochRecord {
                epoch,
                train_loss,
                validation_loss,
            });
            let crit = validation_loss.unwrap_or(train_loss);
            if !crit.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: 0 });
            }
            match &best {
                Some((b, _)) if crit >= *b => {
                    wait += 1;
                    if wait >= cfg.patience {
                        break;
                    }
                }
                _ => {
                    best = Some((crit, net.clone()));
                    wait = 0;
                }
            }
        }
        let (_, net) = best.expect("at least one epoch ran");
        Ok((net, trace))
    }

    pub fn to_bytes(&self, meta: &ModelMeta) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.config.clone(),
            meta: meta.clone(),
        })?;
        let weights = self.weights();
        let mut buf = Vec::with_capacity(32 + header.len() + 8 * weights.len());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        buf.extend_from_slice(&(weights.len() as u64).to_le_bytes());
        for w in weights {
            buf.extend_from_slice(&w.to_le_bytes());
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, ModelMeta)> {
        let corrupt = |m: &str| Error::CorruptFile(m.to_string());
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(corrupt("bad magic or truncated header"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::FormatVersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        if bytes.len() < 4 + 12 {
            return Err(corrupt("truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch"));
        }
        let hlen = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
        let rest = body.get(12..).ok_or_else(|| corrupt("truncated"))?;
        if rest.len() < hlen + 8 {
            return Err(corrupt("truncated"));
        }
        let header: Header = serde_json::from_slice(&rest[..hlen]).map_err(|e| corrupt(&e.to_string()))?;
        let nw = u64::from_le_bytes(rest[hlen..hlen + 8].try_into().unwrap()) as usize;
        let block = &rest[hlen + 8..];
        if block.len() != 8 * nw {
            return Err(corrupt("weight block length"));
        }
        let weights: Vec<f64> = block
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut net = StructuredNet::new(header.config).map_err(|e| corrupt(&e.to_string()))?;
        net.set_weights(&weights).map_err(|_| corrupt("weight count does not match config"))?;
        Ok((net, header.meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &ModelMeta) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes(meta)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, ModelMeta)> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// A parameter function `x ↦ θ(x)` evaluated row-wise: a fitted network or
/// a known truth.
pub trait ParamFn: Send + Sync {
    fn dtheta(&self) -> usize;
    fn eval_rows(&self, x: &Mat) -> Result<Mat>;
}

impl ParamFn for StructuredNet {
    fn dtheta(&self) -> usize {
        self.config.dtheta
    }
    fn eval_rows(&self, x: &Mat) -> Result<Mat> {
        self.forward(x)
    }
}

/// Wraps a closure as a [`ParamFn`].
pub struct FnParam<F> {
    dtheta: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> Vec<f64> + Send + Sync> FnParam<F> {
    pub fn new(dtheta: usize, f: F) -> Self {
        Self { dtheta, f }
    }
}

impl<F: Fn(&[f64]) -> Vec<f64> + Send + Sync> ParamFn for FnParam<F> {
    fn dtheta(&self) -> usize {
        self.dtheta
    }
    fn eval_rows(&self, x: &Mat) -> Result<Mat> {
        let mut out = Vec::with_capacity(x.rows() * self.dtheta);
        for i in 0..x.rows() {
            let v = (self.f)(x.row(i));
            if v.len() != self.dtheta {
                return Err(Error::dim("parameter function output", self.dtheta, v.len()));
            }
            out.extend(v);
        }
        Mat::new(x.rows(), self.dtheta, out)
    }
}

const MAGIC: &[u8; 4] = b"HINF";
pub const FORMAT_VERSION: u32 = 1;

/// Extra information stored in a model file header.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    #[serde(default)]
    pub loss: Option<String>,
    #[serde(default)]
    pub dims: Option<LossDims>,
    /// Free-form description of the training run (config hash, seeds).
    #[serde(default)]
    pub fingerprint: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetConfig,
    meta: ModelMeta,
}

/// Hidden width suggested by the asymptotic sizing rule
/// `n^{d/(2(p+d))}·log²n` for `d` continuous covariates and smoothness `p`.
/// Advisory only; never applied automatically.
pub fn suggest_width(n: usize, d_continuous: usize, smoothness: f64) -> usize {
    let n = n.max(2) as f64;
    let d = d_continuous as f64;
    let ln = n.ln();
    (n.powf(d / (2.0 * (smoothness + d))) * ln * ln).ceil() as usize
}
