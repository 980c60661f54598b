//! Trainable heads over precomputed embeddings and age-balancing resamplers.
//!
//! The risk head is fitted with a pairwise ranking loss plus a smoothness
//! penalty on time-adjacent risks; the age head with mean absolute error.
//! Both use AdamW with decoupled weight decay. All randomness comes from
//! ChaCha8 streams derived from the config seed, so identical seeds give
//! bit-identical parameters.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::harrell_c;

// RNG streams per purpose; epoch shuffles use EPOCH_STREAM + epoch.
const INIT_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;
const EPOCH_STREAM: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossForm {
    /// `log(1 + exp(-(r_i - r_j)))`
    Logistic,
    /// `max(0, margin - (r_i - r_j))`
    Hinge { margin: f64 },
}

impl LossForm {
    pub fn label(&self) -> String {
        match self {
            LossForm::Logistic => "logistic".into(),
            LossForm::Hinge { margin } => format!("hinge(margin={margin})"),
        }
    }

    // value and derivative with respect to the margin r_i - r_j
    fn eval(&self, margin: f64) -> (f64, f64) {
        match *self {
            LossForm::Logistic => {
                let v = if margin > 0.0 { (-margin).exp().ln_1p() } else { -margin + margin.exp().ln_1p() };
                let sig = if margin >= 0.0 {
                    let e = (-margin).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + margin.exp())
                };
                (v, -sig)
            }
            LossForm::Hinge { margin: m } => {
                if margin < m {
                    (m - margin, -1.0)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadKind {
    Linear,
    /// One tanh hidden layer.
    Mlp { hidden: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub smooth_lambda: f64,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Standard deviation of the initial output-layer weights.
    pub init_scale: f64,
    pub shuffle_each_epoch: bool,
    pub loss: LossForm,
    pub head: HeadKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 10,
            smooth_lambda: 1e-4,
            seed: 0,
            validation_fraction: 0.05,
            init_scale: 1e-4,
            shuffle_each_epoch: true,
            loss: LossForm::Logistic,
            head: HeadKind::Linear,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
            ("eps", self.eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be > 0")));
            }
        }
        for (name, v) in [("weight_decay", self.weight_decay), ("smooth_lambda", self.smooth_lambda), ("init_scale", self.init_scale)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be >= 0")));
            }
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::InvalidInput("betas must lie in (0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be > 0".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidInput("validation_fraction must lie in (0, 1)".into()));
        }
        if let HeadKind::Mlp { hidden: 0 } = self.head {
            return Err(Error::InvalidInput("hidden width must be > 0".into()));
        }
        Ok(())
    }
}

/// Scalar head over an embedding. Parameters are stored flat:
/// linear `[w (dim), b]`; MLP `[W1 (hidden x dim, row-major), b1 (hidden), w2 (hidden), b2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel {
    dim: usize,
    head: HeadKind,
    params: Vec<f64>,
}

impl RiskModel {
    pub fn zeros(dim: usize, head: HeadKind) -> Self {
        let n = match head {
            HeadKind::Linear => dim + 1,
            HeadKind::Mlp { hidden } => hidden * dim + 2 * hidden + 1,
        };
        RiskModel { dim, head, params: vec![0.0; n] }
    }

    pub fn from_params(dim: usize, head: HeadKind, params: Vec<f64>) -> Result<Self> {
        let m = RiskModel::zeros(dim, head);
        if params.len() != m.params.len() {
            return Err(Error::LengthMismatch(format!("expected {} parameters, got {}", m.params.len(), params.len())));
        }
        Ok(RiskModel { params, ..m })
    }

    fn init(dim: usize, head: HeadKind, scale: f64, seed: u64) -> Self {
        let mut m = RiskModel::zeros(dim, head);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let normal = Normal::new(0.0, 1.0).unwrap();
        match head {
            HeadKind::Linear => {
                for w in &mut m.params[..dim] {
                    *w = scale * normal.sample(&mut rng);
                }
            }
            HeadKind::Mlp { hidden } => {
                let s1 = 1.0 / (dim as f64).sqrt();
                for w in &mut m.params[..hidden * dim] {
                    *w = s1 * normal.sample(&mut rng);
                }
                let off = hidden * dim + hidden;
                for w in &mut m.params[off..off + hidden] {
                    *w = scale * normal.sample(&mut rng);
                }
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Input weights of the linear head (`None` for the MLP).
    pub fn weights(&self) -> Option<&[f64]> {
        match self.head {
            HeadKind::Linear => Some(&self.params[..self.dim]),
            HeadKind::Mlp { .. } => None,
        }
    }

    pub fn bias(&self) -> f64 {
        *self.params.last().unwrap()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let d = self.dim;
        match self.head {
            HeadKind::Linear => dot(&self.params[..d], x) + self.params[d],
            HeadKind::Mlp { hidden } => {
                let (w1, rest) = self.params.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let mut out = b2[0];
                for k in 0..hidden {
                    out += w2[k] * (dot(&w1[k * d..(k + 1) * d], x) + b1[k]).tanh();
                }
                out
            }
        }
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Vec<f64> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    // grad += upstream * d(predict(x))/d(params)
    fn accumulate_grad(&self, x: &[f64], upstream: f64, grad: &mut [f64]) {
        let d = self.dim;
        match self.head {
            HeadKind::Linear => {
                for (g, xi) in grad[..d].iter_mut().zip(x) {
                    *g += upstream * xi;
                }
                grad[d] += upstream;
            }
            HeadKind::Mlp { hidden } => {
                let w1 = &self.params[..hidden * d];
                let b1 = &self.params[hidden * d..hidden * d + hidden];
                let w2 = &self.params[hidden * d + hidden..hidden * d + 2 * hidden];
                for k in 0..hidden {
                    let a = (dot(&w1[k * d..(k + 1) * d], x) + b1[k]).tanh();
                    grad[hidden * d + hidden + k] += upstream * a;
                    let back = upstream * w2[k] * (1.0 - a * a);
                    grad[hidden * d + k] += back;
                    for (g, xi) in grad[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *g += back * xi;
                    }
                }
                grad[hidden * d + 2 * hidden] += upstream;
            }
        }
    }

    /// Chain a loss gradient with respect to predictions back to parameters.
    pub fn backprop(&self, xs: &[Vec<f64>], d_pred: &[f64]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        for (x, &u) in xs.iter().zip(d_pred) {
            if u != 0.0 {
                self.accumulate_grad(x, u, &mut grad);
            }
        }
        grad
    }

    /// Ranking loss and its gradient with respect to the parameters.
    pub fn rank_loss_grad(&self, xs: &[Vec<f64>], times: &[f64], events: &[bool], smooth_lambda: f64, form: LossForm) -> Result<(f64, Vec<f64>)> {
        let r = self.predict_all(xs);
        let l = pairwise_rank_loss_with(&r, times, events, smooth_lambda, form)?;
        Ok((l.loss, self.backprop(xs, &l.grad)))
    }

    /// Mean absolute error and its subgradient with respect to the parameters.
    pub fn l1_loss_grad(&self, xs: &[Vec<f64>], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = self.predict_all(xs);
        let (loss, g) = l1_loss(&r, targets)?;
        Ok((loss, self.backprop(xs, &g)))
    }

    /// Serialized form: one JSON header line, then parameters as
    /// little-endian f32.
    pub fn to_bytes(&self, meta: &ModelMeta) -> Result<Vec<u8>> {
        let header = ModelHeader {
            format: MODEL_FORMAT.into(),
            dim: self.dim,
            head: self.head,
            n_params: self.params.len(),
            meta: meta.clone(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for p in &self.params {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(RiskModel, ModelMeta)> {
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::InvalidInput("model file has no header line".into()))?;
        let header: ModelHeader = serde_json::from_slice(&bytes[..nl])?;
        if header.format != MODEL_FORMAT {
            return Err(Error::InvalidInput(format!("unknown model format {:?}", header.format)));
        }
        let body = &bytes[nl + 1..];
        if body.len() != 4 * header.n_params {
            return Err(Error::LengthMismatch(format!("model body has {} bytes, header declares {} parameters", body.len(), header.n_params)));
        }
        let params = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
        Ok((RiskModel::from_params(header.dim, header.head, params)?, header.meta))
    }

    /// Round parameters through f32, matching a save/load cycle.
    pub fn quantized(&self) -> RiskModel {
        RiskModel { params: self.params.iter().map(|p| *p as f32 as f64).collect(), ..self.clone() }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const MODEL_FORMAT: &str = "survmark-head-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    /// "risk" or "age".
    pub task: String,
    pub seed: u64,
    pub epoch: usize,
    pub config: TrainConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    dim: usize,
    head: HeadKind,
    n_params: usize,
    meta: ModelMeta,
}

/// Result of one ranking-loss evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RankLoss {
    pub loss: f64,
    pub pair_loss: f64,
    pub smooth_loss: f64,
    /// Gradient with respect to each risk.
    pub grad: Vec<f64>,
    pub n_pairs: usize,
    /// Set when the batch holds no comparable pair; the pair term is then 0.
    pub no_pairs: bool,
}

/// Logistic ranking loss with smoothness penalty.
pub fn pairwise_rank_loss(risks: &[f64], times: &[f64], events: &[bool], smooth_lambda: f64) -> Result<RankLoss> {
    pairwise_rank_loss_with(risks, times, events, smooth_lambda, LossForm::Logistic)
}

/// Mean pair loss over comparable pairs (i has an event and `t_i < t_j`)
/// plus `smooth_lambda * sum (r_(k+1) - r_(k))^2` in time order.
pub fn pairwise_rank_loss_with(risks: &[f64], times: &[f64], events: &[bool], smooth_lambda: f64, form: LossForm) -> Result<RankLoss> {
    let n = risks.len();
    if times.len() != n || events.len() != n {
        return Err(Error::LengthMismatch(format!("risks {n}, times {}, events {}", times.len(), events.len())));
    }
    let mut grad = vec![0.0; n];
    let mut pair_sum = 0.0;
    let mut n_pairs = 0usize;
    for i in 0..n {
        if !events[i] {
            continue;
        }
        for j in 0..n {
            if times[i] < times[j] {
                let (v, dv) = form.eval(risks[i] - risks[j]);
                pair_sum += v;
                grad[i] += dv;
                grad[j] -= dv;
                n_pairs += 1;
            }
        }
    }
    let pair_loss = if n_pairs > 0 {
        let inv = 1.0 / n_pairs as f64;
        for g in &mut grad {
            *g *= inv;
        }
        pair_sum * inv
    } else {
        0.0
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]).then(a.cmp(&b)));
    let mut smooth = 0.0;
    for w in order.windows(2) {
        let diff = risks[w[1]] - risks[w[0]];
        smooth += diff * diff;
        grad[w[1]] += 2.0 * smooth_lambda * diff;
        grad[w[0]] -= 2.0 * smooth_lambda * diff;
    }
    let smooth_loss = smooth_lambda * smooth;
    Ok(RankLoss { loss: pair_loss + smooth_loss, pair_loss, smooth_loss, grad, n_pairs, no_pairs: n_pairs == 0 })
}

/// Mean absolute error and its subgradient (0 at zero residual).
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(format!("predictions {}, targets {}", pred.len(), target.len())));
    }
    let inv = 1.0 / pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = p - t;
            loss += r.abs();
            if r > 0.0 {
                inv
            } else if r < 0.0 {
                -inv
            } else {
                0.0
            }
        })
        .collect();
    Ok((loss * inv, grad))
}

/// AdamW with PyTorch semantics: decay is applied to the parameters
/// directly before the moment update.
#[derive(Debug, Clone)]
pub struct AdamW {
    lr: f64,
    wd: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        AdamW {
            lr: cfg.learning_rate,
            wd: cfg.weight_decay,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for k in 0..params.len() {
            params[k] -= self.lr * self.wd * params[k];
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * grad[k];
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
            let mhat = self.m[k] / bc1;
            let vhat = self.v[k] / bc2;
            params[k] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Indices of the training and validation subsets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

/// Seed-shuffled order; the last `fraction` (at least one subject) is held out.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    order.shuffle(&mut rng);
    let n_val = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let validation = order.split_off(n - n_val);
    Split { train: order, validation }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochTrace {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub train_c: f64,
    pub val_c: f64,
}

pub fn write_trace_csv<W: Write>(trace: &[EpochTrace], mut w: W) -> Result<()> {
    writeln!(w, "epoch,train_loss,val_loss,train_c,val_c")?;
    for e in trace {
        writeln!(w, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.train_c, e.val_c)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: RiskModel,
    pub trace: Vec<EpochTrace>,
    /// Model after each epoch, in order.
    pub checkpoints: Vec<RiskModel>,
    pub split: Split,
    /// Mini-batches that held no comparable pair.
    pub batches_without_pairs: usize,
    pub loss_form: String,
}

fn subset<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

fn check_embeddings(embeddings: &[Vec<f64>], n: usize) -> Result<usize> {
    if embeddings.is_empty() {
        return Err(Error::EmptyInput);
    }
    if embeddings.len() != n {
        return Err(Error::LengthMismatch(format!("{} embeddings, {} labels", embeddings.len(), n)));
    }
    let dim = embeddings[0].len();
    if dim == 0 {
        return Err(Error::InvalidInput("embedding dimension is 0".into()));
    }
    if let Some(i) = embeddings.iter().position(|e| e.len() != dim) {
        return Err(Error::LengthMismatch(format!("embedding {i} has length {}, expected {dim}", embeddings[i].len())));
    }
    Ok(dim)
}

fn c_or_nan(risk: &[f64], times: &[f64], events: &[bool]) -> f64 {
    harrell_c(risk, times, events).map(|c| c.c_index).unwrap_or(f64::NAN)
}

fn epoch_order(train: &[usize], epoch: usize, cfg: &TrainConfig) -> Vec<usize> {
    let mut order = train.to_vec();
    if cfg.shuffle_each_epoch {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(EPOCH_STREAM + epoch as u64);
        order.shuffle(&mut rng);
    }
    order
}

/// Mini-batch AdamW on the ranking loss. Requires at least two events.
pub fn train_risk_model(embeddings: &[Vec<f64>], times: &[f64], events: &[bool], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = times.len();
    let dim = check_embeddings(embeddings, n)?;
    if events.len() != n {
        return Err(Error::LengthMismatch(format!("times {n}, events {}", events.len())));
    }
    if events.iter().filter(|&&e| e).count() < 2 {
        return Err(Error::Degenerate("fewer than two events".into()));
    }
    let split = split_indices(n, cfg.validation_fraction, cfg.seed);
    let (xt, tt, et) = (subset(embeddings, &split.train), subset(times, &split.train), subset(events, &split.train));
    let (xv, tv, ev) = (subset(embeddings, &split.validation), subset(times, &split.validation), subset(events, &split.validation));

    let mut model = RiskModel::init(dim, cfg.head, cfg.init_scale, cfg.seed);
    let mut opt = AdamW::new(model.params.len(), cfg);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut batches_without_pairs = 0;
    let local: Vec<usize> = (0..split.train.len()).collect();

    for epoch in 1..=cfg.epochs {
        let order = epoch_order(&local, epoch, cfg);
        for batch in order.chunks(cfg.batch_size) {
            let bx = subset(&xt, batch);
            let bt = subset(&tt, batch);
            let be = subset(&et, batch);
            let r = model.predict_all(&bx);
            let l = pairwise_rank_loss_with(&r, &bt, &be, cfg.smooth_lambda, cfg.loss)?;
            if l.no_pairs {
                batches_without_pairs += 1;
            }
            let g = model.backprop(&bx, &l.grad);
            opt.step(&mut model.params, &g);
        }
        let rt = model.predict_all(&xt);
        let rv = model.predict_all(&xv);
        trace.push(EpochTrace {
            epoch,
            train_loss: pairwise_rank_loss_with(&rt, &tt, &et, cfg.smooth_lambda, cfg.loss)?.loss,
            val_loss: pairwise_rank_loss_with(&rv, &tv, &ev, cfg.smooth_lambda, cfg.loss)?.loss,
            train_c: c_or_nan(&rt, &tt, &et),
            val_c: c_or_nan(&rv, &tv, &ev),
        });
        checkpoints.push(model.clone());
    }
    Ok(TrainOutcome { model, trace, checkpoints, split, batches_without_pairs, loss_form: cfg.loss.label() })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeEpoch {
    pub epoch: usize,
    pub train_mae: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone)]
pub struct AgeOutcome {
    pub model: RiskModel,
    pub trace: Vec<AgeEpoch>,
    pub split: Split,
}

/// Mini-batch AdamW on mean absolute error.
pub fn train_age_model(embeddings: &[Vec<f64>], ages: &[f64], cfg: &TrainConfig) -> Result<AgeOutcome> {
    cfg.validate()?;
    let n = ages.len();
    let dim = check_embeddings(embeddings, n)?;
    if let Some(a) = ages.iter().find(|a| !(**a >= 0.0)) {
        return Err(Error::OutOfRange(format!("age {a}")));
    }
    let split = split_indices(n, cfg.validation_fraction, cfg.seed);
    let (xt, yt) = (subset(embeddings, &split.train), subset(ages, &split.train));
    let (xv, yv) = (subset(embeddings, &split.validation), subset(ages, &split.validation));

    let mut model = RiskModel::init(dim, cfg.head, cfg.init_scale, cfg.seed);
    let mut opt = AdamW::new(model.params.len(), cfg);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let local: Vec<usize> = (0..split.train.len()).collect();
    for epoch in 1..=cfg.epochs {
        for batch in epoch_order(&local, epoch, cfg).chunks(cfg.batch_size) {
            let (_, g) = model.l1_loss_grad(&subset(&xt, batch), &subset(&yt, batch))?;
            opt.step(&mut model.params, &g);
        }
        trace.push(AgeEpoch {
            epoch,
            train_mae: l1_loss(&model.predict_all(&xt), &yt)?.0,
            val_mae: l1_loss(&model.predict_all(&xv), &yv)?.0,
        });
    }
    Ok(AgeOutcome { model, trace, split })
}

/// Replication factor per age range; ranges are `[lower, upper)` except
/// the last, which includes its upper bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorTable {
    pub ranges: Vec<FactorRange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorRange {
    pub lower: f64,
    pub upper: f64,
    pub factor: u32,
}

impl Default for FactorTable {
    /// 1 below 50, then 2, 3, 5, 8, 8, 12, 12, 16, 16 per 5-year range and
    /// 20 for 95 to 116.
    fn default() -> Self {
        let mut ranges = vec![FactorRange { lower: 0.0, upper: 50.0, factor: 1 }];
        let steps = [2, 3, 5, 8, 8, 12, 12, 16, 16];
        for (k, f) in steps.iter().enumerate() {
            let lo = 50.0 + 5.0 * k as f64;
            ranges.push(FactorRange { lower: lo, upper: lo + 5.0, factor: *f });
        }
        ranges.push(FactorRange { lower: 95.0, upper: 116.0, factor: 20 });
        FactorTable { ranges }
    }
}

impl FactorTable {
    pub fn validate(&self) -> Result<()> {
        if self.ranges.is_empty() {
            return Err(Error::EmptyInput);
        }
        for r in &self.ranges {
            if r.factor < 1 || !(r.lower < r.upper) {
                return Err(Error::InvalidInput(format!("bad factor range [{}, {}) x{}", r.lower, r.upper, r.factor)));
            }
        }
        Ok(())
    }

    pub fn factor(&self, age: f64) -> Result<u32> {
        let last = self.ranges.len() - 1;
        self.ranges
            .iter()
            .enumerate()
            .find(|(k, r)| age >= r.lower && (age < r.upper || (*k == last && age == r.upper)))
            .map(|(_, r)| r.factor)
            .ok_or_else(|| Error::OutOfRange(format!("age {age} outside the factor table")))
    }
}

fn shuffled(mut v: Vec<usize>, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    v.shuffle(&mut rng);
    v
}

/// Each record repeated by its factor; output order shuffled by seed.
pub fn balance_by_factors(ages: &[f64], table: &FactorTable, seed: u64) -> Result<Vec<usize>> {
    table.validate()?;
    let mut out = Vec::new();
    for (i, &a) in ages.iter().enumerate() {
        let f = table.factor(a)?;
        out.extend(std::iter::repeat_n(i, f as usize));
    }
    Ok(shuffled(out, seed, 0))
}

/// Bin index (lower edge / width) of an age.
pub fn age_bin(age: f64, width: f64) -> i64 {
    (age / width).floor() as i64
}

/// Every nonempty bin resampled to exactly `target` indices: subsample
/// without replacement when larger, otherwise every original once plus
/// uniform draws with replacement. Output order shuffled by seed.
pub fn balance_bins(ages: &[f64], bin_width: f64, target: usize, seed: u64) -> Result<Vec<usize>> {
    if target == 0 {
        return Err(Error::InvalidInput("target bin size must be > 0".into()));
    }
    if !(bin_width > 0.0) {
        return Err(Error::InvalidInput("bin width must be > 0".into()));
    }
    if let Some(a) = ages.iter().find(|a| !a.is_finite()) {
        return Err(Error::InvalidInput(format!("age {a}")));
    }
    let mut bins: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &a) in ages.iter().enumerate() {
        bins.entry(age_bin(a, bin_width)).or_default().push(i);
    }
    let mut out = Vec::with_capacity(bins.len() * target);
    for (k, (&bin, members)) in bins.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + k as u64);
        let _ = bin;
        if members.len() >= target {
            out.extend(members.choose_multiple(&mut rng, target).copied());
        } else {
            out.extend_from_slice(members);
            for _ in members.len()..target {
                out.push(*members.choose(&mut rng).unwrap());
            }
        }
    }
    Ok(shuffled(out, seed, 0))
}

/// Count of indices per bin lower edge.
pub fn bin_counts(ages: &[f64], indices: &[usize], bin_width: f64) -> BTreeMap<i64, usize> {
    let mut counts = BTreeMap::new();
    for &i in indices {
        *counts.entry(age_bin(ages[i], bin_width) * bin_width as i64).or_insert(0) += 1;
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceMode {
    FactorTable,
    BinToSize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BalancePlan {
    pub mode: BalanceMode,
    pub factor_table: FactorTable,
    pub bin_width: f64,
    pub target_bin_size: usize,
    pub seed: u64,
}

impl Default for BalancePlan {
    fn default() -> Self {
        BalancePlan { mode: BalanceMode::BinToSize, factor_table: FactorTable::default(), bin_width: 5.0, target_bin_size: 200, seed: 0 }
    }
}

pub fn balance(ages: &[f64], plan: &BalancePlan) -> Result<Vec<usize>> {
    match plan.mode {
        BalanceMode::FactorTable => balance_by_factors(ages, &plan.factor_table, plan.seed),
        BalanceMode::BinToSize => balance_bins(ages, plan.bin_width, plan.target_bin_size, plan.seed),
    }
}

/// Read a model file from any reader.
pub fn read_model<R: BufRead>(mut r: R) -> Result<(RiskModel, ModelMeta)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    RiskModel::from_bytes(&bytes)
}
