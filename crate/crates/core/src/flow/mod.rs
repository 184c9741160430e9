//! Rectified flow: straight-line corruption `x_t = (1-t) x0 + t eps`,
//! velocity matching against `eps - x0`, LogitNormal time sampling and Euler
//! sampling with optional classifier-free guidance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ShapeLatent;
use crate::rng::Rng;
use crate::seed::{derive_seed, sub_seed};
use crate::tensor::{clip_global_norm, AdamWConfig, AdamWState, Graph, LoraAdapter, MlpModel, ModelVars, Tensor, Trainable, Var};

pub fn corrupt(x0: &[f64], t: f64, eps: &[f64]) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::input(format!("t = {t} outside [0, 1]")));
    }
    if x0.len() != eps.len() {
        return Err(Error::input("x0 and noise differ in length"));
    }
    Ok(x0.iter().zip(eps).map(|(x, e)| (1.0 - t) * x + t * e).collect())
}

pub fn velocity_target(x0: &[f64], eps: &[f64]) -> Vec<f64> {
    x0.iter().zip(eps).map(|(x, e)| e - x).collect()
}

/// `t = sigmoid(z)`, `z ~ N(mu, sigma^2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSampler {
    pub mu: f64,
    pub sigma: f64,
}

impl Default for TimeSampler {
    fn default() -> Self {
        TimeSampler { mu: 1.0, sigma: 1.0 }
    }
}

impl TimeSampler {
    pub fn draw(&self, rng: &mut Rng) -> f64 {
        loop {
            let z = self.mu + self.sigma * rng.normal();
            let t = 1.0 / (1.0 + (-z).exp());
            if t > 0.0 && t < 1.0 {
                return t;
            }
        }
    }
}

pub fn sample_time(n: usize, seed: u64) -> Vec<f64> {
    let sampler = TimeSampler::default();
    let mut rng = Rng::new(seed);
    (0..n).map(|_| sampler.draw(&mut rng)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuidanceConfig {
    /// Probability of replacing the condition by the null condition in training.
    pub cond_drop: f64,
    /// Guidance scale; 1 samples the conditional model only.
    pub scale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig { cond_drop: 0.1, scale: 1.0 }
    }
}

impl GuidanceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.cond_drop) {
            return Err(Error::config("condition drop must lie in [0, 1)"));
        }
        if !(self.scale >= 0.0) {
            return Err(Error::config("guidance scale must be non-negative"));
        }
        Ok(())
    }
}

/// Rows of clean latents with their conditions.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowBatch {
    pub x0: Tensor,
    pub cond: Tensor,
}

impl FlowBatch {
    pub fn new(x0: Vec<Vec<f64>>, cond: Vec<Vec<f64>>) -> Result<Self> {
        if x0.is_empty() || x0.len() != cond.len() {
            return Err(Error::input("batch must be nonempty with one condition per latent"));
        }
        let (d, c) = (x0[0].len(), cond[0].len());
        if x0.iter().any(|r| r.len() != d) || cond.iter().any(|r| r.len() != c) {
            return Err(Error::input("ragged batch"));
        }
        let n = x0.len();
        Ok(FlowBatch {
            x0: Tensor::matrix(n, d, x0.concat())?,
            cond: Tensor::matrix(n, c, cond.concat())?,
        })
    }

    pub fn len(&self) -> usize {
        self.x0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-element times and noise; element `i` draws from its own stream.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    pub t: Vec<f64>,
    pub eps: Tensor,
}

pub fn draw_noise(n: usize, dim: usize, seed: u64) -> NoiseDraw {
    let sampler = TimeSampler::default();
    let mut t = Vec::with_capacity(n);
    let mut eps = Vec::with_capacity(n * dim);
    for i in 0..n {
        let mut rng = Rng::for_item(seed, i as u64);
        t.push(sampler.draw(&mut rng));
        eps.extend(rng.normal_vec(dim));
    }
    NoiseDraw {
        t,
        eps: Tensor::matrix(n, dim, eps).expect("shape"),
    }
}

/// Corrupted inputs and velocity targets for a batch.
pub fn flow_targets(x0: &Tensor, noise: &NoiseDraw) -> Result<(Tensor, Tensor)> {
    let (n, d) = (x0.rows(), x0.cols());
    if noise.eps.rows() != n || noise.eps.cols() != d || noise.t.len() != n {
        return Err(Error::input("noise draw does not match batch"));
    }
    let mut xt = Vec::with_capacity(n * d);
    let mut v = Vec::with_capacity(n * d);
    for i in 0..n {
        xt.extend(corrupt(x0.row(i), noise.t[i], noise.eps.row(i))?);
        v.extend(velocity_target(x0.row(i), noise.eps.row(i)));
    }
    Ok((Tensor::matrix(n, d, xt)?, Tensor::matrix(n, d, v)?))
}

/// Traced per-row squared velocity error `||v_hat - v||^2`, shape `[n]`.
pub fn traced_row_errors(
    g: &mut Graph,
    vars: &ModelVars,
    model: &MlpModel,
    x0: &Tensor,
    cond: &Tensor,
    noise: &NoiseDraw,
) -> Result<Var> {
    let (xt, v) = flow_targets(x0, noise)?;
    let input = g.constant(model.build_input(&xt, cond, &noise.t)?);
    let pred = vars.forward(g, input)?;
    let target = g.constant(v);
    let diff = g.sub(pred, target)?;
    Ok(g.row_sq_norm(diff))
}

/// Mean over rows of `w_i ||v_hat - v||^2`, traced. Unit weights give the
/// plain flow-matching loss.
pub fn traced_weighted_loss(
    g: &mut Graph,
    vars: &ModelVars,
    model: &MlpModel,
    batch: &FlowBatch,
    weights: Vec<f64>,
    seed: u64,
) -> Result<Var> {
    let noise = draw_noise(batch.len(), model.latent_dim(), seed);
    let err = traced_row_errors(g, vars, model, &batch.x0, &batch.cond, &noise)?;
    g.weighted_mean(err, weights)
}

pub fn fm_loss(model: &MlpModel, adapter: Option<&LoraAdapter>, batch: &FlowBatch, seed: u64) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, adapter, Trainable::Nothing)?;
    let loss = traced_weighted_loss(&mut g, &vars, model, batch, vec![1.0; batch.len()], seed)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::numeric("non-finite flow-matching loss"));
    }
    Ok(value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOutput {
    pub latent: ShapeLatent,
    pub valid: bool,
}

/// Euler integration from `t = 1` to `t = 0` for a single condition.
pub fn sample(
    model: &MlpModel,
    adapter: Option<&LoraAdapter>,
    cond: &[f64],
    steps: usize,
    guidance: &GuidanceConfig,
    seed: u64,
) -> Result<SampleOutput> {
    let cond = Tensor::matrix(1, cond.len(), cond.to_vec())?;
    Ok(sample_batch(model, adapter, &cond, steps, guidance, &[seed])?.remove(0))
}

const SAMPLE_CHUNK: usize = 64;

/// Samples one latent per condition row; row `i` starts from noise seeded by
/// `seeds[i]`. Rows are independent, so chunks run in parallel without
/// affecting the result.
pub fn sample_batch(
    model: &MlpModel,
    adapter: Option<&LoraAdapter>,
    cond: &Tensor,
    steps: usize,
    guidance: &GuidanceConfig,
    seeds: &[u64],
) -> Result<Vec<SampleOutput>> {
    if steps == 0 {
        return Err(Error::input("sampling needs at least one step"));
    }
    if cond.rows() != seeds.len() {
        return Err(Error::input("one seed per condition row required"));
    }
    if cond.cols() != model.cond_dim() {
        return Err(Error::input(format!("condition width {} != {}", cond.cols(), model.cond_dim())));
    }
    let c = cond.cols();
    let chunks: Vec<Result<Vec<SampleOutput>>> = seeds
        .par_chunks(SAMPLE_CHUNK)
        .enumerate()
        .map(|(k, chunk)| {
            let start = k * SAMPLE_CHUNK;
            let rows = cond.values()[start * c..(start + chunk.len()) * c].to_vec();
            let cond = Tensor::matrix(chunk.len(), c, rows)?;
            sample_chunk(model, adapter, &cond, steps, guidance, chunk)
        })
        .collect();
    let mut out = Vec::with_capacity(seeds.len());
    for r in chunks {
        out.extend(r?);
    }
    Ok(out)
}

fn sample_chunk(
    model: &MlpModel,
    adapter: Option<&LoraAdapter>,
    cond: &Tensor,
    steps: usize,
    guidance: &GuidanceConfig,
    seeds: &[u64],
) -> Result<Vec<SampleOutput>> {
    let (n, d) = (seeds.len(), model.latent_dim());
    let mut x: Vec<f64> = seeds.iter().flat_map(|s| Rng::new(*s).normal_vec(d)).collect();
    let null = Tensor::zeros(cond.shape());
    let dt = 1.0 / steps as f64;
    let guided = guidance.scale != 1.0;
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let times = vec![t; n];
        let xt = Tensor::matrix(n, d, x.clone())?;
        let mut v = model.forward_batch(adapter, &xt, cond, &times)?.into_values();
        if guided {
            let vu = model.forward_batch(adapter, &xt, &null, &times)?;
            for (vc, u) in v.iter_mut().zip(vu.values()) {
                *vc = u + guidance.scale * (*vc - u);
            }
        }
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi -= dt * vi;
        }
    }
    Ok(x.chunks(d)
        .map(|row| SampleOutput {
            valid: row.iter().all(|v| v.is_finite()),
            latent: ShapeLatent::new(row.to_vec()),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub cond_drop: f64,
    pub clip: f64,
    /// The learning rate decays linearly to this fraction of its peak by the
    /// last step.
    pub final_lr_fraction: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 20_000,
            batch_size: 48,
            optimizer: AdamWConfig {
                lr: 1e-3,
                weight_decay: 0.0,
                warmup_steps: 500,
                ..AdamWConfig::default()
            },
            cond_drop: 0.1,
            clip: 1.0,
            final_lr_fraction: 0.05,
            seed: 0,
        }
    }
}

/// Full-parameter flow-matching training of the base model on `(x0, cond)`
/// rows, batches drawn uniformly with replacement.
pub fn pretrain(mut model: MlpModel, data: &FlowBatch, cfg: &PretrainConfig) -> Result<(MlpModel, Vec<TrainLogRecord>)> {
    if data.is_empty() || cfg.batch_size == 0 {
        return Err(Error::input("pretraining needs data and a positive batch size"));
    }
    if !(0.0..1.0).contains(&cfg.cond_drop) {
        return Err(Error::config("condition drop must lie in [0, 1)"));
    }
    if !(0.0..=1.0).contains(&cfg.final_lr_fraction) {
        return Err(Error::config("final learning-rate fraction must lie in [0, 1]"));
    }
    let batch_seed = derive_seed(cfg.seed, "pretrain-batch");
    let noise_seed = derive_seed(cfg.seed, "pretrain-noise");
    let mut opt = AdamWState::new(cfg.optimizer.clone(), &model.parameters());
    let mut log = Vec::with_capacity(cfg.steps);
    let (d, c) = (data.x0.cols(), data.cond.cols());
    let peak = cfg.optimizer.lr;
    for step in 0..cfg.steps {
        opt.config.lr = peak * (1.0 - (1.0 - cfg.final_lr_fraction) * step as f64 / cfg.steps as f64);
        let mut rng = Rng::for_item(batch_seed, step as u64);
        let mut x0 = Vec::with_capacity(cfg.batch_size * d);
        let mut cond = Vec::with_capacity(cfg.batch_size * c);
        for _ in 0..cfg.batch_size {
            let i = rng.below(data.len());
            x0.extend_from_slice(data.x0.row(i));
            if rng.uniform() < cfg.cond_drop {
                cond.extend(std::iter::repeat(0.0).take(c));
            } else {
                cond.extend_from_slice(data.cond.row(i));
            }
        }
        let batch = FlowBatch {
            x0: Tensor::matrix(cfg.batch_size, d, x0)?,
            cond: Tensor::matrix(cfg.batch_size, c, cond)?,
        };
        let mut g = Graph::new();
        let vars = model.bind(&mut g, None, Trainable::Base)?;
        let loss = traced_weighted_loss(&mut g, &vars, &model, &batch, vec![1.0; cfg.batch_size], sub_seed(noise_seed, step as u64))?;
        let mut grads_all = g.backward(loss)?;
        let mut grads: Vec<Tensor> = vars
            .trainable(Trainable::Base)
            .into_iter()
            .map(|v| grads_all.take(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect();
        let grad_norm = clip_global_norm(&mut grads, cfg.clip);
        let report = opt.step(&mut model.parameters_mut(), &grads)?;
        log.push(TrainLogRecord {
            step: report.step,
            loss: g.value(loss).item(),
            grad_norm,
            lr: report.lr,
        });
    }
    Ok((model, log))
}
