use serde::{Deserialize, Serialize};

use super::{make_pairs, reward_samples, stable_subset, traced_dpo_loss, traced_dro_loss, traced_sft_loss, PreferencePair, RewardSample};
use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::flow::TrainLogRecord;
use crate::rng::Rng;
use crate::seed::{derive_seed, sub_seed};
use crate::tensor::{clip_global_norm, lora_merge, AdamWConfig, AdamWState, CheckpointMeta, Graph, LoraAdapter, MlpModel, ModelCheckpoint, Tensor, Trainable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Dro,
    Dpo,
    Sft,
}

impl std::str::FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dro" => Ok(Objective::Dro),
            "dpo" => Ok(Objective::Dpo),
            "sft" => Ok(Objective::Sft),
            other => Err(Error::config(format!("unknown objective `{other}` (dro, dpo, sft)"))),
        }
    }
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Dro => "dro",
            Objective::Dpo => "dpo",
            Objective::Sft => "sft",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DsoConfig {
    pub objective: Objective,
    pub beta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    /// Global gradient-norm clip.
    pub clip: f64,
    pub seed: u64,
}

impl Default for DsoConfig {
    fn default() -> Self {
        DsoConfig {
            objective: Objective::Dro,
            beta: 500.0,
            steps: 4000,
            batch_size: 48,
            optimizer: AdamWConfig::default(),
            lora_rank: 8,
            lora_alpha: 16.0,
            clip: 1.0,
            seed: 0,
        }
    }
}

impl DsoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objective == Objective::Dpo && !(self.beta > 0.0) {
            return Err(Error::config("beta must be positive for DPO"));
        }
        if self.batch_size == 0 || self.lora_rank == 0 {
            return Err(Error::config("batch size and LoRA rank must be positive"));
        }
        if !(self.clip > 0.0) || !(self.optimizer.lr >= 0.0) {
            return Err(Error::config("clip must be positive and lr non-negative"));
        }
        Ok(())
    }
}

/// Called after every step with the step number, the base model and the
/// current adapter; returning `true` stops training.
pub type StopHook<'a> = &'a mut dyn FnMut(u64, &MlpModel, &LoraAdapter) -> bool;

#[derive(Clone, Debug)]
pub struct FinetuneOutput {
    pub checkpoint: ModelCheckpoint,
    pub log: Vec<TrainLogRecord>,
    pub stopped_early: bool,
    /// Set when a non-finite loss or gradient ended training; the checkpoint
    /// then holds the last good adapter.
    pub aborted: Option<String>,
}

enum Source {
    Samples(Vec<RewardSample>),
    Pairs {
        samples: Vec<RewardSample>,
        epoch: u64,
        pairs: Vec<PreferencePair>,
        cursor: usize,
    },
}

/// Trains a fresh LoRA adapter on top of `base` (any adapter already in
/// `base` is merged first) with AdamW, warmup and gradient clipping.
pub fn finetune(base: &ModelCheckpoint, ds: &Dataset, cfg: &DsoConfig, mut hook: Option<StopHook>) -> Result<FinetuneOutput> {
    cfg.validate()?;
    let model = match &base.adapter {
        Some(ad) => lora_merge(&base.model, ad.clone())?,
        None => base.model.clone(),
    };
    let samples = reward_samples(ds);
    if samples.is_empty() {
        return Err(Error::input("dataset has no labeled rollouts"));
    }
    let pair_seed = derive_seed(cfg.seed, "finetune-pairs");
    let mut source = match cfg.objective {
        Objective::Dro => Source::Samples(samples),
        Objective::Sft => Source::Samples(stable_subset(&samples)?),
        Objective::Dpo => {
            let (pairs, _) = make_pairs(&samples, sub_seed(pair_seed, 0))?;
            Source::Pairs {
                samples,
                epoch: 0,
                pairs,
                cursor: 0,
            }
        }
    };
    let mut adapter = LoraAdapter::init(&model, cfg.lora_rank, cfg.lora_alpha, derive_seed(cfg.seed, "finetune-lora"));
    let mut opt = AdamWState::new(cfg.optimizer.clone(), &adapter.parameters());
    let batch_seed = derive_seed(cfg.seed, "finetune-batch");
    let noise_seed = derive_seed(cfg.seed, "finetune-noise");
    let mut log = Vec::with_capacity(cfg.steps);
    let mut stopped_early = false;
    let mut aborted = None;
    for step in 0..cfg.steps {
        let noise = sub_seed(noise_seed, step as u64);
        let mut g = Graph::new();
        let vars = model.bind(&mut g, Some(&adapter), Trainable::Adapter)?;
        let loss = match &mut source {
            Source::Samples(pool) => {
                let mut rng = Rng::for_item(batch_seed, step as u64);
                let batch: Vec<&RewardSample> = (0..cfg.batch_size).map(|_| &pool[rng.below(pool.len())]).collect();
                if cfg.objective == Objective::Sft {
                    traced_sft_loss(&mut g, &vars, &model, &batch, noise)?
                } else {
                    traced_dro_loss(&mut g, &vars, &model, &batch, noise)?
                }
            }
            Source::Pairs {
                samples,
                epoch,
                pairs,
                cursor,
            } => {
                if *cursor >= pairs.len() {
                    *epoch += 1;
                    *pairs = make_pairs(samples, sub_seed(pair_seed, *epoch))?.0;
                    *cursor = 0;
                }
                let end = (*cursor + cfg.batch_size).min(pairs.len());
                let batch: Vec<&PreferencePair> = pairs[*cursor..end].iter().collect();
                *cursor = end;
                traced_dpo_loss(&mut g, &vars, &model, &model, &batch, cfg.beta, noise)?
            }
        };
        let loss_value = g.value(loss).item();
        let mut grads_all = match g.backward(loss) {
            Ok(gr) => gr,
            Err(e @ Error::Numeric(_)) => {
                aborted = Some(format!("step {}: {e}", step + 1));
                break;
            }
            Err(e) => return Err(e),
        };
        let mut grads: Vec<Tensor> = vars
            .trainable(Trainable::Adapter)
            .into_iter()
            .map(|v| grads_all.take(v).unwrap_or_else(|| Tensor::zeros(g.value(v).shape())))
            .collect();
        let grad_norm = clip_global_norm(&mut grads, cfg.clip);
        let report = match opt.step(&mut adapter.parameters_mut(), &grads) {
            Ok(r) => r,
            Err(e @ Error::Numeric(_)) => {
                aborted = Some(format!("step {}: {e}", step + 1));
                break;
            }
            Err(e) => return Err(e),
        };
        log.push(TrainLogRecord {
            step: report.step,
            loss: loss_value,
            grad_norm,
            lr: report.lr,
        });
        if let Some(h) = hook.as_mut() {
            if h(report.step, &model, &adapter) {
                stopped_early = true;
                break;
            }
        }
    }
    let meta = CheckpointMeta {
        seed: cfg.seed,
        label: format!("finetune-{}", cfg.objective.name()),
        train_steps: base.meta.train_steps + log.len() as u64,
    };
    Ok(FinetuneOutput {
        checkpoint: ModelCheckpoint::new(model, Some(adapter), meta),
        log,
        stopped_early,
        aborted,
    })
}
