//! Simulation-feedback objectives: DRO (signed flow-matching loss), DPO
//! (contrastive loss against a frozen reference) and SFT on the stable
//! subset, plus the LoRA fine-tuning loop.

mod identities;
mod train;

pub use identities::{verify_derivation_identities, DerivationReport};
pub use train::{finetune, DsoConfig, FinetuneOutput, Objective, StopHook};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::flow::{flow_targets, traced_weighted_loss, FlowBatch, NoiseDraw, TimeSampler};
use crate::rng::Rng;
use crate::tensor::{Graph, LoraAdapter, MlpModel, ModelVars, Tensor, Trainable, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardSample {
    pub prompt_id: String,
    pub x0: Vec<f64>,
    pub cond: Vec<f64>,
    pub o: u8,
    pub tilt_deg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub prompt_id: String,
    pub winner: Vec<f64>,
    pub loser: Vec<f64>,
    pub cond: Vec<f64>,
}

/// Labeled, decodable rollouts of a dataset.
pub fn reward_samples(ds: &Dataset) -> Vec<RewardSample> {
    ds.rollouts
        .iter()
        .filter(|r| r.valid && r.latent.iter().all(|v| v.is_finite()))
        .filter_map(|r| {
            Some(RewardSample {
                prompt_id: r.prompt_id.clone(),
                x0: r.latent.clone(),
                cond: r.cond.clone(),
                o: r.o?,
                tilt_deg: r.tilt_deg?,
            })
        })
        .collect()
}

pub fn stable_subset(samples: &[RewardSample]) -> Result<Vec<RewardSample>> {
    let out: Vec<RewardSample> = samples.iter().filter(|s| s.o == 1).cloned().collect();
    if out.is_empty() {
        return Err(Error::input("no stable samples to fine-tune on"));
    }
    Ok(out)
}

fn check_labels(batch: &[&RewardSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::input("empty batch"));
    }
    if batch.iter().any(|s| s.o > 1) {
        return Err(Error::input("labels must be 0 or 1"));
    }
    Ok(())
}

fn to_batch(batch: &[&RewardSample]) -> Result<FlowBatch> {
    FlowBatch::new(
        batch.iter().map(|s| s.x0.clone()).collect(),
        batch.iter().map(|s| s.cond.clone()).collect(),
    )
}

/// Traced DRO loss: mean of `(2o - 1) ||v_hat - v||^2`.
pub fn traced_dro_loss(g: &mut Graph, vars: &ModelVars, model: &MlpModel, batch: &[&RewardSample], seed: u64) -> Result<Var> {
    check_labels(batch)?;
    let weights = batch.iter().map(|s| 2.0 * s.o as f64 - 1.0).collect();
    traced_weighted_loss(g, vars, model, &to_batch(batch)?, weights, seed)
}

/// Traced flow-matching loss on a batch (the SFT objective).
pub fn traced_sft_loss(g: &mut Graph, vars: &ModelVars, model: &MlpModel, batch: &[&RewardSample], seed: u64) -> Result<Var> {
    check_labels(batch)?;
    traced_weighted_loss(g, vars, model, &to_batch(batch)?, vec![1.0; batch.len()], seed)
}

fn eval_scalar(
    model: &MlpModel,
    adapter: Option<&LoraAdapter>,
    f: impl FnOnce(&mut Graph, &ModelVars) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, adapter, Trainable::Nothing)?;
    let loss = f(&mut g, &vars)?;
    let v = g.value(loss).item();
    if !v.is_finite() {
        return Err(Error::numeric("non-finite loss"));
    }
    Ok(v)
}

pub fn dro_loss(model: &MlpModel, adapter: Option<&LoraAdapter>, batch: &[RewardSample], seed: u64) -> Result<f64> {
    let refs: Vec<&RewardSample> = batch.iter().collect();
    eval_scalar(model, adapter, |g, v| traced_dro_loss(g, v, model, &refs, seed))
}

pub fn sft_loss(model: &MlpModel, adapter: Option<&LoraAdapter>, batch: &[RewardSample], seed: u64) -> Result<f64> {
    let refs: Vec<&RewardSample> = batch.iter().collect();
    eval_scalar(model, adapter, |g, v| traced_sft_loss(g, v, model, &refs, seed))
}

/// Shared time, independent winner/loser noise for each pair.
pub fn draw_pair_noise(n: usize, dim: usize, seed: u64) -> (NoiseDraw, NoiseDraw) {
    let sampler = TimeSampler::default();
    let (mut t, mut ew, mut el) = (Vec::with_capacity(n), Vec::with_capacity(n * dim), Vec::with_capacity(n * dim));
    for i in 0..n {
        let mut rng = Rng::for_item(seed, i as u64);
        t.push(sampler.draw(&mut rng));
        ew.extend(rng.normal_vec(dim));
        el.extend(rng.normal_vec(dim));
    }
    (
        NoiseDraw {
            t: t.clone(),
            eps: Tensor::matrix(n, dim, ew).expect("shape"),
        },
        NoiseDraw {
            t,
            eps: Tensor::matrix(n, dim, el).expect("shape"),
        },
    )
}

fn pair_tensors(pairs: &[&PreferencePair]) -> Result<(Tensor, Tensor, Tensor)> {
    let n = pairs.len();
    let d = pairs[0].winner.len();
    let c = pairs[0].cond.len();
    let w = Tensor::matrix(n, d, pairs.iter().flat_map(|p| p.winner.iter().copied()).collect())?;
    let l = Tensor::matrix(n, d, pairs.iter().flat_map(|p| p.loser.iter().copied()).collect())?;
    let cond = Tensor::matrix(n, c, pairs.iter().flat_map(|p| p.cond.iter().copied()).collect())?;
    Ok((w, l, cond))
}

/// Per-row `||v_hat - v||^2` of the frozen reference.
fn reference_errors(reference: &MlpModel, x0: &Tensor, cond: &Tensor, noise: &NoiseDraw) -> Result<Vec<f64>> {
    let (xt, v) = flow_targets(x0, noise)?;
    let pred = reference.forward_batch(None, &xt, cond, &noise.t)?;
    let d = x0.cols();
    Ok((0..x0.rows())
        .map(|i| {
            pred.row(i)
                .iter()
                .zip(&v.values()[i * d..(i + 1) * d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum()
        })
        .collect())
}

/// Traced DPO loss: mean of `softplus(beta * [(e_w - e_w_ref) - (e_l - e_l_ref)])`,
/// i.e. `-log sigmoid(-beta * margin)`.
pub fn traced_dpo_loss(
    g: &mut Graph,
    vars: &ModelVars,
    model: &MlpModel,
    reference: &MlpModel,
    pairs: &[&PreferencePair],
    beta: f64,
    seed: u64,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::input("empty pair batch"));
    }
    if !(beta > 0.0) {
        return Err(Error::input("beta must be positive"));
    }
    let (w, l, cond) = pair_tensors(pairs)?;
    let (nw, nl) = draw_pair_noise(pairs.len(), w.cols(), seed);
    let ref_w = reference_errors(reference, &w, &cond, &nw)?;
    let ref_l = reference_errors(reference, &l, &cond, &nl)?;
    let ew = crate::flow::traced_row_errors(g, vars, model, &w, &cond, &nw)?;
    let el = crate::flow::traced_row_errors(g, vars, model, &l, &cond, &nl)?;
    let diff = g.sub(ew, el)?;
    let ref_diff: Vec<f64> = ref_w.iter().zip(&ref_l).map(|(a, b)| a - b).collect();
    let ref_diff = g.constant(Tensor::vector(ref_diff));
    let margin = g.sub(diff, ref_diff)?;
    let scaled = g.scale(margin, beta);
    let per_pair = g.softplus(scaled);
    g.mean(per_pair)
}

pub fn dpo_loss(
    model: &MlpModel,
    adapter: Option<&LoraAdapter>,
    reference: &MlpModel,
    pairs: &[PreferencePair],
    beta: f64,
    seed: u64,
) -> Result<f64> {
    let refs: Vec<&PreferencePair> = pairs.iter().collect();
    eval_scalar(model, adapter, |g, v| traced_dpo_loss(g, v, model, reference, &refs, beta, seed))
}

/// Pairs for one epoch: per prompt, shuffled winners and losers are zipped
/// into `min(#stable, #unstable)` disjoint pairs. Returns the pairs and the
/// number of prompts skipped for lacking one of the classes.
pub fn make_pairs(samples: &[RewardSample], seed: u64) -> Result<(Vec<PreferencePair>, usize)> {
    let mut groups: BTreeMap<&str, (Vec<&RewardSample>, Vec<&RewardSample>)> = BTreeMap::new();
    for s in samples {
        let e = groups.entry(s.prompt_id.as_str()).or_default();
        if s.o == 1 {
            e.0.push(s);
        } else {
            e.1.push(s);
        }
    }
    let mut pairs = Vec::new();
    let mut skipped = 0;
    for (k, (prompt, (mut wins, mut losses))) in groups.into_iter().enumerate() {
        if wins.is_empty() || losses.is_empty() {
            skipped += 1;
            continue;
        }
        let mut rng = Rng::for_item(seed, k as u64);
        rng.shuffle(&mut wins);
        rng.shuffle(&mut losses);
        for (w, l) in wins.iter().zip(&losses) {
            pairs.push(PreferencePair {
                prompt_id: prompt.to_string(),
                winner: w.x0.clone(),
                loser: l.x0.clone(),
                cond: w.cond.clone(),
            });
        }
    }
    if pairs.is_empty() {
        return Err(Error::input("no prompt has both stable and unstable rollouts"));
    }
    Ok((pairs, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::fm_loss;
    use crate::tensor::MlpConfig;

    fn model() -> MlpModel {
        MlpModel::init(
            MlpConfig {
                latent_dim: 4,
                cond_dim: 3,
                hidden: vec![12, 12],
            },
            7,
        )
    }

    fn sample(id: &str, seed: u64, o: u8) -> RewardSample {
        let mut rng = Rng::new(seed);
        RewardSample {
            prompt_id: id.into(),
            x0: rng.normal_vec(4),
            cond: rng.normal_vec(3),
            o,
            tilt_deg: if o == 1 { 0.0 } else { 45.0 },
        }
    }

    #[test]
    fn dro_on_stable_batch_is_fm() {
        let m = model();
        let batch: Vec<_> = (0..6).map(|i| sample("p", i, 1)).collect();
        let fb = FlowBatch::new(batch.iter().map(|s| s.x0.clone()).collect(), batch.iter().map(|s| s.cond.clone()).collect()).unwrap();
        assert_eq!(dro_loss(&m, None, &batch, 3).unwrap(), fm_loss(&m, None, &fb, 3).unwrap());
        assert_eq!(sft_loss(&m, None, &batch, 3).unwrap(), fm_loss(&m, None, &fb, 3).unwrap());
        let flipped: Vec<_> = batch.iter().map(|s| RewardSample { o: 0, ..s.clone() }).collect();
        assert_eq!(dro_loss(&m, None, &flipped, 3).unwrap(), -dro_loss(&m, None, &batch, 3).unwrap());
    }

    #[test]
    fn dpo_at_reference_is_ln2() {
        let m = model();
        let pairs: Vec<_> = (0..5)
            .map(|i| PreferencePair {
                prompt_id: "p".into(),
                winner: sample("p", i, 1).x0,
                loser: sample("p", i + 50, 0).x0,
                cond: sample("p", i + 100, 1).cond,
            })
            .collect();
        let l = dpo_loss(&m, None, &m, &pairs, 500.0, 1).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12, "{l}");
        let ad = LoraAdapter::init(&m, 2, 4.0, 1);
        assert!((dpo_loss(&m, Some(&ad), &m, &pairs, 500.0, 1).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn pairs_are_disjoint_and_seeded() {
        let samples = vec![
            sample("a", 1, 1),
            sample("a", 2, 1),
            sample("a", 3, 0),
            sample("a", 4, 0),
            sample("b", 5, 1),
            sample("b", 6, 1),
        ];
        let (pairs, skipped) = make_pairs(&samples, 9).unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(skipped, 1);
        assert_ne!(pairs[0].winner, pairs[1].winner);
        assert_ne!(pairs[0].loser, pairs[1].loser);
        assert_eq!(make_pairs(&samples, 9).unwrap().0, pairs);
        assert!(make_pairs(&samples[4..], 9).is_err());
        assert!(stable_subset(&[sample("a", 1, 0)]).is_err());
    }
}
