//! Synthetic ground-truth shapes, prompts (noisy observations of a shape's
//! latent), base-model training data, rollouts and simulation labels.

mod families;

pub use families::{default_families, FamilyKind, ShapeFamily};

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{sample_batch, FlowBatch, GuidanceConfig};
use crate::geometry::{decode_shape, ShapeLatent};
use crate::physics::{settle, SimConfig};
use crate::rng::Rng;
use crate::seed::{derive_seed, fnv1a64, sub_seed};
use crate::tensor::{LoraAdapter, MlpModel, Tensor};
use crate::textio::{read_records, to_line, write_atomic, write_records};

pub const DATASET_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatagenConfig {
    pub vertices: usize,
    pub r_min: f64,
    /// Std-dev of the Gaussian corruption turning a latent into a condition.
    pub cond_noise: f64,
    pub pretrain_size: usize,
    pub stable_fraction: f64,
    pub eval_objects: usize,
    pub eval_prompts_per_object: usize,
    pub train_objects: usize,
    pub train_prompts_per_object: usize,
    /// Restrict fine-tuning objects to stable ground truths, like the
    /// evaluation objects.
    pub train_stable_only: bool,
    pub synthetic_prompts: usize,
    /// Added to every condition coordinate in synthetic-prompt mode.
    pub synthetic_offset: f64,
    pub max_draws: usize,
}

impl Default for DatagenConfig {
    fn default() -> Self {
        DatagenConfig {
            vertices: 16,
            r_min: 0.05,
            cond_noise: 0.1,
            pretrain_size: 5000,
            stable_fraction: 0.7,
            eval_objects: 65,
            eval_prompts_per_object: 12,
            train_objects: 171,
            train_prompts_per_object: 6,
            train_stable_only: true,
            synthetic_prompts: 1024,
            synthetic_offset: 0.1,
            max_draws: 10_000,
        }
    }
}

impl DatagenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vertices < 3 || !(self.r_min > 0.0) || !(self.cond_noise >= 0.0) {
            return Err(Error::config("need >= 3 vertices, r_min > 0 and cond_noise >= 0"));
        }
        if !(self.stable_fraction > 0.0 && self.stable_fraction <= 1.0) {
            return Err(Error::config("stable_fraction must lie in (0, 1]"));
        }
        if self.eval_prompts_per_object == 0 || self.train_prompts_per_object == 0 {
            return Err(Error::config("prompts per object must be positive"));
        }
        Ok(())
    }

    /// FNV-1a of the canonical serialization.
    pub fn hash(&self) -> u64 {
        fnv1a64(to_line(self).expect("config serializes").as_bytes())
    }
}

/// A drawn ground-truth object.
#[derive(Clone, Debug, PartialEq)]
pub struct GtObject {
    pub family: FamilyKind,
    pub params: Vec<f64>,
    pub latent: ShapeLatent,
    pub tilt_deg: f64,
    pub stable: bool,
}

/// Object `index` of the stream `seed`: family chosen uniformly, then its
/// parameters.
pub fn draw_object(families: &[ShapeFamily], seed: u64, index: u64, cfg: &DatagenConfig, sim: &SimConfig) -> Result<GtObject> {
    if families.is_empty() {
        return Err(Error::config("no shape families configured"));
    }
    let mut rng = Rng::for_item(seed, index);
    let fam = &families[rng.below(families.len())];
    let params = fam.sample_params(&mut rng);
    let latent = fam.latent(&params, cfg.vertices, cfg.r_min)?;
    let (tilt, stable) = simulate_latent(&latent, cfg, sim);
    Ok(GtObject {
        family: fam.kind,
        params,
        latent,
        tilt_deg: tilt.unwrap_or(f64::NAN),
        stable,
    })
}

/// Tilt and stability bit of a latent's decoded shape; `None` when it does
/// not decode.
pub fn simulate_latent(latent: &ShapeLatent, cfg: &DatagenConfig, sim: &SimConfig) -> (Option<f64>, bool) {
    match decode_shape(latent, cfg.vertices, cfg.r_min).and_then(|p| settle(&p, 0.0, sim)) {
        Ok(r) => (Some(r.tilt_deg), r.stable),
        Err(_) => (None, false),
    }
}

fn noisy_cond(latent: &[f64], noise: f64, offset: f64, rng: &mut Rng) -> Vec<f64> {
    latent.iter().map(|z| z + offset + noise * rng.normal()).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub id: String,
    pub family: FamilyKind,
    pub x0: Vec<f64>,
    pub cond: Vec<f64>,
    pub tilt_deg: f64,
    pub stable: bool,
}

/// Draws objects until exactly `round(stable_fraction * n)` stable and the
/// rest unstable have been accepted.
pub fn build_pretrain_set(families: &[ShapeFamily], n: usize, stable_fraction: f64, seed: u64, cfg: &DatagenConfig, sim: &SimConfig) -> Result<Vec<PretrainRecord>> {
    if n == 0 {
        return Err(Error::input("pretraining set size must be positive"));
    }
    if !(stable_fraction > 0.0 && stable_fraction <= 1.0) {
        return Err(Error::config("stable_fraction must lie in (0, 1]"));
    }
    let want_stable = (stable_fraction * n as f64).round() as usize;
    let want_unstable = n - want_stable;
    let (mut got_s, mut got_u) = (0, 0);
    let obj_seed = derive_seed(seed, "pretrain-objects");
    let cond_seed = derive_seed(seed, "pretrain-cond");
    let mut out = Vec::with_capacity(n);
    let mut index = 0u64;
    let mut since_accept = 0usize;
    while got_s < want_stable || got_u < want_unstable {
        let obj = draw_object(families, obj_seed, index, cfg, sim)?;
        index += 1;
        let take = if obj.stable { got_s < want_stable } else { got_u < want_unstable };
        if !take {
            since_accept += 1;
            if since_accept >= cfg.max_draws {
                let class = if got_s < want_stable { "stable" } else { "unstable" };
                return Err(Error::config(format!("families produced no {class} shape in {} draws", cfg.max_draws)));
            }
            continue;
        }
        since_accept = 0;
        if obj.stable {
            got_s += 1;
        } else {
            got_u += 1;
        }
        let mut rng = Rng::for_item(cond_seed, out.len() as u64);
        out.push(PretrainRecord {
            id: format!("pre-{:05}", out.len()),
            family: obj.family,
            cond: noisy_cond(&obj.latent.values, cfg.cond_noise, 0.0, &mut rng),
            x0: obj.latent.values,
            tilt_deg: obj.tilt_deg,
            stable: obj.stable,
        });
    }
    Ok(out)
}

pub fn pretrain_batch(records: &[PretrainRecord]) -> Result<FlowBatch> {
    FlowBatch::new(
        records.iter().map(|r| r.x0.clone()).collect(),
        records.iter().map(|r| r.cond.clone()).collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub family: Option<FamilyKind>,
    pub cond: Vec<f64>,
    pub gt: Option<Vec<f64>>,
    pub gt_stable: Option<bool>,
}

fn build_prompts(
    families: &[ShapeFamily],
    n_objects: usize,
    per_object: usize,
    stream: &str,
    stable_only: bool,
    seed: u64,
    cfg: &DatagenConfig,
    sim: &SimConfig,
) -> Result<Vec<PromptRecord>> {
    if per_object == 0 {
        return Err(Error::config("prompts per object must be positive"));
    }
    let obj_seed = derive_seed(seed, &format!("{stream}-objects"));
    let cond_seed = derive_seed(seed, &format!("{stream}-cond"));
    let mut out = Vec::with_capacity(n_objects * per_object);
    let mut index = 0u64;
    let mut kept = 0usize;
    let budget = cfg.max_draws.saturating_mul(n_objects.max(1)) as u64;
    while kept < n_objects {
        if index >= budget {
            return Err(Error::config(format!("only {kept} of {n_objects} {stream} objects are stable")));
        }
        let obj = draw_object(families, obj_seed, index, cfg, sim)?;
        index += 1;
        if stable_only && !obj.stable {
            continue;
        }
        for j in 0..per_object {
            let mut rng = Rng::for_item(sub_seed(cond_seed, kept as u64), j as u64);
            out.push(PromptRecord {
                id: format!("{stream}-{kept:04}-{j:02}"),
                family: Some(obj.family),
                cond: noisy_cond(&obj.latent.values, cfg.cond_noise, 0.0, &mut rng),
                gt: Some(obj.latent.values.clone()),
                gt_stable: Some(obj.stable),
            });
        }
        kept += 1;
    }
    Ok(out)
}

/// Held-out evaluation prompts; only objects whose ground truth is stable.
pub fn build_eval_prompts(families: &[ShapeFamily], n_objects: usize, per_object: usize, seed: u64, cfg: &DatagenConfig, sim: &SimConfig) -> Result<Vec<PromptRecord>> {
    build_prompts(families, n_objects, per_object, "eval", true, seed, cfg, sim)
}

/// Fine-tuning prompts from an independent object stream.
pub fn build_train_prompts(families: &[ShapeFamily], n_objects: usize, per_object: usize, seed: u64, cfg: &DatagenConfig, sim: &SimConfig) -> Result<Vec<PromptRecord>> {
    build_prompts(families, n_objects, per_object, "train", cfg.train_stable_only, seed, cfg, sim)
}

/// Prompts with no ground truth: conditions from the family prior shifted
/// by `cfg.synthetic_offset` in every coordinate. Source objects follow the
/// same stability policy as training prompts; nothing about them is kept.
pub fn build_synthetic_prompts(families: &[ShapeFamily], n: usize, seed: u64, cfg: &DatagenConfig, sim: &SimConfig) -> Result<Vec<PromptRecord>> {
    if n == 0 {
        return Err(Error::input("need at least one synthetic prompt"));
    }
    let obj_seed = derive_seed(seed, "synthetic-objects");
    let cond_seed = derive_seed(seed, "synthetic-cond");
    let budget = cfg.max_draws.saturating_mul(n) as u64;
    let mut out = Vec::with_capacity(n);
    let mut index = 0u64;
    while out.len() < n {
        if index >= budget {
            return Err(Error::config(format!("only {} of {n} synthetic source objects are stable", out.len())));
        }
        let obj = draw_object(families, obj_seed, index, cfg, sim)?;
        index += 1;
        if cfg.train_stable_only && !obj.stable {
            continue;
        }
        let i = out.len();
        let mut rng = Rng::for_item(cond_seed, i as u64);
        out.push(PromptRecord {
            id: format!("synth-{i:05}"),
            family: None,
            cond: noisy_cond(&obj.latent.values, cfg.cond_noise, cfg.synthetic_offset, &mut rng),
            gt: None,
            gt_stable: None,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub prompt_id: String,
    pub sample_index: usize,
    pub cond: Vec<f64>,
    pub latent: Vec<f64>,
    pub valid: bool,
    pub tilt_deg: Option<f64>,
    /// Oracle bit once labeled.
    pub o: Option<u8>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance: GuidanceConfig,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            steps: 12,
            guidance: GuidanceConfig::default(),
        }
    }
}

/// Seed of sample `j` for prompt number `i`.
pub fn rollout_seed(seed: u64, prompt_index: usize, j: usize, k: usize) -> u64 {
    sub_seed(seed, (prompt_index * k + j) as u64)
}

/// `k` samples per prompt, unlabeled, ordered by (prompt, sample index).
pub fn rollout(
    model: &MlpModel,
    adapter: Option<&LoraAdapter>,
    prompts: &[PromptRecord],
    k: usize,
    sampler: &SamplerConfig,
    seed: u64,
) -> Result<Vec<RolloutRecord>> {
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    if prompts.is_empty() {
        return Ok(vec![]);
    }
    let c = prompts[0].cond.len();
    let mut conds = Vec::with_capacity(prompts.len() * k * c);
    let mut seeds = Vec::with_capacity(prompts.len() * k);
    for (i, p) in prompts.iter().enumerate() {
        if p.cond.len() != c {
            return Err(Error::input(format!("prompt {} has a condition of width {}", p.id, p.cond.len())));
        }
        for j in 0..k {
            conds.extend_from_slice(&p.cond);
            seeds.push(rollout_seed(seed, i, j, k));
        }
    }
    let cond = Tensor::matrix(seeds.len(), c, conds)?;
    let samples = sample_batch(model, adapter, &cond, sampler.steps, &sampler.guidance, &seeds)?;
    Ok(samples
        .into_iter()
        .enumerate()
        .map(|(n, s)| {
            let p = &prompts[n / k];
            RolloutRecord {
                prompt_id: p.id.clone(),
                sample_index: n % k,
                cond: p.cond.clone(),
                latent: s.latent.values,
                valid: s.valid,
                tilt_deg: None,
                o: None,
            }
        })
        .collect())
}

/// Fills tilt and oracle bit by simulation. Invalid or undecodable samples
/// get `o = 0` and no tilt.
pub fn label(records: &[RolloutRecord], cfg: &DatagenConfig, sim: &SimConfig) -> Vec<RolloutRecord> {
    records
        .par_iter()
        .map(|r| {
            let mut r = r.clone();
            let (tilt, stable) = if r.valid {
                simulate_latent(&ShapeLatent::new(r.latent.clone()), cfg, sim)
            } else {
                (None, false)
            };
            if tilt.is_none() {
                r.valid = false;
            }
            r.tilt_deg = tilt;
            r.o = Some(stable as u8);
            r
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub prompts: Vec<PromptRecord>,
    pub rollouts: Vec<RolloutRecord>,
}

impl Dataset {
    /// Keeps `ceil(frac * prompts)` prompts, a prefix of a seeded
    /// permutation, with all their rollouts. Smaller fractions under the
    /// same seed give subsets of larger ones.
    pub fn subset_fraction(&self, frac: f64, seed: u64) -> Result<Dataset> {
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(Error::input("fraction must lie in (0, 1]"));
        }
        let n = self.prompts.len();
        let keep_n = (frac * n as f64 - 1e-9).ceil() as usize;
        if keep_n == 0 {
            return Err(Error::input("subset would be empty"));
        }
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(derive_seed(seed, "subset")).shuffle(&mut order);
        let mut keep = vec![false; n];
        for &i in &order[..keep_n] {
            keep[i] = true;
        }
        let ids: std::collections::HashSet<&str> = self
            .prompts
            .iter()
            .zip(&keep)
            .filter(|(_, k)| **k)
            .map(|(p, _)| p.id.as_str())
            .collect();
        Ok(Dataset {
            prompts: self.prompts.iter().filter(|p| ids.contains(p.id.as_str())).cloned().collect(),
            rollouts: self
                .rollouts
                .iter()
                .filter(|r| ids.contains(r.prompt_id.as_str()))
                .cloned()
                .collect(),
        })
    }

    pub fn manifest(&self, config_hash: u64, seed: u64) -> DatasetManifest {
        let mut per_prompt: BTreeMap<String, usize> = self.prompts.iter().map(|p| (p.id.clone(), 0)).collect();
        for r in &self.rollouts {
            *per_prompt.entry(r.prompt_id.clone()).or_default() += 1;
        }
        let count = |f: &dyn Fn(&RolloutRecord) -> bool| self.rollouts.iter().filter(|r| f(r)).count();
        DatasetManifest {
            format_version: DATASET_VERSION,
            prompts: self.prompts.len(),
            rollouts: self.rollouts.len(),
            stable: count(&|r| r.o == Some(1)),
            unstable: count(&|r| r.o == Some(0)),
            invalid: count(&|r| !r.valid),
            unlabeled: count(&|r| r.o.is_none()),
            per_prompt_rollouts: per_prompt,
            seed,
            config_hash: format!("{config_hash:016x}"),
        }
    }

    pub fn save(&self, dir: &Path, config_hash: u64, seed: u64) -> Result<()> {
        write_records(&dir.join("prompts.jsonl"), &self.prompts)?;
        write_records(&dir.join("rollouts.jsonl"), &self.rollouts)?;
        let manifest = self.manifest(config_hash, seed);
        let mut text = to_line(&manifest)?;
        text.push('\n');
        write_atomic(&dir.join("manifest.json"), text.as_bytes())
    }

    /// Loads a dataset directory and checks it against its manifest.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(dir.join("manifest.json"))?;
        let probe: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| Error::corruption(format!("manifest: {e}")))?;
        let version = probe.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::corruption(format!("manifest: {e}")))?;
        let prompts: Vec<PromptRecord> = read_records(&dir.join("prompts.jsonl"))?;
        let rollouts: Vec<RolloutRecord> = if dir.join("rollouts.jsonl").exists() {
            read_records(&dir.join("rollouts.jsonl"))?
        } else {
            vec![]
        };
        let ds = Dataset { prompts, rollouts };
        let check = ds.manifest(0, manifest.seed);
        if check.prompts != manifest.prompts
            || check.rollouts != manifest.rollouts
            || check.stable != manifest.stable
            || check.unstable != manifest.unstable
            || check.per_prompt_rollouts != manifest.per_prompt_rollouts
        {
            return Err(Error::corruption("dataset does not match its manifest"));
        }
        Ok(ds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub prompts: usize,
    pub rollouts: usize,
    pub stable: usize,
    pub unstable: usize,
    pub invalid: usize,
    pub unlabeled: usize,
    pub per_prompt_rollouts: BTreeMap<String, usize>,
    pub seed: u64,
    pub config_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> DatagenConfig {
        DatagenConfig {
            pretrain_size: 200,
            ..DatagenConfig::default()
        }
    }

    #[test]
    fn pretrain_mix_is_exact() {
        let cfg = small_cfg();
        let sim = SimConfig::default();
        let fams = default_families();
        let set = build_pretrain_set(&fams, 200, 0.7, 3, &cfg, &sim).unwrap();
        assert_eq!(set.len(), 200);
        assert_eq!(set.iter().filter(|r| r.stable).count(), 140);
        assert_eq!(set, build_pretrain_set(&fams, 200, 0.7, 3, &cfg, &sim).unwrap());
        let all = build_pretrain_set(&fams, 50, 1.0, 3, &cfg, &sim).unwrap();
        assert!(all.iter().all(|r| r.stable));
    }

    #[test]
    fn impossible_mix_is_config_error() {
        let cfg = DatagenConfig {
            max_draws: 200,
            ..small_cfg()
        };
        let slabs = vec![ShapeFamily::new(FamilyKind::Slab)];
        let err = build_pretrain_set(&slabs, 10, 0.5, 1, &cfg, &SimConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
    }

    #[test]
    fn eval_prompts_are_stable_and_disjoint_from_train() {
        let cfg = small_cfg();
        let sim = SimConfig::default();
        let fams = default_families();
        let eval = build_eval_prompts(&fams, 5, 12, 1, &cfg, &sim).unwrap();
        assert_eq!(eval.len(), 60);
        assert!(eval.iter().all(|p| p.gt_stable == Some(true)));
        let train = build_train_prompts(&fams, 4, 6, 1, &cfg, &sim).unwrap();
        assert_eq!(train.len(), 24);
        for p in &train {
            assert!(eval.iter().all(|e| e.id != p.id));
        }
    }

    #[test]
    fn synthetic_prompts_have_no_ground_truth() {
        let cfg = small_cfg();
        let p = build_synthetic_prompts(&default_families(), 10, 2, &cfg, &SimConfig::default()).unwrap();
        assert!(p.iter().all(|r| r.gt.is_none() && r.gt_stable.is_none()));
    }
}
