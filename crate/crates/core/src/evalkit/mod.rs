//! Evaluation: validity, stability and tilt of generated shapes, geometry
//! fidelity against ground truth (Chamfer distance and F-score after
//! unit-box normalization and ICP), plus the analysis tables and sweeps.

mod analysis;
mod sweep;
mod tables;

pub use analysis::{
    cd_tilt_points, correlation, decoded_shapes, flat_cut_baseline_eval, loss_curves, loss_curves_csv, perturbation_csv,
    perturbation_eval, Correlation, FlatCutRow, LossCurveRow, PerturbationRow, FLAT_CUT_HEIGHTS, PERTURBATION_RUNS,
    PERTURBATION_THETAS,
};
pub use sweep::{sweep, SweepAxis, SweepPoint, SweepResult, SWEEP_CSV_HEADER};
pub use tables::{comparison_table, perturbation_table};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{label, rollout, DatagenConfig, PromptRecord, RolloutRecord, SamplerConfig};
use crate::error::{Error, Result};
use crate::geometry::{
    chamfer, decode_shape, fscore, icp_align, normalize_unit_box, sample_boundary, Polygon2D, ShapeLatent,
    DEFAULT_FSCORE_TAU, ICP_DEFAULT_MAX_ITERS, ICP_DEFAULT_TOL,
};
use crate::physics::SimConfig;
use crate::seed::{derive_seed, sub_seed};
use crate::tensor::{LoraAdapter, MlpModel};

pub const BOUNDARY_SAMPLES: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub samples_per_prompt: usize,
    pub sampler: SamplerConfig,
    pub fscore_tau: f64,
    pub boundary_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            samples_per_prompt: 4,
            sampler: SamplerConfig::default(),
            fscore_tau: DEFAULT_FSCORE_TAU,
            boundary_samples: BOUNDARY_SAMPLES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub prompt_id: String,
    pub sample_index: usize,
    pub valid: bool,
    pub tilt_deg: Option<f64>,
    pub stable: bool,
    pub cd: Option<f64>,
    /// In `[0, 100]`.
    pub fscore: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_attempts: usize,
    pub n_valid: usize,
    pub pct_output: f64,
    pub pct_stable: Option<f64>,
    pub mean_rot_deg: Option<f64>,
    pub mean_cd: Option<f64>,
    pub mean_fscore: Option<f64>,
    pub seed: u64,
    pub model_hash: String,
    pub per_prompt: Vec<PromptSummary>,
    pub samples: Vec<SampleEval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptSummary {
    pub prompt_id: String,
    pub n_attempts: usize,
    pub n_valid: usize,
    pub n_stable: usize,
    pub mean_rot_deg: Option<f64>,
    pub mean_cd: Option<f64>,
}

/// Chamfer distance and F-score (x100) of `sample` against `gt`, both
/// normalized to the unit box, after ICP-aligning the sample's boundary
/// points to the ground truth's.
pub fn shape_fidelity(sample: &Polygon2D, gt: &Polygon2D, n_points: usize, tau: f64, seed: u64) -> Result<(f64, f64)> {
    let a = sample_boundary(&normalize_unit_box(sample)?, n_points, sub_seed(seed, 0))?;
    let b = sample_boundary(&normalize_unit_box(gt)?, n_points, sub_seed(seed, 1))?;
    let icp = icp_align(&a, &b, ICP_DEFAULT_MAX_ITERS, ICP_DEFAULT_TOL)?;
    let aligned = a.transformed(&icp.transform);
    Ok((chamfer(&aligned, &b), 100.0 * fscore(&aligned, &b, tau)?))
}

/// Scores labeled rollouts against their prompts' ground truths.
pub fn score_rollouts(
    prompts: &[PromptRecord],
    labeled: &[RolloutRecord],
    cfg: &EvalConfig,
    data: &DatagenConfig,
    seed: u64,
) -> Result<Vec<SampleEval>> {
    let by_id: std::collections::HashMap<&str, &PromptRecord> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let geo_seed = derive_seed(seed, "eval-geometry");
    labeled
        .par_iter()
        .enumerate()
        .map(|(n, r)| {
            let prompt = by_id
                .get(r.prompt_id.as_str())
                .ok_or_else(|| Error::input(format!("rollout for unknown prompt {}", r.prompt_id)))?;
            let gt = prompt
                .gt
                .as_ref()
                .ok_or_else(|| Error::input(format!("prompt {} has no ground truth", prompt.id)))?;
            let (cd, fs) = if r.valid {
                let s = decode_shape(&ShapeLatent::new(r.latent.clone()), data.vertices, data.r_min)?;
                let g = decode_shape(&ShapeLatent::new(gt.clone()), data.vertices, data.r_min)?;
                let (cd, fs) = shape_fidelity(&s, &g, cfg.boundary_samples, cfg.fscore_tau, sub_seed(geo_seed, n as u64))?;
                (Some(cd), Some(fs))
            } else {
                (None, None)
            };
            Ok(SampleEval {
                prompt_id: r.prompt_id.clone(),
                sample_index: r.sample_index,
                valid: r.valid,
                tilt_deg: r.tilt_deg,
                stable: r.o == Some(1),
                cd,
                fscore: fs,
            })
        })
        .collect()
}

fn mean_of(valid: &[&SampleEval], f: impl Fn(&SampleEval) -> Option<f64>) -> Option<f64> {
    let v: Vec<f64> = valid.iter().filter_map(|s| f(s)).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-prompt counts in order of first appearance.
fn per_prompt(samples: &[SampleEval]) -> Vec<PromptSummary> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: std::collections::HashMap<&str, Vec<&SampleEval>> = std::collections::HashMap::new();
    for s in samples {
        let e = groups.entry(s.prompt_id.as_str()).or_default();
        if e.is_empty() {
            order.push(s.prompt_id.as_str());
        }
        e.push(s);
    }
    order
        .into_iter()
        .map(|id| {
            let all = &groups[id];
            let valid: Vec<&SampleEval> = all.iter().copied().filter(|s| s.valid).collect();
            PromptSummary {
                prompt_id: id.to_string(),
                n_attempts: all.len(),
                n_valid: valid.len(),
                n_stable: valid.iter().filter(|s| s.stable).count(),
                mean_rot_deg: mean_of(&valid, |s| s.tilt_deg),
                mean_cd: mean_of(&valid, |s| s.cd),
            }
        })
        .collect()
}

/// Means over valid samples; `% Output` over all attempts.
pub fn aggregate(samples: Vec<SampleEval>, seed: u64, model_hash: String) -> EvalReport {
    let n_attempts = samples.len();
    let valid: Vec<&SampleEval> = samples.iter().filter(|s| s.valid).collect();
    let n_valid = valid.len();
    let mean = |f: &dyn Fn(&SampleEval) -> Option<f64>| mean_of(&valid, f);
    EvalReport {
        n_attempts,
        n_valid,
        pct_output: if n_attempts == 0 { 0.0 } else { 100.0 * n_valid as f64 / n_attempts as f64 },
        pct_stable: (n_valid > 0).then(|| 100.0 * valid.iter().filter(|s| s.stable).count() as f64 / n_valid as f64),
        mean_rot_deg: mean(&|s| s.tilt_deg),
        mean_cd: mean(&|s| s.cd),
        mean_fscore: mean(&|s| s.fscore),
        seed,
        model_hash,
        per_prompt: per_prompt(&samples),
        samples,
    }
}

/// Samples `cfg.samples_per_prompt` shapes per prompt and reports all
/// metrics.
pub fn evaluate(
    model: &MlpModel,
    adapter: Option<&LoraAdapter>,
    model_hash: String,
    prompts: &[PromptRecord],
    cfg: &EvalConfig,
    data: &DatagenConfig,
    sim: &SimConfig,
    seed: u64,
) -> Result<EvalReport> {
    let rolls = rollout(model, adapter, prompts, cfg.samples_per_prompt, &cfg.sampler, derive_seed(seed, "eval-sample"))?;
    let labeled = label(&rolls, data, sim);
    let samples = score_rollouts(prompts, &labeled, cfg, data, seed)?;
    Ok(aggregate(samples, seed, model_hash))
}
