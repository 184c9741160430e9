use serde::{Deserialize, Serialize};

use super::analysis::{csv_err, finish_csv};
use super::{evaluate, EvalConfig, EvalReport};
use crate::align::{finetune, DsoConfig};
use crate::datagen::{DatagenConfig, Dataset, PromptRecord};
use crate::error::{Error, Result};
use crate::physics::SimConfig;
use crate::tensor::{LoraAdapter, MlpModel, ModelCheckpoint};
use crate::textio::fmt_f64;

pub const SWEEP_CSV_HEADER: [&str; 11] = [
    "axis",
    "value",
    "n_attempts",
    "n_valid",
    "pct_output",
    "pct_stable",
    "mean_rot_deg",
    "mean_cd",
    "mean_fscore",
    "train_steps",
    "error",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "axis", content = "values", rename_all = "snake_case")]
pub enum SweepAxis {
    /// Fine-tuning step counts; one run, evaluated as it passes each count.
    Steps(Vec<usize>),
    /// Fractions of the preference dataset; one run per fraction.
    DataFraction(Vec<f64>),
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Steps(_) => "steps",
            SweepAxis::DataFraction(_) => "data_fraction",
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            SweepAxis::Steps(v) => v.iter().map(|&s| s as f64).collect(),
            SweepAxis::DataFraction(v) => v.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.values();
        if v.len() < 2 {
            return Err(Error::config("a sweep needs at least two axis points"));
        }
        if v.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::config("sweep axis values must be strictly increasing"));
        }
        match self {
            SweepAxis::Steps(s) if s[0] == 0 => Err(Error::config("step counts must be positive")),
            SweepAxis::DataFraction(f) if !(f[0] > 0.0 && f[f.len() - 1] <= 1.0) => {
                Err(Error::config("data fractions must lie in (0, 1]"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub train_steps: usize,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub points: Vec<SweepPoint>,
}

impl SweepResult {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(SWEEP_CSV_HEADER).map_err(csv_err)?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for p in &self.points {
            let mut row = vec![self.axis.clone(), fmt_f64(p.value)];
            match &p.report {
                Some(r) => row.extend([
                    r.n_attempts.to_string(),
                    r.n_valid.to_string(),
                    fmt_f64(r.pct_output),
                    opt(r.pct_stable),
                    opt(r.mean_rot_deg),
                    opt(r.mean_cd),
                    opt(r.mean_fscore),
                ]),
                None => row.extend(std::iter::repeat(String::new()).take(7)),
            }
            row.push(p.train_steps.to_string());
            row.push(p.error.clone().unwrap_or_default());
            w.write_record(&row).map_err(csv_err)?;
        }
        finish_csv(w)
    }

    pub fn point(&self, value: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.value == value)
    }
}

/// Fine-tunes and evaluates at every axis point with the same seeds.
/// A failing point records its error and the sweep moves on.
#[allow(clippy::too_many_arguments)]
pub fn sweep(
    axis: &SweepAxis,
    base: &ModelCheckpoint,
    ds: &Dataset,
    dso: &DsoConfig,
    eval_prompts: &[PromptRecord],
    ecfg: &EvalConfig,
    data: &DatagenConfig,
    sim: &SimConfig,
    seed: u64,
) -> Result<SweepResult> {
    axis.validate()?;
    let eval_at = |model: &MlpModel, adapter: &LoraAdapter, label: String| {
        evaluate(model, Some(adapter), label, eval_prompts, ecfg, data, sim, seed)
    };
    let points = match axis {
        SweepAxis::Steps(steps) => {
            let mut points: Vec<SweepPoint> = Vec::with_capacity(steps.len());
            let mut next = 0usize;
            let cfg = DsoConfig {
                steps: *steps.last().expect("validated"),
                ..dso.clone()
            };
            let mut hook = |step: u64, model: &MlpModel, adapter: &LoraAdapter| {
                if next < steps.len() && step as usize == steps[next] {
                    let (report, error) = match eval_at(model, adapter, format!("steps-{step}")) {
                        Ok(r) => (Some(r), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    points.push(SweepPoint {
                        value: step as f64,
                        train_steps: step as usize,
                        report,
                        error,
                    });
                    next += 1;
                }
                false
            };
            let run = finetune(base, ds, &cfg, Some(&mut hook));
            let reason = match run {
                Ok(out) => out.aborted,
                Err(e) => Some(e.to_string()),
            };
            for &s in &steps[points.len()..] {
                points.push(SweepPoint {
                    value: s as f64,
                    train_steps: 0,
                    report: None,
                    error: Some(reason.clone().unwrap_or_else(|| "training stopped early".into())),
                });
            }
            points
        }
        SweepAxis::DataFraction(fracs) => fracs
            .iter()
            .map(|&f| {
                let run = ds.subset_fraction(f, seed).and_then(|sub| finetune(base, &sub, dso, None));
                let (report, error, train_steps) = match run {
                    Ok(out) => {
                        let n = out.log.len();
                        let adapter = out.checkpoint.adapter.as_ref().expect("finetune yields an adapter");
                        match eval_at(&out.checkpoint.model, adapter, format!("frac-{}", fmt_f64(f))) {
                            Ok(r) => (Some(r), out.aborted, n),
                            Err(e) => (None, Some(e.to_string()), n),
                        }
                    }
                    Err(e) => (None, Some(e.to_string()), 0),
                };
                SweepPoint {
                    value: f,
                    train_steps,
                    report,
                    error,
                }
            })
            .collect(),
    };
    Ok(SweepResult {
        axis: axis.name().to_string(),
        points,
    })
}
