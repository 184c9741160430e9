use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{aggregate, shape_fidelity, EvalConfig, EvalReport, SampleEval};
use crate::datagen::{DatagenConfig, PromptRecord, RolloutRecord};
use crate::error::{Error, Result};
use crate::geometry::{decode_shape, normalize_unit_box, Polygon2D, ShapeLatent};
use crate::physics::{flat_cut, perturbation_sweep, settle, SimConfig};
use crate::seed::{derive_seed, sub_seed};
use crate::tensor::{kernels, Graph, Tensor};
use crate::textio::fmt_f64;

pub const PERTURBATION_THETAS: [f64; 4] = [0.01, 0.02, 0.04, 0.08];
pub const PERTURBATION_RUNS: usize = 100;
pub const FLAT_CUT_HEIGHTS: [f64; 4] = [0.05, 0.1, 0.15, 0.2];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    pub r: f64,
    /// Two-sided, from Student's t with `n - 2` degrees of freedom.
    pub p_value: f64,
}

/// Pearson correlation of `(x, y)` pairs with its t-test p-value.
pub fn correlation(points: &[(f64, f64)]) -> Result<Correlation> {
    let n = points.len();
    if n < 3 {
        return Err(Error::input(format!("correlation needs at least 3 points, got {n}")));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::input("correlation points must be finite"));
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::numeric("correlation undefined: zero variance"));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let p_value = if r.abs() == 1.0 {
        0.0
    } else {
        let t = r * (df / (1.0 - r * r)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::numeric(e.to_string()))?;
        (2.0 * dist.sf(t.abs())).min(1.0)
    };
    Ok(Correlation { n, r, p_value })
}

/// `(cd, tilt)` of every valid sample that has both.
pub fn cd_tilt_points(report: &EvalReport) -> Vec<(f64, f64)> {
    report
        .samples
        .iter()
        .filter(|s| s.valid)
        .filter_map(|s| Some((s.cd?, s.tilt_deg?)))
        .collect()
}

/// Decoded polygons of the valid rollouts, in order.
pub fn decoded_shapes(rollouts: &[RolloutRecord], data: &DatagenConfig) -> Vec<Polygon2D> {
    rollouts
        .iter()
        .filter(|r| r.valid)
        .filter_map(|r| decode_shape(&ShapeLatent::new(r.latent.clone()), data.vertices, data.r_min).ok())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationRow {
    pub theta_max: f64,
    pub n_shapes: usize,
    pub runs_per_shape: usize,
    /// Mean over shapes of the per-shape stable fraction.
    pub stability_rate: f64,
}

/// Average stability under random initial rotations in `(-θ, θ)`, one row
/// per `θ` in `thetas` (radians).
pub fn perturbation_eval(shapes: &[Polygon2D], thetas: &[f64], runs: usize, seed: u64, sim: &SimConfig) -> Result<Vec<PerturbationRow>> {
    if shapes.is_empty() || runs == 0 {
        return Err(Error::input("perturbation evaluation needs shapes and at least one run"));
    }
    if let Some(t) = thetas.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::input(format!("theta_max must be positive, got {t}")));
    }
    let base = derive_seed(seed, "perturbation");
    thetas
        .iter()
        .map(|&theta| {
            let rates = shapes
                .par_iter()
                .enumerate()
                .map(|(i, p)| perturbation_sweep(p, theta, runs, sub_seed(base, i as u64), sim))
                .collect::<Result<Vec<f64>>>()?;
            Ok(PerturbationRow {
                theta_max: theta,
                n_shapes: shapes.len(),
                runs_per_shape: runs,
                stability_rate: rates.iter().sum::<f64>() / rates.len() as f64,
            })
        })
        .collect()
}

pub fn perturbation_csv(rows: &[PerturbationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["theta_max", "n_shapes", "runs_per_shape", "stability_rate"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([fmt_f64(r.theta_max), r.n_shapes.to_string(), r.runs_per_shape.to_string(), fmt_f64(r.stability_rate)])
            .map_err(csv_err)?;
    }
    finish_csv(w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatCutRow {
    pub z: f64,
    /// Cuts that failed; those samples count as unstable.
    pub n_cut_failures: usize,
    pub report: EvalReport,
}

/// Cuts every valid labeled rollout flat at height `z` above its lowest
/// point (after unit-box normalization), then re-simulates it and
/// recomputes its geometry metrics against the ground truth.
pub fn flat_cut_baseline_eval(
    prompts: &[PromptRecord],
    labeled: &[RolloutRecord],
    heights: &[f64],
    cfg: &EvalConfig,
    data: &DatagenConfig,
    sim: &SimConfig,
    seed: u64,
) -> Result<Vec<FlatCutRow>> {
    let by_id: std::collections::HashMap<&str, &PromptRecord> = prompts.iter().map(|p| (p.id.as_str(), p)).collect();
    let geo_seed = derive_seed(seed, "eval-geometry");
    heights
        .iter()
        .map(|&z| {
            let scored = labeled
                .par_iter()
                .enumerate()
                .map(|(n, r)| {
                    let gt = by_id
                        .get(r.prompt_id.as_str())
                        .and_then(|p| p.gt.as_ref())
                        .ok_or_else(|| Error::input(format!("prompt {} missing or without ground truth", r.prompt_id)))?;
                    let mut s = SampleEval {
                        prompt_id: r.prompt_id.clone(),
                        sample_index: r.sample_index,
                        valid: r.valid,
                        tilt_deg: None,
                        stable: false,
                        cd: None,
                        fscore: None,
                    };
                    if !r.valid {
                        return Ok((s, false));
                    }
                    let shape = decode_shape(&ShapeLatent::new(r.latent.clone()), data.vertices, data.r_min)?;
                    let cut = match normalize_unit_box(&shape).and_then(|u| flat_cut(&u, z)) {
                        Ok(c) => c,
                        Err(_) => return Ok((s, true)),
                    };
                    let g = decode_shape(&ShapeLatent::new(gt.clone()), data.vertices, data.r_min)?;
                    match settle(&cut, 0.0, sim) {
                        Ok(rep) => {
                            s.tilt_deg = Some(rep.tilt_deg);
                            s.stable = rep.stable;
                        }
                        Err(_) => return Ok((s, true)),
                    }
                    let (cd, fs) = shape_fidelity(&cut, &g, cfg.boundary_samples, cfg.fscore_tau, sub_seed(geo_seed, n as u64))?;
                    s.cd = Some(cd);
                    s.fscore = Some(fs);
                    Ok((s, false))
                })
                .collect::<Result<Vec<(SampleEval, bool)>>>()?;
            let n_cut_failures = scored.iter().filter(|(_, f)| *f).count();
            let samples = scored.into_iter().map(|(s, _)| s).collect();
            Ok(FlatCutRow {
                z,
                n_cut_failures,
                report: aggregate(samples, seed, format!("flat-cut-{}", fmt_f64(z))),
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCurveRow {
    pub m: f64,
    pub l_lin: f64,
    pub dl_lin: f64,
    /// `-ln sigmoid(-beta m)`.
    pub l_dpo: f64,
    /// Closed form `beta sigmoid(beta m)`.
    pub dl_dpo: f64,
    /// The same derivative from the autodiff tape.
    pub dl_dpo_autodiff: f64,
}

/// The linear (DRO-style) and logistic (DPO) losses as functions of the
/// margin `m`, with their derivatives.
pub fn loss_curves(beta: f64, grid: &[f64]) -> Result<Vec<LossCurveRow>> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::input("beta must be positive and finite"));
    }
    if grid.is_empty() || grid.iter().any(|m| !m.is_finite()) {
        return Err(Error::input("margin grid must be non-empty and finite"));
    }
    let mut g = Graph::new();
    let m = g.param(Tensor::vector(grid.to_vec()));
    let lin = g.sum(m);
    let bm = g.scale(m, beta);
    let sp = g.softplus(bm);
    let dpo = g.sum(sp);
    let dlin = g.backward(lin)?.get_or_zeros(m, &[grid.len()]);
    let ddpo = g.backward(dpo)?.get_or_zeros(m, &[grid.len()]);
    let l_dpo = g.value(sp).values().to_vec();
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &mi)| LossCurveRow {
            m: mi,
            l_lin: mi,
            dl_lin: dlin.values()[i],
            l_dpo: l_dpo[i],
            dl_dpo: beta * kernels::sigmoid(beta * mi),
            dl_dpo_autodiff: ddpo.values()[i],
        })
        .collect())
}

pub fn loss_curves_csv(rows: &[LossCurveRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["m", "l_lin", "dl_lin", "l_dpo", "dl_dpo", "dl_dpo_autodiff"])
        .map_err(csv_err)?;
    for r in rows {
        w.write_record([r.m, r.l_lin, r.dl_lin, r.l_dpo, r.dl_dpo, r.dl_dpo_autodiff].map(fmt_f64))
            .map_err(csv_err)?;
    }
    finish_csv(w)
}

pub(super) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

pub(super) fn finish_csv(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{FamilyKind, ShapeFamily};
    use crate::physics::brute_force_settle_from;

    #[test]
    fn correlation_of_lines() {
        let up: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64 + 1.0)).collect();
        let c = correlation(&up).unwrap();
        assert_eq!(c.r, 1.0);
        assert_eq!(c.p_value, 0.0);
        let down: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, -(i as f64))).collect();
        assert_eq!(correlation(&down).unwrap().r, -1.0);
    }

    #[test]
    fn correlation_rejects_degenerate_input() {
        assert!(matches!(correlation(&[(0.0, 1.0), (1.0, 2.0)]), Err(Error::Input(_))));
        assert!(matches!(correlation(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]), Err(Error::Numeric(_))));
    }

    #[test]
    fn correlation_p_value_matches_hand_t() {
        // r = 0.8 at n = 5: t = 0.8 * sqrt(3 / 0.36) = 2.3094, p = 0.1041 (two-sided, 3 df).
        let pts = [(1.0, 2.0), (2.0, 1.0), (3.0, 4.0), (4.0, 3.0), (5.0, 5.0)];
        let c = correlation(&pts).unwrap();
        assert!((c.r - 0.8).abs() < 1e-12, "{}", c.r);
        assert!((c.p_value - 0.10408803866182788).abs() < 1e-6, "{}", c.p_value);
    }

    fn slabs(n: usize) -> Vec<Polygon2D> {
        let fam = ShapeFamily::new(FamilyKind::Slab);
        (0..n)
            .map(|i| {
                let w = 1.2 + 0.5 * i as f64 / n as f64;
                decode_shape(&fam.latent(&[w, 0.6], 16, 0.05).unwrap(), 16, 0.05).unwrap()
            })
            .collect()
    }

    #[test]
    fn flat_slabs_survive_every_perturbation() {
        let shapes = slabs(5);
        let sim = SimConfig::default();
        // Independent check: energy descent from the extreme angles stays upright.
        for p in &shapes {
            for start in [-0.08, 0.08] {
                let tilt = brute_force_settle_from(p, start, 0.05f64.to_radians()).unwrap();
                assert!(tilt < 1.0, "{tilt}");
            }
        }
        let rows = perturbation_eval(&shapes, &PERTURBATION_THETAS, 20, 3, &sim).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.stability_rate == 1.0));
        assert_eq!(rows, perturbation_eval(&shapes, &PERTURBATION_THETAS, 20, 3, &sim).unwrap());
        assert!(perturbation_eval(&shapes, &[0.0], 20, 3, &sim).is_err());
    }

    #[test]
    fn loss_curve_identities() {
        let beta = 50.0;
        let grid: Vec<f64> = (-40..=40).map(|i| i as f64 / 1000.0).collect();
        let rows = loss_curves(beta, &grid).unwrap();
        for r in &rows {
            assert_eq!(r.dl_lin, 1.0);
            assert!((r.dl_dpo - r.dl_dpo_autodiff).abs() < 1e-12);
        }
        let zero = rows.iter().find(|r| r.m == 0.0).unwrap();
        assert!((zero.l_dpo - std::f64::consts::LN_2).abs() < 1e-15);
        let at = |m: f64| loss_curves(beta, &[m]).unwrap()[0].dl_dpo;
        let ratio = at(-20.0 / beta) / at(-10.0 / beta);
        let expect = (1.0 + 10f64.exp()) / (1.0 + 20f64.exp());
        assert!((ratio - expect).abs() < 1e-15);
        assert!((ratio - (-10f64).exp()).abs() < 1e-6);
        let csv = loss_curves_csv(&rows).unwrap();
        assert!(csv.starts_with("m,l_lin,dl_lin,l_dpo,dl_dpo,dl_dpo_autodiff\n"));
        assert_eq!(csv.lines().count(), rows.len() + 1);
        assert!(loss_curves(beta, &[f64::NAN]).is_err());
    }

    fn record(id: &str, latent: Vec<f64>) -> (PromptRecord, RolloutRecord) {
        (
            PromptRecord {
                id: id.into(),
                family: None,
                cond: latent.clone(),
                gt: Some(latent.clone()),
                gt_stable: Some(true),
            },
            RolloutRecord {
                prompt_id: id.into(),
                sample_index: 0,
                cond: latent.clone(),
                latent,
                valid: true,
                tilt_deg: Some(0.0),
                o: Some(1),
            },
        )
    }

    #[test]
    fn flat_cut_recomputes_geometry_and_keeps_flat_stable() {
        let data = DatagenConfig::default();
        let sim = SimConfig::default();
        let cfg = EvalConfig::default();
        let fam = ShapeFamily::new(FamilyKind::Slab);
        let (p, r) = record("a", fam.latent(&[1.6, 0.6], 16, 0.05).unwrap().values);
        let prompts = vec![p];
        let rolls = vec![r];
        let base = super::super::score_rollouts(&prompts, &rolls, &cfg, &data, 5).unwrap();
        let rows = flat_cut_baseline_eval(&prompts, &rolls, &FLAT_CUT_HEIGHTS, &cfg, &data, &sim, 5).unwrap();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            assert_eq!(row.n_cut_failures, 0);
            assert_eq!(row.report.pct_stable, Some(100.0));
            assert_ne!(row.report.samples[0].cd, base[0].cd);
        }
        // A cut through the whole shape fails and the sample counts unstable.
        let rows = flat_cut_baseline_eval(&prompts, &rolls, &[5.0], &cfg, &data, &sim, 5).unwrap();
        assert_eq!(rows[0].n_cut_failures, 1);
        assert_eq!(rows[0].report.pct_stable, Some(0.0));
    }
}
