//! Markdown comparison tables for evaluation reports.

use super::{EvalReport, PerturbationRow};

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_else(|| "-".into())
}

/// One row per `(method, report)`.
pub fn comparison_table(rows: &[(String, &EvalReport)]) -> String {
    let mut out = String::from("| Method | % Output | % Stable | Rot. (deg) | CD | F-score |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    for (name, r) in rows {
        out.push_str(&format!(
            "| {name} | {:.2} | {} | {} | {} | {} |\n",
            r.pct_output,
            cell(r.pct_stable, 2),
            cell(r.mean_rot_deg, 2),
            cell(r.mean_cd, 5),
            cell(r.mean_fscore, 2),
        ));
    }
    out
}

/// Methods as rows, `theta_max` values as columns; rates in percent.
pub fn perturbation_table(rows: &[(String, &[PerturbationRow])]) -> String {
    let thetas: Vec<f64> = rows.first().map(|(_, r)| r.iter().map(|p| p.theta_max).collect()).unwrap_or_default();
    let mut out = String::from("| Method |");
    for t in &thetas {
        out.push_str(&format!(" {t} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(thetas.len()));
    out.push('\n');
    for (name, r) in rows {
        out.push_str(&format!("| {name} |"));
        for p in r.iter() {
            out.push_str(&format!(" {:.2} |", 100.0 * p.stability_rate));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalkit::aggregate;

    #[test]
    fn comparison_table_layout() {
        let empty = aggregate(vec![], 0, "h".into());
        let t = comparison_table(&[("Base".into(), &empty)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[2], "| Base | 0.00 | - | - | - | - |");
    }

    #[test]
    fn perturbation_table_layout() {
        let r = [PerturbationRow {
            theta_max: 0.01,
            n_shapes: 2,
            runs_per_shape: 10,
            stability_rate: 0.5,
        }];
        let t = perturbation_table(&[("DRO".into(), &r[..])]);
        assert_eq!(t, "| Method | 0.01 |\n|---|---:|\n| DRO | 50.00 |\n");
    }
}
