use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::tensor::kernels::sigmoid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DerivationReport {
    pub trials: usize,
    /// Max |KL difference - weighted noise-MSE difference| over the 1-D
    /// Gaussian instances.
    pub kl_max_discrepancy: f64,
    /// Max |Bradley-Terry loss with partition term - reward-difference form|.
    pub bt_max_discrepancy: f64,
    /// |-log sigmoid(0) - ln 2|.
    pub ln2_discrepancy: f64,
    pub passed: bool,
}

pub const IDENTITY_TOL: f64 = 1e-8;

fn gauss_kl(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    0.5 * (v2 / v1).ln() + (v1 + (m1 - m2).powi(2)) / (2.0 * v2) - 0.5
}

/// One denoising step of a 1-D diffusion: the gap between the reverse-step
/// KLs of two noise predictors against the true posterior, and the same gap
/// written as a weighted difference of noise-prediction errors.
fn kl_instance(rng: &mut Rng) -> (f64, f64) {
    let abar_prev = rng.uniform_range(0.3, 0.99);
    let alpha = rng.uniform_range(0.9, 0.999);
    let abar = abar_prev * alpha;
    let beta = 1.0 - alpha;
    let x0 = rng.normal();
    let eps = rng.normal();
    let eps_theta = eps + 0.5 * rng.normal();
    let eps_ref = eps + 0.5 * rng.normal();
    let xt = abar.sqrt() * x0 + (1.0 - abar).sqrt() * eps;

    // Posterior q(x_{t-1} | x_t, x_0) from its closed form in x_0 and x_t.
    let var = (1.0 - abar_prev) / (1.0 - abar) * beta;
    let mean_q = abar_prev.sqrt() * beta / (1.0 - abar) * x0 + alpha.sqrt() * (1.0 - abar_prev) / (1.0 - abar) * xt;
    let mean_p = |e: f64| (xt - beta / (1.0 - abar).sqrt() * e) / alpha.sqrt();
    let lhs = gauss_kl(mean_q, var, mean_p(eps_theta), var) - gauss_kl(mean_q, var, mean_p(eps_ref), var);

    let weight = beta * beta / (2.0 * var * alpha * (1.0 - abar));
    let rhs = weight * ((eps - eps_theta).powi(2) - (eps - eps_ref).powi(2));
    (lhs, rhs)
}

/// Preference probability under rewards `beta * log(p/p_ref) + beta * log Z`
/// computed from exponentials, against the partition-free sigmoid form.
fn bt_instance(rng: &mut Rng) -> (f64, f64) {
    let beta = rng.uniform_range(0.1, 5.0);
    let log_ratio_w = rng.uniform_range(-2.0, 2.0);
    let log_ratio_l = rng.uniform_range(-2.0, 2.0);
    let log_z = rng.uniform_range(-3.0, 3.0);
    let rw = beta * log_ratio_w + beta * log_z;
    let rl = beta * log_ratio_l + beta * log_z;
    let m = rw.max(rl);
    let p_w = (rw - m).exp() / ((rw - m).exp() + (rl - m).exp());
    let lhs = -p_w.ln();
    let rhs = -sigmoid(beta * (log_ratio_w - log_ratio_l)).ln();
    (lhs, rhs)
}

/// Numerical check of the algebra linking the reward-weighted KL objective
/// to the noise-prediction losses, and the preference-probability algebra
/// behind the contrastive loss.
pub fn verify_derivation_identities(trials: usize, seed: u64) -> DerivationReport {
    let mut rng = Rng::new(seed);
    let mut kl_max: f64 = 0.0;
    let mut bt_max: f64 = 0.0;
    for _ in 0..trials {
        let (l, r) = kl_instance(&mut rng);
        kl_max = kl_max.max((l - r).abs());
        let (l, r) = bt_instance(&mut rng);
        bt_max = bt_max.max((l - r).abs());
    }
    let ln2 = (-sigmoid(0.0).ln() - std::f64::consts::LN_2).abs();
    DerivationReport {
        trials,
        kl_max_discrepancy: kl_max,
        bt_max_discrepancy: bt_max,
        ln2_discrepancy: ln2,
        passed: kl_max < IDENTITY_TOL && bt_max < IDENTITY_TOL && ln2 < IDENTITY_TOL,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities_hold() {
        let r = verify_derivation_identities(100, 42);
        assert!(r.passed, "{r:?}");
        assert_eq!(r.ln2_discrepancy, 0.0);
    }

    #[test]
    fn equal_predictors_give_zero_on_both_sides() {
        let v = 0.01;
        assert_eq!(gauss_kl(0.3, v, 0.3, v) - gauss_kl(0.3, v, 0.3, v), 0.0);
        assert_eq!(gauss_kl(1.0, 2.0, 1.0, 2.0), 0.0);
    }
}
