//! Quasi-static rigid-body statics on flat ground: settle a uniform-density
//! polygon by toppling about support endpoints until the centre of mass is
//! over the support, then apply the tilt cutoff.

mod brute;
mod cut;

pub use brute::{brute_force_settle, brute_force_settle_from, com_height};
pub use cut::flat_cut;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{convex_hull, Polygon2D, Vec2};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// Contact band as a fraction of the shape diameter.
    pub contact_eps: f64,
    pub max_events: usize,
    pub cutoff_deg: f64,
    /// Absolute slack when testing the COM against the support interval.
    pub support_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            contact_eps: 1e-7,
            max_events: 256,
            cutoff_deg: 20.0,
            support_tol: 1e-10,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff_deg > 0.0 && self.cutoff_deg < 90.0) {
            return Err(Error::config(format!("cutoff {} outside (0, 90) degrees", self.cutoff_deg)));
        }
        if !(self.contact_eps > 0.0) || !(self.support_tol >= 0.0) {
            return Err(Error::config("contact epsilon must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToppleEvent {
    /// Pivot in the pose before the event.
    pub pivot: Vec2,
    /// Signed rotation in degrees, counter-clockwise positive.
    pub rotation_deg: f64,
    /// COM height above ground after the event.
    pub com_height: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub tilt_deg: f64,
    pub stable: bool,
    pub settled: bool,
    pub topple_count: usize,
    pub events: Vec<ToppleEvent>,
    /// Total orientation of the resting pose relative to the input, radians.
    pub final_angle: f64,
    pub pose: Polygon2D,
}

/// Hull vertices and centre of mass of a polygon, the only inputs the
/// statics need.
#[derive(Clone, Debug)]
pub(crate) struct RigidBody {
    pub hull: Vec<Vec2>,
    pub com: Vec2,
    pub diameter: f64,
}

impl RigidBody {
    pub fn new(p: &Polygon2D) -> Result<Self> {
        let (com, _) = p.centroid_area()?;
        let hull = convex_hull(&p.point_set())?.vertices().to_vec();
        let mut diameter: f64 = 0.0;
        for (i, a) in hull.iter().enumerate() {
            for b in &hull[i + 1..] {
                diameter = diameter.max(a.dist(*b));
            }
        }
        Ok(RigidBody { hull, com, diameter })
    }

    /// Hull and COM rotated by `angle` and lifted so the lowest point is on
    /// the ground.
    pub fn posed(&self, angle: f64) -> (Vec<Vec2>, Vec2) {
        let hull: Vec<Vec2> = self.hull.iter().map(|v| v.rotate(angle)).collect();
        let min_y = hull.iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
        let lift = Vec2::new(0.0, -min_y);
        (hull.into_iter().map(|v| v + lift).collect(), self.com.rotate(angle) + lift)
    }
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = a.rem_euclid(tau);
    if w > std::f64::consts::PI {
        w - tau
    } else {
        w
    }
}

/// Settles `p` after rotating it by `initial_rotation` (radians).
pub fn settle(p: &Polygon2D, initial_rotation: f64, cfg: &SimConfig) -> Result<StabilityReport> {
    if !initial_rotation.is_finite() || initial_rotation.abs() >= std::f64::consts::PI {
        return Err(Error::input("initial rotation must lie in (-180, 180) degrees"));
    }
    let body = RigidBody::new(p)?;
    let band = cfg.contact_eps * body.diameter;
    let mut angle = initial_rotation;
    let mut events = Vec::new();
    let mut settled = false;
    loop {
        let (hull, com) = body.posed(angle);
        let contacts: Vec<Vec2> = hull.iter().copied().filter(|v| v.y <= band).collect();
        let lo = contacts.iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
        let hi = contacts.iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max);
        if com.x >= lo - cfg.support_tol && com.x <= hi + cfg.support_tol {
            settled = true;
            break;
        }
        if events.len() >= cfg.max_events {
            break;
        }
        // Tip toward the COM side about the outermost contact on that side.
        let right = com.x > hi;
        let pivot = if right {
            *contacts.iter().max_by(|a, b| a.x.total_cmp(&b.x)).expect("contact exists")
        } else {
            *contacts.iter().min_by(|a, b| a.x.total_cmp(&b.x)).expect("contact exists")
        };
        let phi = hull
            .iter()
            .filter_map(|v| {
                let dx = if right { v.x - pivot.x } else { pivot.x - v.x };
                (dx > 0.0).then(|| (v.y - pivot.y).max(0.0).atan2(dx))
            })
            .fold(f64::INFINITY, f64::min);
        if !phi.is_finite() {
            return Err(Error::numeric("no vertex beyond the pivot"));
        }
        let rotation = if right { -phi } else { phi };
        let before = com.y;
        angle += rotation;
        let (_, after) = body.posed(angle);
        debug_assert!(after.y <= before + 1e-9 * body.diameter, "COM rose during topple");
        events.push(ToppleEvent {
            pivot,
            rotation_deg: rotation.to_degrees(),
            com_height: after.y,
        });
    }
    let final_angle = angle;
    let tilt_deg = wrap_angle(final_angle).abs().to_degrees();
    let pose = p.map(|v| v.rotate(final_angle))?;
    let min_y = pose.vertices().iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
    let pose = pose.map(|v| Vec2::new(v.x, v.y - min_y))?;
    let mut report = StabilityReport {
        tilt_deg,
        stable: false,
        settled,
        topple_count: events.len(),
        events,
        final_angle,
        pose,
    };
    report.stable = oracle(&report, cfg);
    Ok(report)
}

/// The binary soundness label: settled and tilted strictly less than the cutoff.
pub fn oracle(report: &StabilityReport, cfg: &SimConfig) -> bool {
    report.settled && report.tilt_deg < cfg.cutoff_deg
}

/// Fraction of `n_runs` settles, each from a rotation drawn uniformly from
/// `(-theta_max, theta_max)`, that end stable.
pub fn perturbation_sweep(p: &Polygon2D, theta_max: f64, n_runs: usize, seed: u64, cfg: &SimConfig) -> Result<f64> {
    if n_runs == 0 {
        return Err(Error::input("perturbation sweep needs at least one run"));
    }
    if !(theta_max >= 0.0) || theta_max >= std::f64::consts::PI {
        return Err(Error::input("theta_max must lie in [0, pi)"));
    }
    let mut stable = 0usize;
    for i in 0..n_runs {
        let theta = perturbation_angle(theta_max, seed, i as u64);
        if settle(p, theta, cfg)?.stable {
            stable += 1;
        }
    }
    Ok(stable as f64 / n_runs as f64)
}

/// The initial rotation of run `index` in a perturbation sweep.
pub fn perturbation_angle(theta_max: f64, seed: u64, index: u64) -> f64 {
    let mut rng = Rng::for_item(seed, index);
    loop {
        let u = rng.uniform();
        if u > 0.0 {
            return theta_max * (2.0 * u - 1.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poly(v: &[(f64, f64)]) -> Polygon2D {
        Polygon2D::new(v.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).unwrap()
    }

    fn square() -> Polygon2D {
        poly(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)])
    }

    #[test]
    fn square_is_stable_without_topples() {
        let r = settle(&square(), 0.0, &SimConfig::default()).unwrap();
        assert_eq!(r.tilt_deg, 0.0);
        assert!(r.stable && r.settled);
        assert_eq!(r.topple_count, 0);
        assert!(r.events.is_empty());
    }

    #[test]
    fn hexagon_on_edge_is_stable() {
        let hex: Vec<(f64, f64)> = (0..6)
            .map(|i| {
                let a = std::f64::consts::PI / 6.0 * (2 * i + 1) as f64 - std::f64::consts::FRAC_PI_2;
                (a.cos(), a.sin())
            })
            .collect();
        let r = settle(&poly(&hex), 0.0, &SimConfig::default()).unwrap();
        assert!(r.tilt_deg < 1e-9 && r.stable);
    }

    #[test]
    fn tilted_square_returns_upright() {
        let r = settle(&square(), 10f64.to_radians(), &SimConfig::default()).unwrap();
        assert_eq!(r.topple_count, 1);
        assert!(r.tilt_deg < 1e-9, "{}", r.tilt_deg);
        let r = settle(&square(), 60f64.to_radians(), &SimConfig::default()).unwrap();
        assert!((r.tilt_deg - 90.0).abs() < 1e-9, "{}", r.tilt_deg);
        assert!(!r.stable && r.settled);
    }

    #[test]
    fn leaning_block_topples_onto_its_side() {
        // Parallelogram leaning so far its COM is past the footprint.
        let p = poly(&[(0.0, 0.0), (0.2, 0.0), (1.2, 1.0), (1.0, 1.0)]);
        let r = settle(&p, 0.0, &SimConfig::default()).unwrap();
        assert!(r.topple_count >= 1);
        assert!(!r.stable);
        for w in r.events.windows(2) {
            assert!(w[1].com_height <= w[0].com_height + 1e-12);
        }
    }

    #[test]
    fn cutoff_is_strict() {
        let cfg = SimConfig::default();
        let mut r = settle(&square(), 0.0, &cfg).unwrap();
        r.tilt_deg = 19.9;
        assert!(oracle(&r, &cfg));
        r.tilt_deg = 20.0;
        assert!(!oracle(&r, &cfg));
        r.tilt_deg = 0.0;
        r.settled = false;
        assert!(!oracle(&r, &cfg));
    }

    #[test]
    fn event_budget_marks_unsettled() {
        let cfg = SimConfig { max_events: 0, ..SimConfig::default() };
        let r = settle(&square(), 10f64.to_radians(), &cfg).unwrap();
        assert!(!r.settled && !r.stable);
    }

    #[test]
    fn zero_perturbation_matches_unperturbed() {
        let cfg = SimConfig::default();
        let p = poly(&[(0.0, 0.0), (0.2, 0.0), (1.2, 1.0), (1.0, 1.0)]);
        assert_eq!(perturbation_sweep(&p, 0.0, 5, 1, &cfg).unwrap(), 0.0);
        assert_eq!(perturbation_sweep(&square(), 0.0, 5, 1, &cfg).unwrap(), 1.0);
        let a = perturbation_sweep(&square(), 0.5, 50, 7, &cfg).unwrap();
        assert_eq!(a, perturbation_sweep(&square(), 0.5, 50, 7, &cfg).unwrap());
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(SimConfig { cutoff_deg: 90.0, ..SimConfig::default() }.validate().is_err());
        assert!(SimConfig { contact_eps: 0.0, ..SimConfig::default() }.validate().is_err());
    }
}
