use super::{wrap_angle, RigidBody};
use crate::error::{Error, Result};
use crate::geometry::Polygon2D;

/// COM height above the ground when `p` rests rotated by `angle`.
pub fn com_height(p: &Polygon2D, angle: f64) -> Result<f64> {
    let body = RigidBody::new(p)?;
    Ok(height(&body, angle))
}

fn height(body: &RigidBody, angle: f64) -> f64 {
    let (s, c) = angle.sin_cos();
    let min_y = body
        .hull
        .iter()
        .map(|v| s * v.x + c * v.y)
        .fold(f64::INFINITY, f64::min);
    s * body.com.x + c * body.com.y - min_y
}

/// Equilibrium tilt in degrees by greedy descent of the COM height over a
/// grid of orientations, starting upright.
pub fn brute_force_settle(p: &Polygon2D, grid_step: f64) -> Result<f64> {
    brute_force_settle_from(p, 0.0, grid_step)
}

/// As [`brute_force_settle`], starting from `start` radians.
pub fn brute_force_settle_from(p: &Polygon2D, start: f64, grid_step: f64) -> Result<f64> {
    if !(grid_step > 0.0 && grid_step <= 0.1f64.to_radians() + 1e-15) {
        return Err(Error::input("grid step must lie in (0, 0.1] degrees"));
    }
    let body = RigidBody::new(p)?;
    let mut k: i64 = 0;
    let at = |k: i64| height(&body, start + k as f64 * grid_step);
    let mut h = at(0);
    let limit = (4.0 * std::f64::consts::PI / grid_step) as i64;
    while k.abs() < limit {
        let (left, right) = (at(k - 1), at(k + 1));
        let (next, hn) = if right < left { (k + 1, right) } else { (k - 1, left) };
        if hn < h {
            k = next;
            h = hn;
        } else {
            break;
        }
    }
    Ok(wrap_angle(start + k as f64 * grid_step).abs().to_degrees())
}
