use serde::{Deserialize, Serialize};

use super::{Polygon2D, Vec2};
use crate::error::{Error, Result};
use crate::tensor::kernels::softplus;

/// Radius floor added to every decoded vertex.
pub const DEFAULT_R_MIN: f64 = 0.05;

/// Latent sample: one pre-activation radius per polygon vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeLatent {
    pub values: Vec<f64>,
}

impl ShapeLatent {
    pub fn new(values: Vec<f64>) -> Self {
        ShapeLatent { values }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Vertex `i` sits at angle `2*pi*i/K` with radius `r_min + softplus(latent_i)`.
/// The result is star-shaped about the origin, hence simple and CCW.
pub fn decode_shape(latent: &ShapeLatent, k: usize, r_min: f64) -> Result<Polygon2D> {
    if latent.dim() != k {
        return Err(Error::input(format!("latent has {} values, decoder expects {k}", latent.dim())));
    }
    if k < 3 {
        return Err(Error::input("decoder needs at least 3 vertices"));
    }
    if !(r_min > 0.0) {
        return Err(Error::input("r_min must be positive"));
    }
    if !latent.is_finite() {
        return Err(Error::geometry("latent contains non-finite values"));
    }
    let verts = latent
        .values
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let angle = 2.0 * std::f64::consts::PI * i as f64 / k as f64;
            let r = r_min + softplus(z);
            Vec2::new(r * angle.cos(), r * angle.sin())
        })
        .collect();
    Polygon2D::new(verts)
}

/// Inverse of softplus for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

/// Latent whose decode has the given vertex radii (each must exceed `r_min`).
pub fn encode_radii(radii: &[f64], r_min: f64) -> Result<ShapeLatent> {
    radii
        .iter()
        .map(|&r| {
            if r > r_min && r.is_finite() {
                Ok(softplus_inv(r - r_min))
            } else {
                Err(Error::input(format!("radius {r} not above r_min {r_min}")))
            }
        })
        .collect::<Result<Vec<_>>>()
        .map(ShapeLatent::new)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_latent_gives_regular_polygon() {
        let p = decode_shape(&ShapeLatent::new(vec![0.7; 8]), 8, 0.1).unwrap();
        let r = 0.1 + softplus(0.7);
        for v in p.vertices() {
            assert!((v.norm() - r).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_latent_radius_is_r_min_plus_ln2() {
        let p = decode_shape(&ShapeLatent::new(vec![0.0; 16]), 16, 0.05).unwrap();
        for v in p.vertices() {
            assert!((v.norm() - (0.05 + std::f64::consts::LN_2)).abs() < 1e-14);
        }
        assert!(p.is_simple());
    }

    #[test]
    fn nan_latent_fails() {
        let mut z = vec![0.0; 16];
        z[3] = f64::NAN;
        assert!(decode_shape(&ShapeLatent::new(z), 16, 0.05).is_err());
    }

    #[test]
    fn encode_inverts_decode() {
        let radii: Vec<f64> = (0..16).map(|i| 0.2 + 0.05 * i as f64).collect();
        let z = encode_radii(&radii, 0.05).unwrap();
        let p = decode_shape(&z, 16, 0.05).unwrap();
        for (v, r) in p.vertices().iter().zip(&radii) {
            assert!((v.norm() - r).abs() < 1e-12);
        }
    }
}
