use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{encode_radii, ShapeLatent, Vec2};
use crate::rng::Rng;

/// Parametric generators of ground-truth shapes. Each maps a parameter
/// vector to an outline polygon, which is ray-cast from the origin at the
/// decoder's vertex angles to give radii and hence a latent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FamilyKind {
    /// Low wide block; stable.
    Slab,
    /// Block on a thin peg set off its centre line; tips onto the heavier
    /// side once the peg is tall.
    Footed,
    /// Narrow stem under a wide, laterally offset cap.
    Mushroom,
    /// Block with a pointed bottom that rolls onto one of its flanks.
    Spindle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeFamily {
    pub kind: FamilyKind,
    /// Inclusive-exclusive `[lo, hi)` range per parameter.
    pub ranges: Vec<(f64, f64)>,
}

impl ShapeFamily {
    pub fn new(kind: FamilyKind) -> Self {
        let ranges = match kind {
            // width, height
            FamilyKind::Slab => vec![(1.2, 1.8), (0.5, 0.9)],
            // width, height, peg width, peg height, body shift (signed)
            FamilyKind::Footed => vec![(0.9, 1.4), (0.5, 0.9), (0.06, 0.12), (0.05, 0.35), (-0.15, 0.15)],
            // stem width, cap width, cap offset (signed), stem height
            FamilyKind::Mushroom => vec![(0.25, 0.5), (1.2, 1.8), (-0.5, 0.5), (0.5, 0.9)],
            // width, height, tip depth, lean (signed)
            FamilyKind::Spindle => vec![(0.8, 1.2), (0.8, 1.2), (0.2, 0.45), (-0.2, 0.2)],
        };
        ShapeFamily { kind, ranges }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            FamilyKind::Slab => "slab",
            FamilyKind::Footed => "footed",
            FamilyKind::Mushroom => "mushroom",
            FamilyKind::Spindle => "spindle",
        }
    }

    pub fn sample_params(&self, rng: &mut Rng) -> Vec<f64> {
        self.ranges.iter().map(|&(lo, hi)| rng.uniform_range(lo, hi)).collect()
    }

    /// Outline polygon (CCW) for a parameter vector.
    pub fn outline(&self, p: &[f64]) -> Result<Vec<Vec2>> {
        if p.len() != self.ranges.len() || p.iter().any(|v| !v.is_finite()) {
            return Err(Error::input(format!("{} expects {} finite parameters", self.name(), self.ranges.len())));
        }
        let v = |x: f64, y: f64| Vec2::new(x, y);
        Ok(match self.kind {
            FamilyKind::Slab => {
                let (w, h) = (p[0] / 2.0, p[1] / 2.0);
                vec![v(-w, -h), v(w, -h), v(w, h), v(-w, h)]
            }
            FamilyKind::Footed => {
                let (w, h, f, g, dx) = (p[0] / 2.0, p[1] / 2.0, p[2] / 2.0, p[3], p[4]);
                let base = -h + g / 2.0;
                vec![
                    v(-f, base - g),
                    v(f, base - g),
                    v(f, base),
                    v(dx + w, base),
                    v(dx + w, base + 2.0 * h),
                    v(dx - w, base + 2.0 * h),
                    v(dx - w, base),
                    v(-f, base),
                ]
            }
            FamilyKind::Mushroom => {
                let (sw, cw, off, sh) = (p[0] / 2.0, p[1] / 2.0, p[2], p[3]);
                let (bottom, top) = (-0.6, 0.6);
                let neck = bottom + sh;
                vec![
                    v(-sw, bottom),
                    v(sw, bottom),
                    v(sw, neck),
                    v(off + cw, neck),
                    v(off + cw, top),
                    v(off - cw, top),
                    v(off - cw, neck),
                    v(-sw, neck),
                ]
            }
            FamilyKind::Spindle => {
                let (w, h, d, lean) = (p[0] / 2.0, p[1] / 2.0, p[2], p[3]);
                vec![
                    v(lean, -h - d),
                    v(w, -h),
                    v(0.8 * w, h),
                    v(-0.8 * w, h),
                    v(-w, -h),
                ]
            }
        })
    }

    /// Ground-truth latent for a parameter vector.
    pub fn latent(&self, p: &[f64], k: usize, r_min: f64) -> Result<ShapeLatent> {
        let outline = self.outline(p)?;
        let radii = (0..k)
            .map(|i| ray_cast(&outline, 2.0 * std::f64::consts::PI * i as f64 / k as f64))
            .collect::<Result<Vec<_>>>()?;
        encode_radii(&radii, r_min)
    }
}

pub fn default_families() -> Vec<ShapeFamily> {
    [FamilyKind::Footed, FamilyKind::Mushroom, FamilyKind::Spindle]
        .into_iter()
        .map(ShapeFamily::new)
        .collect()
}

/// Farthest boundary crossing of the ray from the origin at `angle`.
fn ray_cast(outline: &[Vec2], angle: f64) -> Result<f64> {
    let d = Vec2::new(angle.cos(), angle.sin());
    let n = outline.len();
    let mut best: f64 = 0.0;
    for i in 0..n {
        let (a, b) = (outline[i], outline[(i + 1) % n]);
        let e = b - a;
        let denom = d.cross(e);
        if denom.abs() < 1e-15 {
            continue;
        }
        let s = a.cross(e) / denom;
        let u = a.cross(d) / denom;
        if s > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) {
            best = best.max(s);
        }
    }
    if best > 0.0 {
        Ok(best)
    } else {
        Err(Error::geometry("ray misses the outline; origin outside the shape"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::decode_shape;

    #[test]
    fn ray_cast_square() {
        let sq = ShapeFamily::new(FamilyKind::Slab).outline(&[2.0, 2.0]).unwrap();
        assert!((ray_cast(&sq, 0.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((ray_cast(&sq, std::f64::consts::FRAC_PI_4).unwrap() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn every_family_decodes_in_range() {
        let mut rng = Rng::new(1);
        for kind in [FamilyKind::Slab, FamilyKind::Footed, FamilyKind::Mushroom, FamilyKind::Spindle] {
            let fam = ShapeFamily::new(kind);
            for _ in 0..200 {
                let p = fam.sample_params(&mut rng);
                let z = fam.latent(&p, 16, 0.05).unwrap();
                assert!(z.is_finite());
                let poly = decode_shape(&z, 16, 0.05).unwrap();
                assert!(poly.is_simple());
            }
        }
    }

    #[test]
    fn decoded_slab_matches_outline_at_vertices() {
        let fam = ShapeFamily::new(FamilyKind::Slab);
        let z = fam.latent(&[1.6, 0.6], 16, 0.05).unwrap();
        let poly = decode_shape(&z, 16, 0.05).unwrap();
        // Vertex 12 points straight down onto the bottom edge.
        assert!((poly.vertices()[12].y + 0.3).abs() < 1e-12);
        assert!(poly.vertices()[12].x.abs() < 1e-12);
    }

    #[test]
    fn footed_peg_lies_under_the_bottom_ray() {
        let fam = ShapeFamily::new(FamilyKind::Footed);
        let (h, g) = (0.6, 0.2);
        let z = fam.latent(&[1.2, h, 0.1, g, 0.1], 16, 0.05).unwrap();
        let poly = decode_shape(&z, 16, 0.05).unwrap();
        assert!((poly.vertices()[12].y + (h / 2.0 + g / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn default_families_yield_both_classes() {
        use crate::physics::{settle, SimConfig};
        let sim = SimConfig::default();
        let mut rng = Rng::new(3);
        for fam in default_families() {
            let (mut stable, mut unstable) = (0, 0);
            for _ in 0..300 {
                let z = fam.latent(&fam.sample_params(&mut rng), 16, 0.05).unwrap();
                let poly = decode_shape(&z, 16, 0.05).unwrap();
                if settle(&poly, 0.0, &sim).unwrap().stable {
                    stable += 1;
                } else {
                    unstable += 1;
                }
            }
            assert!(stable > 10 && unstable > 10, "{}: {stable} stable, {unstable} unstable", fam.name());
        }
    }
}
