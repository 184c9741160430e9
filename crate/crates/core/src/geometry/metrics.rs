use super::{Polygon2D, PointSet, Vec2};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// F-score distance threshold on unit-box-normalized shapes.
pub const DEFAULT_FSCORE_TAU: f64 = 0.05;

/// `n` points spaced `perimeter / n` apart along the boundary, starting at a
/// seeded random offset (systematic sampling, uniform by arc length).
pub fn sample_boundary(p: &Polygon2D, n: usize, seed: u64) -> Result<PointSet> {
    if n < 2 {
        return Err(Error::input("need at least 2 boundary samples"));
    }
    let lengths: Vec<f64> = p.edges().map(|(a, b)| a.dist(b)).collect();
    let total: f64 = lengths.iter().sum();
    if !(total > 0.0) {
        return Err(Error::geometry("polygon has zero perimeter"));
    }
    let spacing = total / n as f64;
    let offset = Rng::new(seed).uniform() * spacing;
    let verts = p.vertices();
    let mut out = Vec::with_capacity(n);
    let mut edge = 0;
    let mut edge_start = 0.0;
    for j in 0..n {
        let s = offset + j as f64 * spacing;
        while edge + 1 < lengths.len() && s >= edge_start + lengths[edge] {
            edge_start += lengths[edge];
            edge += 1;
        }
        let a = verts[edge];
        let b = verts[(edge + 1) % verts.len()];
        let frac = ((s - edge_start) / lengths[edge]).clamp(0.0, 1.0);
        out.push(a + (b - a) * frac);
    }
    PointSet::new(out)
}

/// Distance from every point of `a` to its nearest neighbour in `b`, with
/// the neighbour's index.
pub fn nearest_distances(a: &PointSet, b: &PointSet) -> Vec<(f64, usize)> {
    a.points()
        .iter()
        .map(|p| {
            let mut best = (f64::INFINITY, 0);
            for (j, q) in b.points().iter().enumerate() {
                let d = p.dist_sq(*q);
                if d < best.0 {
                    best = (d, j);
                }
            }
            (best.0.sqrt(), best.1)
        })
        .collect()
}

fn mean_nearest(a: &PointSet, b: &PointSet) -> f64 {
    nearest_distances(a, b).iter().map(|(d, _)| d).sum::<f64>() / a.len() as f64
}

/// Symmetric Chamfer distance: half the sum of the two mean nearest distances.
pub fn chamfer(a: &PointSet, b: &PointSet) -> f64 {
    0.5 * (mean_nearest(a, b) + mean_nearest(b, a))
}

/// Harmonic mean of precision (share of `a` within `tau` of `b`) and recall
/// (share of `b` within `tau` of `a`), in `[0, 1]`.
pub fn fscore(a: &PointSet, b: &PointSet, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::input("F-score threshold must be positive"));
    }
    let within = |x: &PointSet, y: &PointSet| {
        nearest_distances(x, y).iter().filter(|(d, _)| *d < tau).count() as f64 / x.len() as f64
    };
    let precision = within(a, b);
    let recall = within(b, a);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Isotropic scale and translation into `[0, 1]^2`: longest bbox side becomes
/// 1 and the shorter axis is centred.
pub fn normalize_unit_box(p: &Polygon2D) -> Result<Polygon2D> {
    let (lo, hi) = p.bbox();
    let (w, h) = (hi.x - lo.x, hi.y - lo.y);
    let side = w.max(h);
    if !(side > 1e-12) {
        return Err(Error::geometry("degenerate bounding box"));
    }
    let s = 1.0 / side;
    let off = Vec2::new(0.5 * (1.0 - w * s), 0.5 * (1.0 - h * s));
    p.map(|v| (v - lo) * s + off)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{decode_shape, ShapeLatent};

    fn square() -> Polygon2D {
        Polygon2D::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ])
        .unwrap()
    }

    fn star(seed: u64) -> Polygon2D {
        let mut rng = Rng::new(seed);
        decode_shape(&ShapeLatent::new(rng.normal_vec(16)), 16, 0.05).unwrap()
    }

    #[test]
    fn stratified_square_has_equal_counts_per_edge() {
        let pts = sample_boundary(&square(), 64, 3).unwrap();
        let mut counts = [0; 4];
        for p in pts.points() {
            let e = if p.y.abs() < 1e-12 && p.x < 1.0 {
                0
            } else if (p.x - 1.0).abs() < 1e-12 && p.y < 1.0 {
                1
            } else if (p.y - 1.0).abs() < 1e-12 && p.x > 0.0 {
                2
            } else {
                3
            };
            counts[e] += 1;
        }
        assert_eq!(counts, [16; 4]);
    }

    #[test]
    fn samples_lie_on_boundary_and_repeat() {
        let p = star(5);
        let a = sample_boundary(&p, 256, 9).unwrap();
        let b = sample_boundary(&p, 256, 9).unwrap();
        assert_eq!(a, b);
        let mean = a.points().iter().map(|q| p.boundary_distance(*q)).sum::<f64>() / 256.0;
        assert!(mean < 1e-12, "{mean}");
    }

    #[test]
    fn chamfer_and_fscore_identities() {
        let a = sample_boundary(&star(1), 128, 1).unwrap();
        let b = sample_boundary(&star(2), 100, 2).unwrap();
        assert_eq!(chamfer(&a, &a), 0.0);
        assert_eq!(fscore(&a, &a, 0.05).unwrap(), 1.0);
        assert_eq!(chamfer(&a, &b), chamfer(&b, &a));
        let one = PointSet::new(vec![Vec2::new(0.0, 0.0)]).unwrap();
        let other = PointSet::new(vec![Vec2::new(3.0, 4.0)]).unwrap();
        assert_eq!(chamfer(&one, &other), 5.0);
        assert_eq!(fscore(&one, &other, 0.05).unwrap(), 0.0);
        assert!(PointSet::new(vec![]).is_err());
    }

    #[test]
    fn normalize_properties() {
        let sq = normalize_unit_box(&square().map(|v| v + Vec2::new(3.0, -2.0)).unwrap()).unwrap();
        for (u, v) in sq.vertices().iter().zip(square().vertices()) {
            assert!(u.dist(*v) < 1e-12);
        }
        for seed in 0..20 {
            let p = star(seed);
            let n1 = normalize_unit_box(&p).unwrap();
            let (lo, hi) = n1.bbox();
            assert!(((hi.x - lo.x).max(hi.y - lo.y) - 1.0).abs() < 1e-12);
            let n2 = normalize_unit_box(&n1).unwrap();
            let n3 = normalize_unit_box(&p.scaled(3.7).unwrap()).unwrap();
            for ((a, b), c) in n1.vertices().iter().zip(n2.vertices()).zip(n3.vertices()) {
                assert!(a.dist(*b) < 1e-12);
                assert!(a.dist(*c) < 1e-12);
            }
        }
    }
}
