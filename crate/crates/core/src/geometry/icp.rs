use super::metrics::{chamfer, nearest_distances};
use super::{PointSet, RigidTransform2D, Vec2};
use crate::error::{Error, Result};

pub const ICP_DEFAULT_MAX_ITERS: usize = 50;
pub const ICP_DEFAULT_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcpResult {
    /// Transform applied to the source set.
    pub transform: RigidTransform2D,
    /// Chamfer distance after alignment.
    pub cd: f64,
    /// Chamfer distance before alignment.
    pub initial_cd: f64,
    pub iterations: usize,
}

/// Chamfer distance plus source-to-target correspondences in one pass.
fn chamfer_with_matches(a: &PointSet, b: &PointSet) -> (f64, Vec<usize>) {
    let ab = nearest_distances(a, b);
    let ba = nearest_distances(b, a);
    let m_ab = ab.iter().map(|(d, _)| d).sum::<f64>() / a.len() as f64;
    let m_ba = ba.iter().map(|(d, _)| d).sum::<f64>() / b.len() as f64;
    (0.5 * (m_ab + m_ba), ab.into_iter().map(|(_, j)| j).collect())
}

/// Least-squares rotation + translation taking `src[i]` onto `dst[i]`.
fn fit_rigid(src: &[Vec2], dst: &[Vec2]) -> RigidTransform2D {
    let n = src.len() as f64;
    let cs = src.iter().fold(Vec2::default(), |acc, p| acc + *p) * (1.0 / n);
    let cd = dst.iter().fold(Vec2::default(), |acc, p| acc + *p) * (1.0 / n);
    let (mut dot, mut cross) = (0.0, 0.0);
    for (p, q) in src.iter().zip(dst) {
        let (p, q) = (*p - cs, *q - cd);
        dot += p.dot(q);
        cross += p.cross(q);
    }
    let angle = cross.atan2(dot);
    RigidTransform2D::new(angle, cd - cs.rotate(angle))
}

/// Points kept at the coarsest level.
const ICP_COARSE_POINTS: usize = 4;

/// Subsampling strides, coarsest first, halving down to 1.
fn strides(n: usize) -> Vec<usize> {
    let mut s = vec![1];
    while n / (s.last().unwrap() * 2) >= ICP_COARSE_POINTS {
        s.push(s.last().unwrap() * 2);
    }
    s.reverse();
    s
}

fn strided(p: &PointSet, stride: usize) -> Option<PointSet> {
    let pts: Vec<Vec2> = p.points().iter().step_by(stride).copied().collect();
    (pts.len() >= 3).then(|| PointSet::new(pts).expect("subset of a valid set"))
}

fn refine(source: &PointSet, target: &PointSet, start: RigidTransform2D, max_iters: usize, tol: f64) -> (RigidTransform2D, f64, usize) {
    let mut current = start;
    let (start_cd, mut matches) = chamfer_with_matches(&source.transformed(&current), target);
    let mut best = (current, start_cd, 0);
    let mut last_cd = start_cd;
    for it in 1..=max_iters {
        let moved = source.transformed(&current);
        let dst: Vec<Vec2> = matches.iter().map(|&j| target.points()[j]).collect();
        let step = fit_rigid(moved.points(), &dst);
        current = current.then(&step);
        let (cd, m) = chamfer_with_matches(&source.transformed(&current), target);
        matches = m;
        if cd < best.1 {
            best = (current, cd, it);
        }
        if last_cd - cd < tol {
            break;
        }
        last_cd = cd;
    }
    best
}

/// Point-to-point ICP aligning `source` onto `target`, starting from the
/// identity and refined coarse to fine over strided subsets. Each level stops
/// when an iteration improves the Chamfer distance by less than `tol`, or
/// after `max_iters`; the best full-resolution transform seen is returned,
/// and never does worse than the identity.
pub fn icp_align(source: &PointSet, target: &PointSet, max_iters: usize, tol: f64) -> Result<IcpResult> {
    if source.len() < 3 || target.len() < 3 {
        return Err(Error::input("ICP needs at least 3 points per set"));
    }
    let initial_cd = chamfer(source, target);
    let mut current = RigidTransform2D::IDENTITY;
    let mut iterations = 0;
    for stride in strides(source.len().min(target.len())) {
        let (src, dst) = if stride == 1 {
            (source.clone(), target.clone())
        } else {
            match (strided(source, stride), strided(target, stride)) {
                (Some(a), Some(b)) => (a, b),
                _ => continue,
            }
        };
        let (t, _, it) = refine(&src, &dst, current, max_iters, tol);
        current = t;
        iterations += it;
    }
    let cd = chamfer(&source.transformed(&current), target);
    if cd < initial_cd {
        Ok(IcpResult {
            transform: current,
            cd,
            initial_cd,
            iterations,
        })
    } else {
        Ok(IcpResult {
            transform: RigidTransform2D::IDENTITY,
            cd: initial_cd,
            initial_cd,
            iterations: 0,
        })
    }
}
