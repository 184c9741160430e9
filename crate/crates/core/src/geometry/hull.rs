use super::{orient, Polygon2D, PointSet, Vec2};
use crate::error::{Error, Result};

/// Andrew's monotone chain. Points are sorted by `(x, y)`; collinear boundary
/// points are dropped and the hull starts at the lexicographically smallest
/// point, counter-clockwise.
pub fn convex_hull(points: &PointSet) -> Result<Polygon2D> {
    let mut pts: Vec<Vec2> = points.points().to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return Err(Error::geometry("convex hull needs 3 distinct points"));
    }
    let mut lower: Vec<Vec2> = Vec::with_capacity(pts.len());
    for &p in &pts {
        while lower.len() >= 2 && orient(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Vec2> = Vec::with_capacity(pts.len());
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && orient(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    if lower.len() < 3 {
        return Err(Error::geometry("all points are collinear"));
    }
    Polygon2D::new(lower)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_with_center() {
        let ps = PointSet::new(vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.5, 0.5),
            Vec2::new(1.0, 0.0),
            Vec2::new(0.0, 1.0),
            Vec2::new(0.5, 0.0),
        ])
        .unwrap();
        let h = convex_hull(&ps).unwrap();
        assert_eq!(
            h.vertices(),
            &[Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(0.0, 1.0)]
        );
    }

    #[test]
    fn collinear_is_error() {
        let ps = PointSet::new((0..5).map(|i| Vec2::new(i as f64, 2.0 * i as f64)).collect()).unwrap();
        assert!(matches!(convex_hull(&ps), Err(Error::Geometry(_))));
    }
}
