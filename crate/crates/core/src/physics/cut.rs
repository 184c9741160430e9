use crate::error::{Error, Result};
use crate::geometry::{Polygon2D, Vec2};

#[derive(Clone, Copy)]
enum Item {
    Vertex(Vec2),
    Entry(Vec2),
    Exit(Vec2),
}

/// Removes everything below `min_y + z` and closes the boundary with flat
/// bottom edges. If the cut splits the shape, the piece with the largest
/// area is kept.
pub fn flat_cut(p: &Polygon2D, z: f64) -> Result<Polygon2D> {
    let (lo, hi) = p.bbox();
    if !(z > 0.0 && z < hi.y - lo.y) {
        return Err(Error::geometry(format!("cut height {z} outside (0, {})", hi.y - lo.y)));
    }
    let c = lo.y + z;
    let v = p.vertices();
    let n = v.len();
    let mut items = Vec::with_capacity(2 * n);
    for i in 0..n {
        let (a, b) = (v[i], v[(i + 1) % n]);
        let (ia, ib) = (a.y >= c, b.y >= c);
        if ia {
            items.push(Item::Vertex(a));
        }
        if ia != ib {
            let t = (c - a.y) / (b.y - a.y);
            let x = Vec2::new(a.x + t * (b.x - a.x), c);
            items.push(if ia { Item::Exit(x) } else { Item::Entry(x) });
        }
    }
    let first = items
        .iter()
        .position(|it| matches!(it, Item::Entry(_)))
        .ok_or_else(|| Error::geometry("cut removes the whole polygon"))?;
    items.rotate_left(first);

    // Arcs of the boundary above the cut line, each entry..exit.
    let mut arcs: Vec<Vec<Vec2>> = Vec::new();
    for it in items {
        match it {
            Item::Entry(q) => arcs.push(vec![q]),
            Item::Vertex(q) | Item::Exit(q) => arcs.last_mut().expect("starts with entry").push(q),
        }
    }
    // Along the cut line, crossings sorted by x pair up as exit -> entry.
    let mut crossings: Vec<(f64, usize, bool)> = Vec::new();
    for (k, arc) in arcs.iter().enumerate() {
        crossings.push((arc[0].x, k, true));
        crossings.push((arc[arc.len() - 1].x, k, false));
    }
    crossings.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
    let mut next_arc = vec![usize::MAX; arcs.len()];
    for pair in crossings.chunks(2) {
        let (exit, entry) = (pair[0], pair[1]);
        if exit.2 || !entry.2 {
            return Err(Error::geometry("cut line crossings do not pair up"));
        }
        next_arc[exit.1] = entry.1;
    }

    let mut used = vec![false; arcs.len()];
    let mut best: Option<(f64, Vec<Vec2>)> = None;
    for start in 0..arcs.len() {
        if used[start] {
            continue;
        }
        let mut ring = Vec::new();
        let mut k = start;
        while !used[k] {
            used[k] = true;
            ring.extend_from_slice(&arcs[k]);
            k = next_arc[k];
        }
        let ring = dedup(ring, 1e-12 * (hi - lo).norm());
        if ring.len() < 3 {
            continue;
        }
        let area: f64 = 0.5
            * (0..ring.len())
                .map(|i| ring[i].cross(ring[(i + 1) % ring.len()]))
                .sum::<f64>();
        if best.as_ref().map_or(true, |(a, _)| area > *a) {
            best = Some((area, ring));
        }
    }
    let (_, ring) = best.ok_or_else(|| Error::geometry("cut removes the whole polygon"))?;
    let out = Polygon2D::new(ring)?;
    if !out.is_simple() {
        return Err(Error::geometry("cut produced a self-intersecting polygon"));
    }
    Ok(out)
}

fn dedup(ring: Vec<Vec2>, tol: f64) -> Vec<Vec2> {
    let mut out: Vec<Vec2> = Vec::with_capacity(ring.len());
    for q in ring {
        if out.last().map_or(true, |l| l.dist(q) > tol) {
            out.push(q);
        }
    }
    while out.len() > 1 && out[0].dist(out[out.len() - 1]) <= tol {
        out.pop();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{settle, SimConfig};

    fn poly(v: &[(f64, f64)]) -> Polygon2D {
        Polygon2D::new(v.iter().map(|&(x, y)| Vec2::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn square_cut_is_shorter_rectangle() {
        let sq = poly(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        let r = flat_cut(&sq, 0.2).unwrap();
        let (lo, hi) = r.bbox();
        assert!((hi.y - lo.y - 0.8).abs() < 1e-12);
        assert!((r.centroid_area().unwrap().1 - 0.8).abs() < 1e-12);
        assert_eq!(r.len(), 4);
    }

    #[test]
    fn diamond_gets_flat_contact() {
        let d = poly(&[(0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)]);
        let mut prev_width = 0.0;
        for z in [0.05, 0.1, 0.2, 0.4] {
            let r = flat_cut(&d, z).unwrap();
            let rep = settle(&r, 0.0, &SimConfig::default()).unwrap();
            let floor: Vec<_> = rep.pose.vertices().iter().filter(|v| v.y < 1e-9).collect();
            assert!(floor.len() >= 2);
            let width = floor.iter().map(|v| v.x).fold(f64::MIN, f64::max)
                - floor.iter().map(|v| v.x).fold(f64::MAX, f64::min);
            assert!(width >= prev_width);
            prev_width = width;
        }
    }

    #[test]
    fn split_keeps_largest_piece() {
        // Two legs of different width; a cut above both feet but below the
        // crotch leaves one piece.
        let u = poly(&[
            (0.0, 0.0),
            (0.3, 0.0),
            (0.3, 0.5),
            (0.7, 0.5),
            (0.7, 0.2),
            (1.0, 0.2),
            (1.0, 1.0),
            (0.0, 1.0),
        ]);
        let r = flat_cut(&u, 0.1).unwrap();
        assert!(r.is_simple());
        assert!((r.centroid_area().unwrap().1 - 0.71).abs() < 1e-12);
        let u2 = poly(&[(0.0, 0.0), (0.3, 0.0), (0.3, 0.5), (0.7, 0.5), (0.7, 0.0), (1.0, 0.0), (1.0, 0.6), (0.0, 0.6)]);
        let r2 = flat_cut(&u2, 0.55).unwrap();
        assert!((r2.centroid_area().unwrap().1 - 0.05).abs() < 1e-12);
        let r3 = flat_cut(&u2, 0.2).unwrap();
        assert!((r3.centroid_area().unwrap().1 - 0.28).abs() < 1e-12);
        let cup = poly(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.6, 1.0), (0.6, 0.3), (0.3, 0.3), (0.3, 1.0), (0.0, 1.0)]);
        let r4 = flat_cut(&cup, 0.5).unwrap();
        assert!((r4.centroid_area().unwrap().1 - 0.2).abs() < 1e-12);
        assert!(r4.vertices().iter().all(|v| v.x >= 0.6 - 1e-12));
    }

    #[test]
    fn out_of_range_heights_rejected() {
        let sq = poly(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)]);
        assert!(flat_cut(&sq, 0.0).is_err());
        assert!(flat_cut(&sq, 1.0).is_err());
    }
}
