use super::PostprocError;
use crate::geo::{Point, Polygon};

fn perpendicular_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len = dx.hypot(dy);
    if len == 0.0 {
        return (p.x - a.x).hypot(p.y - a.y);
    }
    ((p.x - a.x) * dy - (p.y - a.y) * dx).abs() / len
}

fn douglas_peucker(points: &[Point], tolerance: f64, keep: &mut [bool]) {
    let mut stack = vec![(0usize, points.len() - 1)];
    while let Some((first, last)) = stack.pop() {
        if last <= first + 1 {
            continue;
        }
        let (mut best, mut best_d) = (first, -1.0);
        for i in first + 1..last {
            let d = perpendicular_distance(points[i], points[first], points[last]);
            if d > best_d {
                best = i;
                best_d = d;
            }
        }
        if best_d > tolerance {
            keep[best] = true;
            stack.push((first, best));
            stack.push((best, last));
        }
    }
}

/// Simplifies one closed ring, splitting it at the vertex farthest from
/// the first so both halves have distinct endpoints.
fn simplify_ring(ring: &[Point], tolerance: f64) -> Vec<Point> {
    let open = &ring[..ring.len() - 1];
    let n = open.len();
    let far = (1..n)
        .max_by(|&a, &b| {
            let da = (open[a].x - open[0].x).hypot(open[a].y - open[0].y);
            let db = (open[b].x - open[0].x).hypot(open[b].y - open[0].y);
            da.total_cmp(&db)
        })
        .unwrap_or(0);
    let mut keep = vec![false; n + 1];
    keep[0] = true;
    keep[far] = true;
    keep[n] = true;
    douglas_peucker(&ring[..=far], tolerance, &mut keep[..=far]);
    douglas_peucker(&ring[far..], tolerance, &mut keep[far..]);
    ring.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect()
}

/// Douglas–Peucker on every ring. Fails with `DegenerateResult` when a ring
/// collapses below four points or the simplified polygon is no longer
/// valid; callers keep the original shape in that case.
pub fn simplify(p: &Polygon, tolerance: f64) -> Result<Polygon, PostprocError> {
    if tolerance <= 0.0 {
        return Ok(p.clone());
    }
    let mut rings = p.rings().map(|r| simplify_ring(r, tolerance));
    let exterior = rings.next().expect("polygon has an exterior");
    let holes: Vec<Vec<Point>> = rings.collect();
    let out = Polygon::new(exterior, holes)
        .map_err(|e| PostprocError::DegenerateResult(e.to_string()))?;
    out.validate()
        .map_err(|e| PostprocError::DegenerateResult(e.to_string()))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::polygon_area;

    #[test]
    fn zero_tolerance_is_identity() {
        let p = Polygon::from_coords(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (2.0, 2.0), (0.0, 2.0)]).unwrap();
        assert_eq!(simplify(&p, 0.0).unwrap(), p);
    }

    #[test]
    fn collinear_vertices_removed() {
        let p = Polygon::from_coords(&[
            (0.0, 0.0),
            (1.0, 0.0),
            (2.0, 0.0),
            (2.0, 1.0),
            (2.0, 2.0),
            (0.0, 2.0),
            (0.0, 1.0),
        ])
        .unwrap();
        let s = simplify(&p, 1e-9).unwrap();
        assert_eq!(s.vertex_count(), 4);
        assert_eq!(polygon_area(&s), 4.0);
    }

    #[test]
    fn staircase_simplifies_with_small_area_change() {
        // Pixel staircase along a diagonal, closed by two long edges.
        let mut pts = vec![(0.0, 0.0)];
        for k in 0..20 {
            pts.push((k as f64 + 1.0, k as f64));
            pts.push((k as f64 + 1.0, k as f64 + 1.0));
        }
        pts.push((0.0, 20.0));
        let p = Polygon::from_coords(&pts).unwrap();
        let s = simplify(&p, 1.5).unwrap();
        assert!(s.vertex_count() < p.vertex_count());
        let (a0, a1) = (polygon_area(&p), polygon_area(&s));
        assert!((a0 - a1).abs() / a0 < 0.10, "{a0} vs {a1}");
    }

    #[test]
    fn collapse_is_reported() {
        let p = Polygon::from_coords(&[(0.0, 0.0), (10.0, 0.0), (10.0, 0.1), (0.0, 0.1)]).unwrap();
        assert!(matches!(simplify(&p, 1.0), Err(PostprocError::DegenerateResult(_))));
    }
}
