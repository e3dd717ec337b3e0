use geo::{Area, BooleanOps};
use serde::{Deserialize, Serialize};

use super::GeoError;

/// Intersection pieces at or below this area (m²) are treated as degenerate.
pub const CLIP_SNAP_AREA: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

impl From<(f64, f64)> for Point {
    fn from((x, y): (f64, f64)) -> Self {
        Self { x, y }
    }
}

/// Axis-aligned bounding box in world units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_x: f64,
    pub min_y: f64,
    pub max_x: f64,
    pub max_y: f64,
}

impl BBox {
    pub fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    pub fn height(&self) -> f64 {
        self.max_y - self.min_y
    }

    pub fn long_side(&self) -> f64 {
        self.width().max(self.height())
    }

    pub fn intersects(&self, other: &BBox) -> bool {
        self.min_x <= other.max_x
            && other.min_x <= self.max_x
            && self.min_y <= other.max_y
            && other.min_y <= self.max_y
    }
}

/// A polygon with closed rings: the exterior plus zero or more holes.
///
/// Construction checks that every ring is closed and has at least four
/// points. Simplicity of the rings is checked separately by
/// [`Polygon::validate`] since it is quadratic in the vertex count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolygon", into = "RawPolygon")]
pub struct Polygon {
    exterior: Vec<Point>,
    holes: Vec<Vec<Point>>,
}

#[derive(Serialize, Deserialize)]
struct RawPolygon {
    exterior: Vec<Point>,
    #[serde(default)]
    holes: Vec<Vec<Point>>,
}

impl TryFrom<RawPolygon> for Polygon {
    type Error = GeoError;

    fn try_from(raw: RawPolygon) -> Result<Self, Self::Error> {
        Polygon::new(raw.exterior, raw.holes)
    }
}

impl From<Polygon> for RawPolygon {
    fn from(p: Polygon) -> Self {
        RawPolygon {
            exterior: p.exterior,
            holes: p.holes,
        }
    }
}

fn check_ring(ring: &[Point], index: usize) -> Result<(), GeoError> {
    if ring.len() < 4 {
        return Err(GeoError::InvalidRing {
            ring: index,
            reason: "fewer than 4 points",
        });
    }
    if ring.first() != ring.last() {
        return Err(GeoError::InvalidRing {
            ring: index,
            reason: "ring is not closed",
        });
    }
    if ring.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
        return Err(GeoError::InvalidRing {
            ring: index,
            reason: "non-finite coordinate",
        });
    }
    Ok(())
}

/// Twice the signed area of a closed ring, measured relative to `origin`.
fn ring_signed_area2(ring: &[Point], origin: Point) -> f64 {
    ring.windows(2)
        .map(|w| {
            let (ax, ay) = (w[0].x - origin.x, w[0].y - origin.y);
            let (bx, by) = (w[1].x - origin.x, w[1].y - origin.y);
            ax * by - bx * ay
        })
        .sum()
}

impl Polygon {
    pub fn new(exterior: Vec<Point>, holes: Vec<Vec<Point>>) -> Result<Self, GeoError> {
        check_ring(&exterior, 0)?;
        for (i, h) in holes.iter().enumerate() {
            check_ring(h, i + 1)?;
        }
        Ok(Self { exterior, holes })
    }

    /// Builds a polygon from an open or closed list of `(x, y)` pairs.
    pub fn from_coords(coords: &[(f64, f64)]) -> Result<Self, GeoError> {
        let mut ring: Vec<Point> = coords.iter().copied().map(Point::from).collect();
        if ring.first() != ring.last() {
            if let Some(&first) = ring.first() {
                ring.push(first);
            }
        }
        Self::new(ring, Vec::new())
    }

    pub fn rect(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Result<Self, GeoError> {
        Self::from_coords(&[(min_x, min_y), (max_x, min_y), (max_x, max_y), (min_x, max_y)])
    }

    pub fn exterior(&self) -> &[Point] {
        &self.exterior
    }

    pub fn holes(&self) -> &[Vec<Point>] {
        &self.holes
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.exterior.as_slice()).chain(self.holes.iter().map(|h| h.as_slice()))
    }

    pub fn vertex_count(&self) -> usize {
        self.rings().map(|r| r.len() - 1).sum()
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox {
            min_x: f64::INFINITY,
            min_y: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for p in &self.exterior {
            b.min_x = b.min_x.min(p.x);
            b.min_y = b.min_y.min(p.y);
            b.max_x = b.max_x.max(p.x);
            b.max_y = b.max_y.max(p.y);
        }
        b
    }

    /// Area-weighted centroid of the polygon (holes subtracted).
    pub fn centroid(&self) -> Point {
        let origin = self.exterior[0];
        let mut cx = 0.0;
        let mut cy = 0.0;
        let mut a2 = 0.0;
        for (i, ring) in self.rings().enumerate() {
            let sign = ring_signed_area2(ring, origin).signum();
            let sign = if i == 0 { sign } else { -sign };
            for w in ring.windows(2) {
                let (ax, ay) = (w[0].x - origin.x, w[0].y - origin.y);
                let (bx, by) = (w[1].x - origin.x, w[1].y - origin.y);
                let cross = (ax * by - bx * ay) * sign;
                a2 += cross;
                cx += (ax + bx) * cross;
                cy += (ay + by) * cross;
            }
        }
        if a2 == 0.0 {
            return origin;
        }
        Point::new(origin.x + cx / (3.0 * a2), origin.y + cy / (3.0 * a2))
    }

    /// Even-odd point containment; points inside a hole are outside.
    pub fn contains(&self, p: Point) -> bool {
        self.rings().filter(|r| ring_crossings_odd(r, p)).count() % 2 == 1
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Polygon {
        let shift = |r: &Vec<Point>| r.iter().map(|p| Point::new(p.x + dx, p.y + dy)).collect();
        Polygon {
            exterior: shift(&self.exterior),
            holes: self.holes.iter().map(shift).collect(),
        }
    }

    pub fn map_points(&self, f: impl Fn(Point) -> Point) -> Polygon {
        let m = |r: &Vec<Point>| r.iter().map(|&p| f(p)).collect();
        Polygon {
            exterior: m(&self.exterior),
            holes: self.holes.iter().map(m).collect(),
        }
    }

    /// Checks that no ring self-intersects, that rings do not cross each
    /// other, and that every hole lies inside the exterior.
    pub fn validate(&self) -> Result<(), GeoError> {
        let rings: Vec<&[Point]> = self.rings().collect();
        for (i, ring) in rings.iter().enumerate() {
            if ring_signed_area2(ring, ring[0]) == 0.0 {
                return Err(GeoError::InvalidRing {
                    ring: i,
                    reason: "zero area",
                });
            }
            if ring_self_intersects(ring) {
                return Err(GeoError::InvalidRing {
                    ring: i,
                    reason: "self-intersection",
                });
            }
        }
        for i in 0..rings.len() {
            for j in (i + 1)..rings.len() {
                if rings_cross(rings[i], rings[j]) {
                    return Err(GeoError::InvalidRing {
                        ring: j,
                        reason: "rings intersect",
                    });
                }
            }
        }
        for (i, hole) in self.holes.iter().enumerate() {
            let inside = hole[..hole.len() - 1]
                .iter()
                .all(|&p| ring_crossings_odd(&self.exterior, p));
            if !inside {
                return Err(GeoError::InvalidRing {
                    ring: i + 1,
                    reason: "hole outside exterior",
                });
            }
        }
        Ok(())
    }

    pub(crate) fn to_geo(&self, dx: f64, dy: f64) -> geo::Polygon<f64> {
        let ls = |r: &[Point]| {
            geo::LineString::from(r.iter().map(|p| (p.x - dx, p.y - dy)).collect::<Vec<_>>())
        };
        geo::Polygon::new(
            ls(&self.exterior),
            self.holes.iter().map(|h| ls(h)).collect(),
        )
    }
}

fn ring_crossings_odd(ring: &[Point], p: Point) -> bool {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn orient(a: Point, b: Point, c: Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point, b: Point, p: Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_touch(a: Point, b: Point, c: Point, d: Point) -> bool {
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    if ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
        && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0))
    {
        return true;
    }
    (o1 == 0.0 && on_segment(a, b, c))
        || (o2 == 0.0 && on_segment(a, b, d))
        || (o3 == 0.0 && on_segment(c, d, a))
        || (o4 == 0.0 && on_segment(c, d, b))
}

fn ring_self_intersects(ring: &[Point]) -> bool {
    let n = ring.len() - 1;
    for i in 0..n {
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                // Adjacent edges share one vertex; they only overlap if they fold back.
                let (a, b, c) = if j == i + 1 {
                    (ring[i], ring[i + 1], ring[j + 1])
                } else {
                    (ring[j], ring[0], ring[1])
                };
                if orient(a, b, c) == 0.0 && (c.x - b.x) * (a.x - b.x) + (c.y - b.y) * (a.y - b.y) > 0.0 {
                    return true;
                }
                continue;
            }
            if segments_touch(ring[i], ring[i + 1], ring[j], ring[j + 1]) {
                return true;
            }
        }
    }
    false
}

/// True when two rings cross or overlap along an edge. A single shared
/// vertex is allowed.
fn rings_cross(r1: &[Point], r2: &[Point]) -> bool {
    for a in r1.windows(2) {
        for b in r2.windows(2) {
            let o1 = orient(a[0], a[1], b[0]);
            let o2 = orient(a[0], a[1], b[1]);
            let o3 = orient(b[0], b[1], a[0]);
            let o4 = orient(b[0], b[1], a[1]);
            let proper = ((o1 > 0.0 && o2 < 0.0) || (o1 < 0.0 && o2 > 0.0))
                && ((o3 > 0.0 && o4 < 0.0) || (o3 < 0.0 && o4 > 0.0));
            let collinear_overlap = o1 == 0.0
                && o2 == 0.0
                && (a[0] != b[0] || a[1] != b[1])
                && segment_overlap_len(a[0], a[1], b[0], b[1]) > 0.0;
            if proper || collinear_overlap {
                return true;
            }
        }
    }
    false
}

fn segment_overlap_len(a: Point, b: Point, c: Point, d: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return 0.0;
    }
    let t = |p: Point| ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2;
    let (t0, t1) = (t(c).min(t(d)), t(c).max(t(d)));
    (t1.min(1.0) - t0.max(0.0)).max(0.0)
}

/// Shoelace area: exterior minus holes, in square world units.
pub fn polygon_area(p: &Polygon) -> f64 {
    let origin = p.exterior[0];
    let ext = ring_signed_area2(&p.exterior, origin).abs();
    let holes: f64 = p.holes.iter().map(|h| ring_signed_area2(h, origin).abs()).sum();
    ((ext - holes) * 0.5).max(0.0)
}

/// Area of `a ∩ b`. Pieces of area ≤ [`CLIP_SNAP_AREA`] are dropped, so
/// polygons that only share a boundary intersect in zero area.
pub fn intersection_area(a: &Polygon, b: &Polygon) -> f64 {
    if !a.bbox().intersects(&b.bbox()) {
        return 0.0;
    }
    // Clip in a frame local to `a` so large projected coordinates keep precision.
    let origin = a.exterior[0];
    let ga = a.to_geo(origin.x, origin.y);
    let gb = b.to_geo(origin.x, origin.y);
    let clipped = ga.intersection(&gb);
    clipped
        .0
        .iter()
        .map(|piece| piece.unsigned_area())
        .filter(|&area| area > CLIP_SNAP_AREA)
        .sum()
}

/// True iff `area(a ∩ b) > min_area`.
pub fn polygon_intersects(a: &Polygon, b: &Polygon, min_area: f64) -> bool {
    intersection_area(a, b) > min_area
}

/// Bounding box of a polygon set, `None` when empty.
pub fn union_bbox<'a>(polys: impl IntoIterator<Item = &'a Polygon>) -> Option<BBox> {
    let mut it = polys.into_iter();
    let first = it.next()?.bbox();
    Some(it.fold(first, |acc, p| {
        let b = p.bbox();
        BBox {
            min_x: acc.min_x.min(b.min_x),
            min_y: acc.min_y.min(b.min_y),
            max_x: acc.max_x.max(b.max_x),
            max_y: acc.max_y.max(b.max_y),
        }
    }))
}
