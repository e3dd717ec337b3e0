use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::geo::{GeoTransform, Point, Polygon, Raster};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

/// Labels foreground components; 0 is background, labels start at 1 in
/// raster-scan order of each component's first pixel.
pub fn label_components(m: &Raster<u8>, conn: Connectivity) -> (Vec<u32>, u32) {
    let (w, h) = (m.width(), m.height());
    let fg = |i: usize| m.values()[i] > 0;
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    let offsets: &[(isize, isize)] = match conn {
        Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
    };
    for start in 0..w * h {
        if !fg(start) || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (c, r) = ((i % w) as isize, (i / w) as isize);
            for &(dc, dr) in offsets {
                let (nc, nr) = (c + dc, r + dr);
                if nc < 0 || nr < 0 || nc >= w as isize || nr >= h as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if fg(j) && labels[j] == 0 {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (labels, next)
}

/// A traced foreground component.
#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub polygon: Polygon,
    /// Row-major indices of the component's pixels.
    pub pixels: Vec<usize>,
}

type Vertex = (i64, i64);

/// Traces every component's pixel-exact boundary. Rings run counter-
/// clockwise in world coordinates for exteriors and clockwise for holes;
/// collinear vertices along straight runs are merged.
pub fn polygonize_components(
    m: &Raster<u8>,
    transform: &GeoTransform,
    conn: Connectivity,
) -> Vec<Component> {
    let (w, h) = (m.width(), m.height());
    let (labels, n) = label_components(m, conn);
    let mut pixels: Vec<Vec<usize>> = vec![Vec::new(); n as usize];
    for (i, &l) in labels.iter().enumerate() {
        if l > 0 {
            pixels[l as usize - 1].push(i);
        }
    }
    let label_at = |c: i64, r: i64| -> u32 {
        if c < 0 || r < 0 || c >= w as i64 || r >= h as i64 {
            0
        } else {
            labels[r as usize * w + c as usize]
        }
    };

    crate::par::map(&pixels, |px| {
        let label = labels[px[0]];
        // Directed edges run clockwise around the component in pixel space
        // (y down); rings are reversed below so exteriors come out
        // counter-clockwise in world coordinates.
        let mut out: HashMap<Vertex, Vec<Vertex>> = HashMap::new();
        let mut edge_count = 0usize;
        for &i in px {
            let (c, r) = ((i % w) as i64, (i / w) as i64);
            let mut add = |a: Vertex, b: Vertex| {
                out.entry(a).or_default().push(b);
                edge_count += 1;
            };
            if label_at(c, r - 1) != label {
                add((c, r), (c + 1, r));
            }
            if label_at(c + 1, r) != label {
                add((c + 1, r), (c + 1, r + 1));
            }
            if label_at(c, r + 1) != label {
                add((c + 1, r + 1), (c, r + 1));
            }
            if label_at(c - 1, r) != label {
                add((c, r + 1), (c, r));
            }
        }
        let rings = link_rings(&mut out, edge_count);
        let to_world = |ring: &[Vertex]| -> Vec<Point> {
            ring.iter()
                .rev()
                .map(|&(c, r)| {
                    let (x, y) = transform.pixel_to_world(c as f64, r as f64);
                    Point::new(x, y)
                })
                .collect()
        };
        let mut exterior = None;
        let mut holes = Vec::new();
        for ring in rings {
            // Exterior rings have positive shoelace area in pixel space.
            let a2: i64 = ring.windows(2).map(|e| e[0].0 * e[1].1 - e[1].0 * e[0].1).sum();
            if a2 > 0 && exterior.is_none() {
                exterior = Some(to_world(&ring));
            } else {
                holes.push(to_world(&ring));
            }
        }
        let polygon = Polygon::new(exterior.expect("component has an outer ring"), holes)
            .expect("traced rings are closed");
        Component {
            polygon,
            pixels: px.clone(),
        }
    })
}

fn link_rings(out: &mut HashMap<Vertex, Vec<Vertex>>, edge_count: usize) -> Vec<Vec<Vertex>> {
    let mut starts: Vec<Vertex> = out.keys().copied().collect();
    starts.sort();
    let mut rings = Vec::new();
    let mut used = 0usize;
    for s in starts {
        while out.get(&s).is_some_and(|v| !v.is_empty()) {
            let mut ring = vec![s];
            let mut prev = s;
            let mut cur = out.get_mut(&s).unwrap().pop().unwrap();
            used += 1;
            while cur != s || ring.len() < 2 {
                ring.push(cur);
                let dir = (cur.0 - prev.0, cur.1 - prev.1);
                let nexts = out.get_mut(&cur).expect("boundary is closed");
                // At a pinch (two diagonal pixels) take the left turn on
                // screen, which keeps the diagonal pair on one ring.
                let pick = if nexts.len() > 1 {
                    nexts
                        .iter()
                        .position(|&n| {
                            let o = (n.0 - cur.0, n.1 - cur.1);
                            dir.0 * o.1 - dir.1 * o.0 < 0
                        })
                        .unwrap_or(0)
                } else {
                    0
                };
                let next = nexts.swap_remove(pick);
                used += 1;
                prev = cur;
                cur = next;
            }
            ring.push(s);
            rings.push(merge_collinear(ring));
        }
    }
    debug_assert_eq!(used, edge_count);
    rings
}

/// Drops vertices where the boundary continues straight, re-closing the ring at a corner.
fn merge_collinear(ring: Vec<Vertex>) -> Vec<Vertex> {
    let n = ring.len() - 1;
    let dir = |a: Vertex, b: Vertex| ((b.0 - a.0).signum(), (b.1 - a.1).signum());
    let mut corners: Vec<Vertex> = (0..n)
        .filter(|&i| {
            let prev = ring[(i + n - 1) % n];
            let next = ring[(i + 1) % n];
            dir(prev, ring[i]) != dir(ring[i], next)
        })
        .map(|i| ring[i])
        .collect();
    corners.push(corners[0]);
    corners
}

/// One polygon per foreground component (4-connected), in world units.
pub fn polygonize(m: &Raster<u8>, transform: &GeoTransform) -> Vec<Polygon> {
    polygonize_components(m, transform, Connectivity::Four)
        .into_iter()
        .map(|c| c.polygon)
        .collect()
}
