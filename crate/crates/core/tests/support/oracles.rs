//! Deliberately naive reference implementations, written independently of
//! the library code they check.

#![allow(dead_code)]

/// Mirror an index into `0..n` the slow way: `d c b a | a b c d | d c b a`.
pub fn mirror(mut i: i64, n: i64) -> usize {
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Direct 2-D convolution with a full (non-separable) Gaussian kernel.
pub fn brute_blur(values: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::new();
    let mut total = 0.0;
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let k = (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp();
            kernel.push((dx, dy, k));
            total += k;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let mut acc = 0.0;
            for &(dx, dy, k) in &kernel {
                let sx = mirror(x + dx, w as i64);
                let sy = mirror(y + dy, h as i64);
                acc += k * values[sy * w + sx];
            }
            out[y as usize * w + x as usize] = acc / total;
        }
    }
    out
}

/// One stitched layer: top-left cell in the region grid, size, values.
pub struct Layer {
    pub col: usize,
    pub row: usize,
    pub w: usize,
    pub h: usize,
    pub values: Vec<f32>,
}

/// Per-cell sum and count in double precision, then divide. Uncovered
/// cells get `nodata`.
pub fn naive_stitch(layers: &[Layer], w: usize, h: usize, nodata: f32) -> Vec<f32> {
    let mut sum = vec![0.0f64; w * h];
    let mut count = vec![0u32; w * h];
    for l in layers {
        for ty in 0..l.h {
            for tx in 0..l.w {
                let (x, y) = (l.col + tx, l.row + ty);
                if x < w && y < h {
                    sum[y * w + x] += l.values[ty * l.w + tx] as f64;
                    count[y * w + x] += 1;
                }
            }
        }
    }
    sum.iter()
        .zip(&count)
        .map(|(&s, &c)| if c == 0 { nodata } else { (s / c as f64) as f32 })
        .collect()
}

pub fn shoelace(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len();
    let mut s = 0.0;
    for i in 0..n {
        let (a, b) = (pts[i], pts[(i + 1) % n]);
        s += a.0 * b.1 - b.0 * a.1;
    }
    s.abs() / 2.0
}

/// Sutherland–Hodgman clip of `subject` by a convex counter-clockwise
/// `clip` polygon (open rings).
pub fn sutherland_hodgman(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let inside = |p: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0) >= 0.0
    };
    let cross = |p: (f64, f64), q: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        let (dx, dy) = (q.0 - p.0, q.1 - p.1);
        let (ex, ey) = (b.0 - a.0, b.1 - a.1);
        let t = ((a.0 - p.0) * ey - (a.1 - p.1) * ex) / (dx * ey - dy * ex);
        (p.0 + t * dx, p.1 + t * dy)
    };
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        if input.is_empty() {
            break;
        }
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            match (inside(p, a, b), inside(q, a, b)) {
                (true, true) => out.push(q),
                (true, false) => out.push(cross(p, q, a, b)),
                (false, true) => {
                    out.push(cross(p, q, a, b));
                    out.push(q);
                }
                (false, false) => {}
            }
        }
    }
    out
}

/// Even-odd point-in-polygon over all rings.
pub fn point_in_rings(rings: &[Vec<(f64, f64)>], x: f64, y: f64) -> bool {
    let mut inside = false;
    for ring in rings {
        let n = ring.len();
        for i in 0..n {
            let (a, b) = (ring[i], ring[(i + 1) % n]);
            if (a.1 > y) != (b.1 > y) && x < a.0 + (y - a.1) * (b.0 - a.0) / (b.1 - a.1) {
                inside = !inside;
            }
        }
    }
    inside
}
