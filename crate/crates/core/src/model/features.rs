//! Multi-scale window features: per radius the mean, standard deviation,
//! minimum and maximum of gray level plus mean gradient magnitude, then the
//! raw RGB channels. Windows are clipped at the image border.

use std::collections::VecDeque;

use crate::geo::{Raster, Rgb};
use crate::par;

pub const PER_RADIUS: usize = 5;
pub const RAW: usize = 3;

pub fn feature_count(radii: &[usize]) -> usize {
    radii.len() * PER_RADIUS + RAW
}

/// Pixel-major feature matrix: `data[pixel * n + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub n: usize,
    pub data: Vec<f32>,
}

impl FeatureMap {
    pub fn pixel(&self, i: usize) -> &[f32] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

fn gray(image: &Raster<Rgb>) -> Vec<f64> {
    image
        .values()
        .iter()
        .map(|p| (p[0] as f64 + p[1] as f64 + p[2] as f64) / (3.0 * 255.0))
        .collect()
}

fn gradient_magnitude(g: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            let gx = (g[y * w + xr] - g[y * w + xl]) / 2.0;
            let gy = (g[yd * w + x] - g[yu * w + x]) / 2.0;
            out[y * w + x] = (gx * gx + gy * gy).sqrt();
        }
    }
    out
}

/// Summed-area table with a zero first row and column.
struct Integral {
    w: usize,
    s: Vec<f64>,
}

impl Integral {
    fn new(v: &[f64], w: usize, h: usize) -> Self {
        let mut s = vec![0.0; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut run = 0.0;
            for x in 0..w {
                run += v[y * w + x];
                s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + run;
            }
        }
        Self { w: w + 1, s }
    }

    /// Sum over `[x0, x1) × [y0, y1)`.
    fn sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        self.s[y1 * self.w + x1] - self.s[y0 * self.w + x1] - self.s[y1 * self.w + x0]
            + self.s[y0 * self.w + x0]
    }
}

/// Sliding extreme over `[i − r, i + r]` clipped to the slice.
#[allow(clippy::needless_range_loop)]
fn sliding_extreme(v: &[f64], r: usize, take_max: bool, out: &mut [f64]) {
    let n = v.len();
    let better = |a: f64, b: f64| if take_max { a >= b } else { a <= b };
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for i in 0..n {
        let hi = (i + r).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&j| better(v[next], v[j])) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&j| j + r < i) {
            dq.pop_front();
        }
        out[i] = v[*dq.front().expect("window is non-empty")];
    }
}

fn window_extreme(g: &[f64], w: usize, h: usize, r: usize, take_max: bool) -> Vec<f64> {
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        sliding_extreme(&g[y * w..(y + 1) * w], r, take_max, &mut rows[y * w..(y + 1) * w]);
    }
    let mut out = vec![0.0; w * h];
    let mut col = vec![0.0; h];
    let mut res = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        sliding_extreme(&col, r, take_max, &mut res);
        for y in 0..h {
            out[y * w + x] = res[y];
        }
    }
    out
}

pub fn compute_features(image: &Raster<Rgb>, radii: &[usize]) -> FeatureMap {
    let (w, h) = (image.width(), image.height());
    let n = feature_count(radii);
    if w == 0 || h == 0 {
        return FeatureMap { width: w, height: h, n, data: Vec::new() };
    }
    let g = gray(image);
    let g2: Vec<f64> = g.iter().map(|v| v * v).collect();
    let gm = gradient_magnitude(&g, w, h);
    let (ig, ig2, igm) = (Integral::new(&g, w, h), Integral::new(&g2, w, h), Integral::new(&gm, w, h));
    let extremes: Vec<(Vec<f64>, Vec<f64>)> = par::map(radii, |&r| {
        (window_extreme(&g, w, h, r, false), window_extreme(&g, w, h, r, true))
    });
    let mut data = vec![0f32; w * h * n];
    par::for_each_row(&mut data, w * n, |y, row| {
        for x in 0..w {
            let f = &mut row[x * n..(x + 1) * n];
            for (k, &r) in radii.iter().enumerate() {
                let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
                let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
                let area = ((x1 - x0) * (y1 - y0)) as f64;
                let mean = ig.sum(x0, y0, x1, y1) / area;
                let var = (ig2.sum(x0, y0, x1, y1) / area - mean * mean).max(0.0);
                let o = k * PER_RADIUS;
                f[o] = mean as f32;
                f[o + 1] = var.sqrt() as f32;
                f[o + 2] = extremes[k].0[y * w + x] as f32;
                f[o + 3] = extremes[k].1[y * w + x] as f32;
                f[o + 4] = (igm.sum(x0, y0, x1, y1) / area) as f32;
            }
            let px = image.get(x, y);
            let o = radii.len() * PER_RADIUS;
            for c in 0..3 {
                f[o + c] = px[c] as f32 / 255.0;
            }
        }
    });
    FeatureMap { width: w, height: h, n, data }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoTransform;
    use proptest::prelude::*;

    fn brute(image: &Raster<Rgb>, x: usize, y: usize, r: usize) -> [f64; 4] {
        let (w, h) = (image.width(), image.height());
        let mut vals = Vec::new();
        for yy in y.saturating_sub(r)..(y + r + 1).min(h) {
            for xx in x.saturating_sub(r)..(x + r + 1).min(w) {
                let p = image.get(xx, yy);
                vals.push((p[0] as f64 + p[1] as f64 + p[2] as f64) / 765.0);
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        [mean, var.sqrt(), min, max]
    }

    proptest! {
        #[test]
        fn window_stats_match_brute_force(
            w in 1usize..12, h in 1usize..12, r in 0usize..4,
            px in prop::collection::vec(any::<[u8; 3]>(), 144),
        ) {
            let t = GeoTransform::new(0.0, 0.0, 1.0, 1.0).unwrap();
            let img = Raster::from_fn(w, h, t, |x, y| px[y * 12 + x]);
            let f = compute_features(&img, &[r]);
            for y in 0..h {
                for x in 0..w {
                    let b = brute(&img, x, y, r);
                    let got = f.pixel(y * w + x);
                    for k in 0..4 {
                        prop_assert!((got[k] as f64 - b[k]).abs() < 1e-5, "k={} got {} want {}", k, got[k], b[k]);
                    }
                    prop_assert_eq!(got[5], px[y * 12 + x][0] as f32 / 255.0);
                }
            }
        }
    }

    #[test]
    fn constant_image_has_no_texture() {
        let t = GeoTransform::new(0.0, 0.0, 1.0, 1.0).unwrap();
        let img = Raster::filled(9, 7, [51u8, 51, 51], t);
        let f = compute_features(&img, &[1, 3]);
        assert_eq!(f.n, 13);
        for i in 0..63 {
            let p = f.pixel(i);
            assert!((p[0] - 0.2).abs() < 1e-6 && p[1].abs() < 1e-6 && p[4].abs() < 1e-9);
        }
    }
}
