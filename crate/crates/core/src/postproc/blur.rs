use crate::geo::{ProbRaster, Raster};
use crate::par;

/// Normalized 1-D Gaussian of radius `ceil(3σ)`. `sigma = 0` gives `[1]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Half-sample symmetric reflection (`d c b a | a b c d | d c b a`).
#[inline]
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

fn convolve_rows(src: &[f64], w: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    par::for_each_row(&mut out, w, |r, row| {
        let line = &src[r * w..(r + 1) * w];
        for (c, o) in row.iter_mut().enumerate() {
            *o = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * line[reflect(c as isize + k as isize - radius, w)])
                .sum();
        }
    });
    out
}

fn convolve_cols(src: &[f64], w: usize, h: usize, kernel: &[f64]) -> Vec<f64> {
    let radius = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; src.len()];
    par::for_each_row(&mut out, w, |r, row| {
        for (c, o) in row.iter_mut().enumerate() {
            *o = kernel
                .iter()
                .enumerate()
                .map(|(k, kv)| kv * src[reflect(r as isize + k as isize - radius, h) * w + c])
                .sum();
        }
    });
    out
}

/// Separable Gaussian blur with reflected borders. Nodata cells stay
/// nodata and are excluded from their neighbours' weighted means.
pub fn gaussian_blur(r: &ProbRaster, sigma: f64) -> ProbRaster {
    if sigma <= 0.0 || r.is_empty() {
        return r.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let (w, h) = (r.width(), r.height());
    let valid: Vec<bool> = r.values().iter().map(|&v| !r.is_nodata(v) && v.is_finite()).collect();
    let data: Vec<f64> = r
        .values()
        .iter()
        .zip(&valid)
        .map(|(&v, &ok)| if ok { v as f64 } else { 0.0 })
        .collect();
    let num = convolve_cols(&convolve_rows(&data, w, &kernel), w, h, &kernel);
    let all_valid = valid.iter().all(|&v| v);
    let den = if all_valid {
        None
    } else {
        let mask: Vec<f64> = valid.iter().map(|&v| f64::from(u8::from(v))).collect();
        Some(convolve_cols(&convolve_rows(&mask, w, &kernel), w, h, &kernel))
    };
    let nodata = r.nodata().unwrap_or(f32::NAN);
    let values = (0..w * h)
        .map(|i| {
            if !valid[i] {
                return nodata;
            }
            let v = match &den {
                None => num[i],
                Some(d) if d[i] > 0.0 => num[i] / d[i],
                Some(_) => 0.0,
            };
            v.clamp(0.0, 1.0) as f32
        })
        .collect();
    Raster::new(w, h, values, *r.transform())
        .expect("same shape")
        .with_nodata(r.nodata())
}
