//! Probability rasters to reviewable vector candidates: Gaussian blur,
//! threshold, pixel-exact polygonization and optional simplification.

mod blur;
mod polygonize;
mod simplify;

pub use blur::{gaussian_blur, gaussian_kernel};
pub use polygonize::{label_components, polygonize, polygonize_components, Component, Connectivity};
pub use simplify::simplify;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::polygon_feature;
use crate::geo::{polygon_area, Polygon, ProbRaster, Raster};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PostprocError {
    #[error("simplification degenerated: {0}")]
    DegenerateResult(String),
    #[error("threshold {0} must lie in [0, 1]")]
    InvalidThreshold(f64),
    #[error("sigma {0} must be finite and non-negative")]
    InvalidSigma(f64),
}

/// 1 where `value ≥ t`, 0 elsewhere; nodata and non-finite cells are 0.
pub fn threshold_clip(r: &ProbRaster, t: f64) -> Raster<u8> {
    let values = r
        .values()
        .iter()
        .map(|&v| u8::from(!r.is_nodata(v) && v.is_finite() && v as f64 >= t))
        .collect();
    Raster::new(r.width(), r.height(), values, *r.transform()).expect("same shape")
}

/// Chebyshev dilation by `radius` pixels (Minkowski sum with a square).
pub fn dilate(m: &Raster<u8>, radius: usize) -> Raster<u8> {
    if radius == 0 {
        return m.clone();
    }
    let (w, h) = (m.width(), m.height());
    let r = radius as isize;
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = (x as isize - r).max(0) as usize;
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = u8::from((lo..=hi).any(|i| m.get(i, y) > 0));
        }
    }
    Raster::from_fn(w, h, *m.transform(), |x, y| {
        let lo = (y as isize - r).max(0) as usize;
        let hi = (y + radius).min(h - 1);
        u8::from((lo..=hi).any(|j| rows[j * w + x] > 0))
    })
}

/// A vectorized prediction with statistics of the blurred raster inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateShape {
    pub id: String,
    pub shape: Polygon,
    pub peak_prob: f64,
    pub mean_prob: f64,
    pub area_m2: f64,
    pub source_tile: String,
}

impl CandidateShape {
    pub fn to_feature(&self) -> geojson::Feature {
        let mut props = geojson::JsonObject::new();
        props.insert("id".into(), self.id.clone().into());
        props.insert("peak_prob".into(), self.peak_prob.into());
        props.insert("mean_prob".into(), self.mean_prob.into());
        props.insert("area_m2".into(), self.area_m2.into());
        props.insert("source_tile".into(), self.source_tile.clone().into());
        polygon_feature(&self.shape, props)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CandidateParams {
    /// Blur strength in pixels.
    pub sigma: f64,
    /// Foreground where blurred probability ≥ threshold.
    pub threshold: f64,
    /// Candidates smaller than this (m²) are dropped.
    pub min_area_m2: f64,
    pub connectivity: Connectivity,
    /// Douglas–Peucker tolerance in meters; shapes that would degenerate are kept as traced.
    pub simplify_tolerance_m: Option<f64>,
    /// Optional square buffer distance in meters, applied to the mask.
    pub buffer_m: Option<f64>,
}

impl Default for CandidateParams {
    fn default() -> Self {
        Self {
            sigma: 2.0,
            threshold: 0.5,
            min_area_m2: 0.0,
            connectivity: Connectivity::Four,
            simplify_tolerance_m: None,
            buffer_m: None,
        }
    }
}

impl CandidateParams {
    pub fn validate(&self) -> Result<(), PostprocError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(PostprocError::InvalidThreshold(self.threshold));
        }
        if !self.sigma.is_finite() || self.sigma < 0.0 {
            return Err(PostprocError::InvalidSigma(self.sigma));
        }
        Ok(())
    }
}

/// Blur → threshold → polygonize → area filter → per-shape statistics.
/// Candidate ids are `<source_tile>/<k>` in raster-scan order.
pub fn extract_candidates(
    r: &ProbRaster,
    source_tile: &str,
    params: &CandidateParams,
) -> Result<Vec<CandidateShape>, PostprocError> {
    params.validate()?;
    let blurred = gaussian_blur(r, params.sigma);
    let mut mask = threshold_clip(&blurred, params.threshold);
    if let Some(d) = params.buffer_m.filter(|d| *d > 0.0) {
        mask = dilate(&mask, (d / r.transform().pixel_w()).round() as usize);
    }
    let comps = polygonize_components(&mask, r.transform(), params.connectivity);
    let mut out = Vec::new();
    for comp in comps {
        let area_m2 = polygon_area(&comp.polygon);
        if area_m2 <= 0.0 || area_m2 < params.min_area_m2 {
            continue;
        }
        let vals: Vec<f64> = comp
            .pixels
            .iter()
            .map(|&i| blurred.values()[i])
            .filter(|v| !blurred.is_nodata(*v) && v.is_finite())
            .map(f64::from)
            .collect();
        let peak_prob = vals.iter().copied().fold(0.0, f64::max);
        let mean_prob = if vals.is_empty() {
            0.0
        } else {
            (vals.iter().sum::<f64>() / vals.len() as f64).min(peak_prob)
        };
        let shape = match params.simplify_tolerance_m {
            Some(tol) => simplify(&comp.polygon, tol).unwrap_or(comp.polygon),
            None => comp.polygon,
        };
        out.push(CandidateShape {
            id: format!("{source_tile}/{}", out.len()),
            shape,
            peak_prob,
            mean_prob,
            area_m2,
            source_tile: source_tile.to_owned(),
        });
    }
    Ok(out)
}
