//! Region sweeps: plan overlapping tile windows over an extent, stitch
//! per-tile probability rasters into one averaged grid, render heatmaps.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{write_rgba_png, FormatError};
use crate::geo::{GeoError, GeoTransform, ProbRaster, Raster};
use crate::par;

/// Value of stitched cells no prediction covers.
pub const NODATA: f32 = -1.0;

#[derive(Debug, Error)]
pub enum MosaicError {
    #[error("extent of {width}x{height} px is smaller than one {side} px tile")]
    ExtentTooSmall { width: usize, height: usize, side: usize },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error("tile pixel size ({got_w}, {got_h}) differs from the region's {want}")]
    PixelSizeMismatch { got_w: f64, got_h: f64, want: f64 },
    #[error("tile origin is not aligned with the region grid")]
    Misaligned,
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSweep {
    /// `(min_x, min_y, max_x, max_y)` in meters.
    pub extent: (f64, f64, f64, f64),
    pub tile_side: usize,
    pub stride: usize,
    pub ppm: f64,
}

/// One planned window, in pixels of the region grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepWindow {
    pub col: usize,
    pub row: usize,
    pub side: usize,
}

impl RegionSweep {
    /// Region grid size in pixels.
    pub fn grid_size(&self) -> (usize, usize) {
        let (x0, y0, x1, y1) = self.extent;
        (
            ((x1 - x0) * self.ppm).round().max(0.0) as usize,
            ((y1 - y0) * self.ppm).round().max(0.0) as usize,
        )
    }

    /// Geotransform of the region grid (top-left origin).
    pub fn transform(&self) -> Result<GeoTransform, GeoError> {
        GeoTransform::from_ppm(self.extent.0, self.extent.3, self.ppm)
    }

    pub fn window_transform(&self, w: &SweepWindow) -> Result<GeoTransform, GeoError> {
        Ok(self.transform()?.shifted(w.col as f64, w.row as f64))
    }
}

fn axis_starts(len: usize, side: usize, stride: usize) -> Vec<usize> {
    if len <= side {
        return vec![0];
    }
    let n = (len - side).div_ceil(stride) + 1;
    (0..n).map(|k| (k * stride).min(len - side)).collect()
}

/// Covers the region with `tile_side` windows every `stride` pixels; the
/// last row and column are pulled inward so every window lies inside.
pub fn plan_sweep(s: &RegionSweep) -> Result<Vec<SweepWindow>, MosaicError> {
    if !(s.ppm > 0.0 && s.ppm.is_finite()) {
        return Err(MosaicError::InvalidSweep(format!("ppm {}", s.ppm)));
    }
    if s.stride == 0 || s.stride > s.tile_side {
        return Err(MosaicError::InvalidSweep(format!(
            "stride {} must be in 1..={}",
            s.stride, s.tile_side
        )));
    }
    let (x0, y0, x1, y1) = s.extent;
    if !(x1 > x0 && y1 > y0) {
        return Err(MosaicError::InvalidSweep(format!("extent {:?}", s.extent)));
    }
    let (w, h) = s.grid_size();
    if w < s.tile_side || h < s.tile_side {
        return Err(MosaicError::ExtentTooSmall {
            width: w,
            height: h,
            side: s.tile_side,
        });
    }
    let cols = axis_starts(w, s.tile_side, s.stride);
    let rows = axis_starts(h, s.tile_side, s.stride);
    Ok(rows
        .iter()
        .flat_map(|&row| {
            cols.iter().map(move |&col| SweepWindow {
                col,
                row,
                side: s.tile_side,
            })
        })
        .collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Plain mean of covering predictions.
    #[default]
    Uniform,
    /// Raised-cosine taper toward tile edges to soften seams.
    Cosine,
}

fn cosine_weight(i: usize, n: usize) -> f64 {
    let t = (i as f64 + 0.5) / n as f64;
    (std::f64::consts::PI * t).sin().max(1e-3)
}

/// Averages `preds` into a `width × height` grid at `region`. Each tile
/// must share the region's pixel size and sit on whole-pixel offsets.
/// Uncovered cells hold [`NODATA`].
pub fn stitch(
    preds: &[ProbRaster],
    region: GeoTransform,
    width: usize,
    height: usize,
    weighting: Weighting,
) -> Result<ProbRaster, MosaicError> {
    let mut placed = Vec::with_capacity(preds.len());
    for p in preds {
        let t = p.transform();
        if !t.same_pixel_size(&region, 1e-9) {
            return Err(MosaicError::PixelSizeMismatch {
                got_w: t.pixel_w(),
                got_h: t.pixel_h(),
                want: region.pixel_w(),
            });
        }
        let (c, r) = region.world_to_pixel(t.origin_x(), t.origin_y());
        if (c - c.round()).abs() > 1e-6 || (r - r.round()).abs() > 1e-6 {
            return Err(MosaicError::Misaligned);
        }
        placed.push((c.round() as i64, r.round() as i64, p));
    }
    // Each row sums its contributions in input order, so the result does
    // not depend on thread scheduling.
    let mut out = vec![NODATA; width * height];
    par::for_each_row(&mut out, width.max(1), |y, row| {
        let mut sum = vec![0.0f64; width];
        let mut wsum = vec![0.0f64; width];
        for &(c0, r0, p) in &placed {
            let ty = y as i64 - r0;
            if ty < 0 || ty >= p.height() as i64 {
                continue;
            }
            let ty = ty as usize;
            let wy = match weighting {
                Weighting::Uniform => 1.0,
                Weighting::Cosine => cosine_weight(ty, p.height()),
            };
            let x_lo = c0.max(0);
            let x_hi = (c0 + p.width() as i64).min(width as i64);
            for x in x_lo..x_hi {
                let tx = (x - c0) as usize;
                let v = p.get(tx, ty);
                if p.is_nodata(v) || !v.is_finite() {
                    continue;
                }
                let wgt = match weighting {
                    Weighting::Uniform => 1.0,
                    Weighting::Cosine => wy * cosine_weight(tx, p.width()),
                };
                sum[x as usize] += wgt * v as f64;
                wsum[x as usize] += wgt;
            }
        }
        for x in 0..width {
            if wsum[x] > 0.0 {
                row[x] = (sum[x] / wsum[x]) as f32;
            }
        }
    });
    Ok(Raster::new(width, height, out, region)?.with_nodata(Some(NODATA)))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ramp {
    Gray,
    #[default]
    Heat,
}

/// Black → red → yellow → white over `t ∈ [0, 1]`.
pub fn heat_color(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let ch = |v: f64| (255.0 * v.clamp(0.0, 1.0)).round() as u8;
    [ch(3.0 * t), ch(3.0 * t - 1.0), ch(3.0 * t - 2.0)]
}

/// The fixed 256-entry heat ramp.
pub fn heat_ramp() -> [[u8; 3]; 256] {
    std::array::from_fn(|i| heat_color(i as f64 / 255.0))
}

/// RGBA rendering; nodata and non-finite cells are fully transparent.
pub fn render_heatmap(r: &ProbRaster, ramp: Ramp) -> Raster<[u8; 4]> {
    let table = heat_ramp();
    r.map(|v| {
        if r.is_nodata(v) || !v.is_finite() {
            return [0, 0, 0, 0];
        }
        let level = (255.0 * (v as f64).clamp(0.0, 1.0)).round() as u8;
        match ramp {
            Ramp::Gray => [level, level, level, 255],
            Ramp::Heat => {
                let [cr, cg, cb] = table[level as usize];
                [cr, cg, cb, 255]
            }
        }
    })
}

/// Writes the rendered heatmap PNG and its world file.
pub fn write_heatmap(path: &Path, r: &ProbRaster, ramp: Ramp) -> Result<(), MosaicError> {
    write_rgba_png(path, &render_heatmap(r, ramp))?;
    Ok(())
}
