use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::geo::{GeoTransform, ProbRaster, Raster};

/// JSON sidecar describing a raw `.f32` probability grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbSidecar {
    pub width: usize,
    pub height: usize,
    pub transform: GeoTransform,
    pub nodata: Option<f32>,
}

fn paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("f32"), base.with_extension("json"))
}

/// Writes `<base>.f32` (little-endian f32, row-major) and `<base>.json`.
pub fn write_prob_raster(base: &Path, r: &ProbRaster) -> Result<(), FormatError> {
    let (data_path, meta_path) = paths(base);
    let mut bytes = Vec::with_capacity(r.len() * 4);
    for v in r.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&data_path, bytes).map_err(|e| FormatError::io(&data_path, e))?;
    let meta = ProbSidecar {
        width: r.width(),
        height: r.height(),
        transform: *r.transform(),
        nodata: r.nodata(),
    };
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| FormatError::json(&meta_path, e))?;
    std::fs::write(&meta_path, json).map_err(|e| FormatError::io(&meta_path, e))
}

pub fn read_prob_raster(base: &Path) -> Result<ProbRaster, FormatError> {
    let (data_path, meta_path) = paths(base);
    let meta_text = std::fs::read(&meta_path).map_err(|e| FormatError::io(&meta_path, e))?;
    let meta: ProbSidecar =
        serde_json::from_slice(&meta_text).map_err(|e| FormatError::json(&meta_path, e))?;
    let bytes = std::fs::read(&data_path).map_err(|e| FormatError::io(&data_path, e))?;
    if bytes.len() != meta.width * meta.height * 4 {
        return Err(FormatError::invalid(
            &data_path,
            format!(
                "{} bytes for a {}x{} grid",
                bytes.len(),
                meta.width,
                meta.height
            ),
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Raster::new(meta.width, meta.height, values, meta.transform)?.with_nodata(meta.nodata))
}
