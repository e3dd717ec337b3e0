use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::FormatError;
use crate::geo::GeoTransform;

/// Sidecar path for an image: `.png` → `.pgw`, `.tif` → `.tfw`, else `.wld`.
pub fn world_file_path(image: &Path) -> PathBuf {
    let ext = image
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let world_ext = match ext.as_str() {
        "png" => "pgw",
        "jpg" | "jpeg" => "jgw",
        "tif" | "tiff" => "tfw",
        _ => "wld",
    };
    image.with_extension(world_ext)
}

pub fn write_world_file(image: &Path, transform: &GeoTransform) -> Result<PathBuf, FormatError> {
    let path = world_file_path(image);
    let mut text = String::new();
    for v in transform.to_world_file() {
        // {:?} prints the shortest representation that round-trips exactly.
        let _ = writeln!(text, "{v:?}");
    }
    std::fs::write(&path, text).map_err(|e| FormatError::io(&path, e))?;
    Ok(path)
}

pub fn read_world_file(image: &Path) -> Result<GeoTransform, FormatError> {
    let path = world_file_path(image);
    let text = std::fs::read_to_string(&path).map_err(|e| FormatError::io(&path, e))?;
    let values: Vec<f64> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| FormatError::invalid(&path, format!("bad number: {e}")))?;
    let params: [f64; 6] = values
        .try_into()
        .map_err(|v: Vec<f64>| FormatError::invalid(&path, format!("expected 6 lines, got {}", v.len())))?;
    Ok(GeoTransform::from_world_file(params)?)
}
