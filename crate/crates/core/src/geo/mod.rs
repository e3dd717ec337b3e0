//! Georeferencing core: affine pixel/world mapping, polygons and rasters.
//!
//! All world coordinates are in one projected metric CRS. Geographic
//! coordinates must be projected before they reach this module.

mod polygon;
mod raster;
mod transform;

pub use polygon::{
    intersection_area, polygon_area, polygon_intersects, union_bbox, BBox, Point, Polygon,
    CLIP_SNAP_AREA,
};
pub use raster::{Raster, Rgb};
pub use transform::GeoTransform;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid ring {ring}: {reason}")]
    InvalidRing { ring: usize, reason: &'static str },
    #[error("invalid geotransform: pixel size {pixel_w} x {pixel_h} must be positive and finite")]
    InvalidTransform { pixel_w: f64, pixel_h: f64 },
    #[error("world file has rotation terms; only north-up rasters are supported")]
    RotatedWorldFile,
    #[error("raster value count {actual} does not match dimensions ({expected})")]
    DimensionMismatch { expected: usize, actual: usize },
}

/// Convenience alias for a probability grid (segmenter output, mosaic).
pub type ProbRaster = Raster<f32>;
