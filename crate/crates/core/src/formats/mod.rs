//! On-disk formats shared by every stage: world files, float probability
//! rasters with JSON sidecars, PNG images and masks, and GeoJSON vectors.

mod geojson;
mod png;
mod prob;
mod world;

pub use self::geojson::{
    feature_polygons, polygon_feature, read_feature_collection, write_feature_collection,
    VectorFeature,
};
pub use self::png::{
    read_mask_png, read_rgb_png, render_gray_png, write_mask_png, write_rgb_png, write_rgba_png,
};
pub use self::prob::{read_prob_raster, write_prob_raster, ProbSidecar};
pub use self::world::{read_world_file, world_file_path, write_world_file};

use std::path::PathBuf;

use thiserror::Error;

use crate::geo::GeoError;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Geo(#[from] GeoError),
}

impl FormatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Self::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }
}
