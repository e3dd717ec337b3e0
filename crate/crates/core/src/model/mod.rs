//! Segmenters: the adapter contract, externally produced probability
//! rasters, and a trainable logistic baseline over window features.

mod baseline;
mod features;
mod loss;

pub use baseline::{
    batch_loss_and_grad, finite_diff_check, train_baseline, BaselineModel, Batch, LossHistory,
    Objective,
};
pub use features::{compute_features, feature_count, FeatureMap};
pub use loss::{
    dice_from_pairs, dice_grad_probs, dice_loss, focal_grad_logit, focal_loss, sigmoid, LossKind, EPS,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::{read_prob_raster, FormatError};
use crate::geo::{ProbRaster, Raster, Rgb};
use crate::tiles::{AugBounds, TileError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no training tiles")]
    EmptyTrainingSet,
    #[error("no external probability raster for {source_id} at {}", path.display())]
    MissingExternalRaster { source_id: String, path: PathBuf },
    #[error("raster is {actual:?}, expected {expected:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("external raster is not co-registered with tile {0}")]
    Misregistered(String),
    #[error("invalid segmenter spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Tile(#[from] TileError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmenterKind {
    ExternalRaster,
    #[default]
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterSpec {
    pub kind: SegmenterKind,
    pub loss: LossKind,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub feature_radii: Vec<usize>,
    pub seed: u64,
    /// Pixels sampled per tile per step; 0 uses every pixel.
    pub batch_pixels: usize,
    /// Draw positives and negatives 1:1 when both are present.
    pub balance: bool,
    /// Fresh dihedral/photometric augmentation per tile per epoch.
    pub augment: bool,
    pub aug_bounds: AugBounds,
    /// Random crop side per tile per epoch.
    pub crop_side: Option<usize>,
}

impl Default for SegmenterSpec {
    fn default() -> Self {
        Self {
            kind: SegmenterKind::Baseline,
            loss: LossKind::Focal,
            focal_gamma: 2.0,
            focal_alpha: 0.25,
            epochs: 20,
            learning_rate: 0.5,
            feature_radii: vec![1, 3, 7, 15],
            seed: 0,
            batch_pixels: 4096,
            balance: true,
            augment: true,
            aug_bounds: AugBounds::default(),
            crop_side: None,
        }
    }
}

impl SegmenterSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {}", self.learning_rate));
        }
        if !(self.focal_gamma >= 0.0 && self.focal_gamma.is_finite()) {
            return bad(format!("focal_gamma {}", self.focal_gamma));
        }
        if !(self.focal_alpha > 0.0 && self.focal_alpha < 1.0) {
            return bad(format!("focal_alpha {}", self.focal_alpha));
        }
        if self.feature_radii.is_empty() || self.feature_radii.windows(2).any(|w| w[0] >= w[1]) {
            return bad(format!("feature_radii {:?} must be non-empty and ascending", self.feature_radii));
        }
        if self.crop_side == Some(0) {
            return bad("crop_side must be positive".into());
        }
        Ok(())
    }
}

/// Anything that turns a tile image into a co-registered probability raster.
pub trait Segmenter: Sync {
    fn predict(&self, source_id: &str, image: &Raster<Rgb>) -> Result<ProbRaster, ModelError>;
}

impl Segmenter for BaselineModel {
    fn predict(&self, _source_id: &str, image: &Raster<Rgb>) -> Result<ProbRaster, ModelError> {
        Ok(self.predict_image(image))
    }
}

/// Probability rasters produced elsewhere, stored as `<dir>/<source_id>.f32`
/// plus sidecar. The window matching the tile's georeference is cut out.
#[derive(Debug, Clone)]
pub struct ExternalRasterSource {
    dir: PathBuf,
}

impl ExternalRasterSource {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, source_id: &str) -> PathBuf {
        self.dir.join(source_id)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Segmenter for ExternalRasterSource {
    fn predict(&self, source_id: &str, image: &Raster<Rgb>) -> Result<ProbRaster, ModelError> {
        let base = self.path_for(source_id);
        if !base.with_extension("f32").exists() {
            return Err(ModelError::MissingExternalRaster {
                source_id: source_id.to_owned(),
                path: base.with_extension("f32"),
            });
        }
        let full = read_prob_raster(&base)?;
        let (ft, tt) = (full.transform(), image.transform());
        if !ft.same_pixel_size(tt, 1e-9) {
            return Err(ModelError::Misregistered(source_id.to_owned()));
        }
        let col = (tt.origin_x() - ft.origin_x()) / ft.pixel_w();
        let row = (ft.origin_y() - tt.origin_y()) / ft.pixel_h();
        let (c, r) = (col.round(), row.round());
        if (col - c).abs() > 1e-6 || (row - r).abs() > 1e-6 || c < 0.0 || r < 0.0 {
            return Err(ModelError::Misregistered(source_id.to_owned()));
        }
        let (c, r) = (c as usize, r as usize);
        if c + image.width() > full.width() || r + image.height() > full.height() {
            return Err(ModelError::DimensionMismatch {
                expected: (c + image.width(), r + image.height()),
                actual: (full.width(), full.height()),
            });
        }
        let mut out = full.window(c, r, image.width(), image.height());
        let nodata = out.nodata();
        for v in out.values_mut() {
            if v.is_finite() && Some(*v) != nodata {
                *v = v.clamp(0.0, 1.0);
            }
        }
        Ok(out)
    }
}
