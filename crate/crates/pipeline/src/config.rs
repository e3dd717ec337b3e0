//! Run configuration: every knob of a run in one JSON document.

use std::path::{Path, PathBuf};

use moundline::catalog::CurationParams;
use moundline::model::{SegmenterKind, SegmenterSpec};
use moundline::mosaic::{Ramp, Weighting};
use moundline::postproc::CandidateParams;
use moundline::synth::SceneSpec;
use moundline::tiles::PadPolicy;
use serde::{Deserialize, Serialize};

use crate::error::{PipelineError, Result};

/// Where a run's imagery and ground truth come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inputs {
    /// Seeded synthetic scenes; the first `train` are used for training.
    Synth {
        scenes: usize,
        train: usize,
        #[serde(default)]
        template: SceneSpec,
    },
    /// A tile directory written by `moundline tile`, split recorded per tile.
    Tiles { dir: PathBuf },
    /// Imagery manifest plus site catalog, curated and tiled by the run.
    Catalog {
        imagery: PathBuf,
        sites: PathBuf,
        #[serde(default)]
        negatives: Option<PathBuf>,
        #[serde(default)]
        reference_total_images: Option<usize>,
    },
}

impl Default for Inputs {
    fn default() -> Self {
        Self::Synth {
            scenes: 120,
            train: 100,
            template: SceneSpec::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TileParams {
    /// Window side L in meters.
    pub window_m: f64,
    pub ppm: f64,
    /// Halve resolution after extraction.
    pub downscale: bool,
    /// Windows leaving the imagery are rejected or zero-padded.
    pub pad: PadPolicy,
}

impl Default for TileParams {
    fn default() -> Self {
        Self {
            window_m: 1000.0,
            ppm: 1.024,
            downscale: true,
            pad: PadPolicy::Strict,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitParams {
    pub test_frac: f64,
    pub val_frac_of_train: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            test_frac: 0.1,
            val_frac_of_train: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepParams {
    pub tile: usize,
    pub stride: usize,
    pub ramp: Ramp,
    pub weighting: Weighting,
}

impl Default for SweepParams {
    fn default() -> Self {
        Self {
            tile: 512,
            stride: 256,
            ramp: Ramp::Heat,
            weighting: Weighting::Uniform,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalParams {
    /// A candidate matches a site when their overlap exceeds this (m²).
    pub min_intersection_m2: f64,
}

impl Default for EvalParams {
    fn default() -> Self {
        Self {
            min_intersection_m2: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub id: String,
    pub inputs: Inputs,
    /// Extra catalog of known sites used when adjudicating reviews.
    pub known_sites: Option<PathBuf>,
    /// Probability rasters for `external_raster` segmenters.
    pub external_rasters: Option<PathBuf>,
    pub curation: CurationParams,
    pub tiles: TileParams,
    pub split: SplitParams,
    pub segmenter: SegmenterSpec,
    pub postproc: CandidateParams,
    pub evaluation: EvalParams,
    pub sweep: SweepParams,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            id: "run".into(),
            inputs: Inputs::default(),
            known_sites: None,
            external_rasters: None,
            curation: CurationParams::default(),
            tiles: TileParams::default(),
            split: SplitParams::default(),
            segmenter: SegmenterSpec::default(),
            postproc: CandidateParams::default(),
            evaluation: EvalParams::default(),
            sweep: SweepParams::default(),
            seed: 0,
        }
    }
}

/// Ids become directory and file names, so keep them to a safe alphabet.
pub fn check_id(kind: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(PipelineError::Config(format!(
            "{kind} id {id:?} must be non-empty and use only [A-Za-z0-9._-]"
        )))
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput(path.to_path_buf()))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_slice(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    /// Checks invariants and that every referenced path exists.
    pub fn validate(&self) -> Result<()> {
        check_id("run", &self.id)?;
        match &self.inputs {
            Inputs::Synth { scenes, train, template } => {
                if *train == 0 || train >= scenes {
                    return Err(PipelineError::Config(format!(
                        "synth needs 0 < train < scenes, got train={train} scenes={scenes}"
                    )));
                }
                template.validate()?;
            }
            Inputs::Tiles { dir } => require(dir)?,
            Inputs::Catalog { imagery, sites, negatives, .. } => {
                require(imagery)?;
                require(sites)?;
                if let Some(n) = negatives {
                    require(n)?;
                }
            }
        }
        if let Some(k) = &self.known_sites {
            require(k)?;
        }
        match (self.segmenter.kind, &self.external_rasters) {
            (SegmenterKind::ExternalRaster, None) => {
                return Err(PipelineError::Config(
                    "external_raster segmenter needs `external_rasters`".into(),
                ))
            }
            (SegmenterKind::ExternalRaster, Some(dir)) => require(dir)?,
            (SegmenterKind::Baseline, _) => self.segmenter.validate()?,
        }
        self.postproc.validate()?;
        if !(self.tiles.window_m > 0.0 && self.tiles.ppm > 0.0) {
            return Err(PipelineError::Config("tile window and ppm must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_path_safe() {
        for ok in ["run-1", "a.b_c", "X"] {
            assert!(check_id("run", ok).is_ok());
        }
        for bad in ["", ".", "..", "a/b", "a b", "../x", "é"] {
            assert!(check_id("run", bad).is_err(), "{bad:?}");
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"id":"r","inputs":{"kind":"synth","scenes":10,"train":8}}"#).unwrap();
        assert_eq!(c.postproc.threshold, 0.5);
        assert_eq!(c.tiles.window_m, 1000.0);
        assert!(c.validate().is_ok());
        let round: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(round, c);
    }

    #[test]
    fn invalid_configs_are_validation_errors() {
        let bad = [
            RunConfig { inputs: Inputs::Synth { scenes: 5, train: 5, template: SceneSpec::default() }, ..Default::default() },
            RunConfig { id: "a/b".into(), ..Default::default() },
            RunConfig { inputs: Inputs::Tiles { dir: "/no/such/dir".into() }, ..Default::default() },
            RunConfig {
                segmenter: SegmenterSpec { kind: SegmenterKind::ExternalRaster, ..Default::default() },
                ..Default::default()
            },
            RunConfig {
                postproc: CandidateParams { threshold: 2.0, ..Default::default() },
                ..Default::default()
            },
        ];
        for c in bad {
            let e = c.validate().unwrap_err();
            assert!(e.is_validation(), "{e}");
            assert_eq!(e.exit_code(), 2);
        }
    }
}
