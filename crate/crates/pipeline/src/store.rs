//! Run directories: `<data>/runs/<id>/` with `run.json`, per-image
//! probability rasters, ground truth, the detection report, the heatmap
//! and the append-only review ledger.

use std::path::{Path, PathBuf};

use moundline::catalog::SiteRecord;
use moundline::evals::{ConfusionCounts, DetectionOutcome, Metrics};
use moundline::formats::{polygon_feature, read_feature_collection, write_feature_collection};
use moundline::geo::Polygon;
use serde::{Deserialize, Serialize};

use crate::config::{check_id, RunConfig};
use crate::error::{PipelineError, Result};

/// Environment variable naming the data root.
pub const DATA_DIR_ENV: &str = "MOUNDLINE_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Created,
    Complete,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub v: u32,
    pub id: String,
    pub status: RunStatus,
    pub config: RunConfig,
    /// Evaluated images, each with a stored probability raster.
    pub images: Vec<String>,
    #[serde(default)]
    pub error: Option<String>,
}

/// Automatic evaluation of a run's test images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub v: u32,
    pub run_id: String,
    pub threshold: f64,
    pub min_intersection_m2: f64,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub outcomes: Vec<DetectionOutcome>,
}

/// A ground-truth site tied to the evaluated image containing it.
#[derive(Debug, Clone, PartialEq)]
pub struct GtSite {
    pub id: String,
    pub image_id: String,
    pub shape: Polygon,
}

pub fn write_gt(path: &Path, sites: &[GtSite]) -> Result<()> {
    let features = sites
        .iter()
        .map(|s| {
            let mut props = geojson::JsonObject::new();
            props.insert("id".into(), s.id.clone().into());
            props.insert("image_id".into(), s.image_id.clone().into());
            polygon_feature(&s.shape, props)
        })
        .collect();
    write_feature_collection(path, features, None)?;
    Ok(())
}

pub fn read_gt(path: &Path) -> Result<Vec<GtSite>> {
    let (features, _) = read_feature_collection(path)?;
    features
        .into_iter()
        .map(|f| {
            let id = f.str_prop("id").map(str::to_owned);
            let image_id = f.str_prop("image_id").map(str::to_owned);
            match (id, image_id) {
                (Some(id), Some(image_id)) => Ok(GtSite { id, image_id, shape: f.polygon }),
                _ => Err(PipelineError::Config(format!(
                    "{}: ground-truth features need `id` and `image_id`",
                    path.display()
                ))),
            }
        })
        .collect()
}

pub fn write_sites(path: &Path, sites: &[SiteRecord]) -> Result<()> {
    write_feature_collection(path, sites.iter().map(SiteRecord::to_feature).collect(), None)?;
    Ok(())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable");
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
}

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn record(&self) -> PathBuf {
        self.dir.join("run.json")
    }
    pub fn preds(&self) -> PathBuf {
        self.dir.join("preds")
    }
    pub fn pred(&self, image_id: &str) -> PathBuf {
        self.preds().join(image_id)
    }
    pub fn gt(&self) -> PathBuf {
        self.dir.join("gt.geojson")
    }
    pub fn known_sites(&self) -> PathBuf {
        self.dir.join("known_sites.geojson")
    }
    pub fn report(&self) -> PathBuf {
        self.dir.join("report.json")
    }
    pub fn reviews(&self) -> PathBuf {
        self.dir.join("reviews.jsonl")
    }
    pub fn heatmap(&self) -> PathBuf {
        self.dir.join("heatmap.png")
    }
    pub fn model(&self) -> PathBuf {
        self.dir.join("model.json")
    }
    pub fn curation(&self) -> PathBuf {
        self.dir.join("curation.json")
    }
}

#[derive(Debug, Clone)]
pub struct RunStore {
    root: PathBuf,
}

impl RunStore {
    /// Store rooted at `<data_dir>/runs`.
    pub fn new(data_dir: impl AsRef<Path>) -> Self {
        Self {
            root: data_dir.as_ref().join("runs"),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn paths(&self, id: &str) -> Result<RunPaths> {
        check_id("run", id)?;
        Ok(RunPaths { dir: self.root.join(id) })
    }

    /// Existing run directory, or `UnknownRun`.
    pub fn existing(&self, id: &str) -> Result<RunPaths> {
        let p = self.paths(id).map_err(|_| PipelineError::UnknownRun(id.to_owned()))?;
        if p.record().exists() {
            Ok(p)
        } else {
            Err(PipelineError::UnknownRun(id.to_owned()))
        }
    }

    pub fn load(&self, id: &str) -> Result<RunRecord> {
        read_json(&self.existing(id)?.record())
    }

    pub fn save(&self, record: &RunRecord) -> Result<()> {
        let p = self.paths(&record.id)?;
        std::fs::create_dir_all(&p.dir).map_err(|e| PipelineError::io(&p.dir, e))?;
        write_json(&p.record(), record)
    }

    /// All runs, sorted by id.
    pub fn list(&self) -> Result<Vec<RunRecord>> {
        if !self.root.exists() {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(&self.root).map_err(|e| PipelineError::io(&self.root, e))? {
            let entry = entry.map_err(|e| PipelineError::io(&self.root, e))?;
            if entry.path().join("run.json").exists() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.push(name.to_owned());
                }
            }
        }
        ids.sort();
        ids.iter().map(|id| self.load(id)).collect()
    }
}
