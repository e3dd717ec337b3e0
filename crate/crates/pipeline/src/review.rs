//! Loaded runs and their review ledgers. A [`RunContext`] holds the
//! immutable run snapshot (report, ground truth, known sites) plus the
//! append-only list of review actions; adjusted metrics are a pure function
//! of the two, so replaying `reviews.jsonl` from empty reproduces them.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::{Arc, Mutex, RwLock};

use geojson::{Feature, Geometry, JsonObject};
use moundline::catalog::SiteRecord;
use moundline::evals::{
    apply_adjustments, metrics, AdjustmentRecord, AdjustmentReason, ConfusionCounts, Metrics, Outcome,
};
use moundline::formats::{feature_polygons, polygon_feature, read_prob_raster};
use moundline::geo::{intersection_area, Polygon};
use moundline::postproc::CandidateShape;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::PipelineError;
use crate::stages::{candidate_feature, image_candidates, parse_candidate_id, threshold_milli};
use crate::store::{read_gt, read_json, DetectionReport, GtSite, RunPaths, RunRecord, RunStore};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown {kind} {id}")]
    NotFound { kind: &'static str, id: String },
    #[error("conflicting review already recorded for {0}")]
    Conflict(String),
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("invalid review: {0}")]
    Invalid(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl From<moundline::formats::FormatError> for ReviewError {
    fn from(e: moundline::formats::FormatError) -> Self {
        Self::Pipeline(e.into())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
    MarkNotVisible,
    Relabel,
}

/// One reviewer decision about a candidate or a ground-truth site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewAction {
    pub v: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidate_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub site_id: Option<String>,
    pub verdict: Verdict,
    /// GeoJSON Polygon geometry; required for `relabel`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_polygon: Option<serde_json::Value>,
    pub reviewer: String,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ReviewAction {
    /// `candidate:<id>` or `site:<id>`.
    pub fn target(&self) -> String {
        match (&self.candidate_id, &self.site_id) {
            (Some(c), _) => format!("candidate:{c}"),
            (None, Some(s)) => format!("site:{s}"),
            (None, None) => String::new(),
        }
    }

    fn key(&self) -> (String, &str, &str) {
        (self.target(), &self.reviewer, &self.timestamp)
    }
}

/// Parses a GeoJSON geometry into a valid polygon.
pub fn parse_polygon(value: &serde_json::Value) -> Result<Polygon, ReviewError> {
    let geometry: Geometry = serde_json::from_value(value.clone())
        .map_err(|e| ReviewError::InvalidPolygon(e.to_string()))?;
    let feature = Feature {
        bbox: None,
        geometry: Some(geometry),
        id: None,
        properties: None,
        foreign_members: None,
    };
    let mut polys = feature_polygons(&feature).map_err(|e| ReviewError::InvalidPolygon(e.to_string()))?;
    if polys.len() != 1 {
        return Err(ReviewError::InvalidPolygon("expected a single Polygon geometry".into()));
    }
    let p = polys.remove(0);
    p.validate().map_err(|e| ReviewError::InvalidPolygon(e.to_string()))?;
    Ok(p)
}

/// What POSTing a review did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AppendOutcome {
    pub v: u32,
    /// Position in the ledger.
    pub seq: usize,
    /// True when the identical action was already recorded.
    pub duplicate: bool,
}

/// Adjusted (or automatic) metrics document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsDoc {
    pub v: u32,
    pub run_id: String,
    pub evaluation: &'static str,
    pub threshold: f64,
    pub automatic: ConfusionCounts,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub ledger: Vec<AdjustmentRecord>,
    pub reviews: usize,
}

type CandidateCache = Mutex<HashMap<(String, u32), Arc<Vec<CandidateShape>>>>;

/// Candidates grouped by image id.
pub type ImageCandidates = Vec<(String, Arc<Vec<CandidateShape>>)>;

/// A loaded run. Everything but the review list is immutable.
pub struct RunContext {
    pub paths: RunPaths,
    pub record: RunRecord,
    pub report: DetectionReport,
    pub gt: Vec<GtSite>,
    pub known: Vec<SiteRecord>,
    candidates: CandidateCache,
    /// Serializes appends (single writer per run).
    writer: Mutex<()>,
    /// Readers clone the current snapshot and never block on writers.
    reviews: RwLock<Arc<Vec<ReviewAction>>>,
}

impl RunContext {
    /// Loads a completed run, including any reviews already on disk.
    pub fn open(store: &RunStore, id: &str) -> Result<Self, ReviewError> {
        let mut ctx = Self::open_empty(store, id)?;
        let reviews = read_reviews(&ctx.paths)?;
        ctx.reviews = RwLock::new(Arc::new(reviews));
        Ok(ctx)
    }

    /// Loads a completed run ignoring its stored reviews.
    pub fn open_empty(store: &RunStore, id: &str) -> Result<Self, ReviewError> {
        let paths = store.existing(id)?;
        let record = store.load(id)?;
        if record.status != crate::store::RunStatus::Complete {
            return Err(ReviewError::Invalid(format!("run {id} is not complete")));
        }
        let report: DetectionReport = read_json(&paths.report())?;
        let gt = read_gt(&paths.gt())?;
        let known = crate::stages::load_sites(&paths.known_sites())?;
        Ok(Self {
            paths,
            record,
            report,
            gt,
            known,
            candidates: Mutex::new(HashMap::new()),
            writer: Mutex::new(()),
            reviews: RwLock::new(Arc::new(Vec::new())),
        })
    }

    pub fn reviews(&self) -> Arc<Vec<ReviewAction>> {
        self.reviews.read().expect("poisoned").clone()
    }

    /// Candidates of one image at threshold `milli / 1000`, recomputed from
    /// the stored probability raster and cached.
    pub fn image_candidates(&self, image_id: &str, milli: u32) -> Result<Arc<Vec<CandidateShape>>, ReviewError> {
        let key = (image_id.to_owned(), milli);
        if let Some(c) = self.candidates.lock().expect("poisoned").get(&key) {
            return Ok(c.clone());
        }
        if !self.record.images.iter().any(|i| i == image_id) {
            return Err(ReviewError::NotFound { kind: "image", id: image_id.to_owned() });
        }
        let prob = read_prob_raster(&self.paths.pred(image_id))?;
        let cands = Arc::new(image_candidates(&prob, image_id, &self.record.config.postproc, milli)?);
        self.candidates.lock().expect("poisoned").insert(key, cands.clone());
        Ok(cands)
    }

    /// Every candidate of every evaluated image at threshold `t`.
    pub fn candidates(&self, t: f64) -> Result<ImageCandidates, ReviewError> {
        let milli = threshold_milli(t)?;
        self.record
            .images
            .iter()
            .map(|id| Ok((id.clone(), self.image_candidates(id, milli)?)))
            .collect()
    }

    pub fn find_candidate(&self, id: &str) -> Result<CandidateShape, ReviewError> {
        let missing = || ReviewError::NotFound { kind: "candidate", id: id.to_owned() };
        let (image, milli) = parse_candidate_id(id).ok_or_else(missing)?;
        let cands = self.image_candidates(image, milli).map_err(|e| match e {
            ReviewError::NotFound { .. } => missing(),
            other => other,
        })?;
        cands.iter().find(|c| c.id == id).cloned().ok_or_else(missing)
    }

    /// Ground-truth site of an evaluated image, or else a known site.
    fn find_site(&self, id: &str) -> Option<(Option<&str>, &Polygon)> {
        self.gt
            .iter()
            .find(|s| s.id == id)
            .map(|s| (Some(s.image_id.as_str()), &s.shape))
            .or_else(|| self.known.iter().find(|s| s.id == id).map(|s| (None, &s.shape)))
    }

    /// Checks a review against the run without recording it.
    pub fn validate(&self, a: &ReviewAction) -> Result<(), ReviewError> {
        if a.v != 1 {
            return Err(ReviewError::Invalid(format!("unsupported version {}", a.v)));
        }
        if a.reviewer.trim().is_empty() || a.timestamp.trim().is_empty() {
            return Err(ReviewError::Invalid("reviewer and timestamp are required".into()));
        }
        match (&a.candidate_id, &a.site_id) {
            (Some(c), None) => {
                self.find_candidate(c)?;
            }
            (None, Some(s)) => {
                if self.find_site(s).is_none() {
                    return Err(ReviewError::NotFound { kind: "site", id: s.clone() });
                }
            }
            _ => return Err(ReviewError::Invalid("give exactly one of candidate_id or site_id".into())),
        }
        match (a.verdict, &a.new_polygon) {
            (Verdict::Relabel, None) => Err(ReviewError::InvalidPolygon("relabel needs new_polygon".into())),
            (_, Some(p)) => parse_polygon(p).map(|_| ()),
            _ => Ok(()),
        }
    }

    /// Validates and appends a review, persisting it to `reviews.jsonl`.
    /// Resubmitting an identical action is a no-op; a different action with
    /// the same (target, reviewer, timestamp) is a conflict.
    pub fn append(&self, a: ReviewAction) -> Result<AppendOutcome, ReviewError> {
        self.validate(&a)?;
        let _guard = self.writer.lock().expect("poisoned");
        let current = self.reviews();
        if let Some((seq, prev)) = current.iter().enumerate().find(|(_, r)| r.key() == a.key()) {
            return if *prev == a {
                Ok(AppendOutcome { v: 1, seq, duplicate: true })
            } else {
                Err(ReviewError::Conflict(a.target()))
            };
        }
        let mut line = serde_json::to_string(&a).expect("serializable");
        line.push('\n');
        let path = self.paths.reviews();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| PipelineError::io(&path, e))?;
        file.write_all(line.as_bytes()).map_err(|e| PipelineError::io(&path, e))?;
        let mut next = (*current).clone();
        next.push(a);
        let seq = next.len() - 1;
        *self.reviews.write().expect("poisoned") = Arc::new(next);
        Ok(AppendOutcome { v: 1, seq, duplicate: false })
    }

    /// In-memory append with the same validation and duplicate rules as
    /// [`RunContext::append`]; used for replay.
    fn replay_one(&self, list: &mut Vec<ReviewAction>, a: ReviewAction) -> Result<(), ReviewError> {
        self.validate(&a)?;
        match list.iter().find(|r| r.key() == a.key()) {
            Some(prev) if *prev == a => Ok(()),
            Some(_) => Err(ReviewError::Conflict(a.target())),
            None => {
                list.push(a);
                Ok(())
            }
        }
    }

    /// Last action per target, in ledger order of first appearance.
    fn final_states<'a>(&self, reviews: &'a [ReviewAction]) -> BTreeMap<String, &'a ReviewAction> {
        let mut out = BTreeMap::new();
        for r in reviews {
            out.insert(r.target(), r);
        }
        out
    }

    /// Ledger derived from reviews: a site marked not visible in an FN
    /// image turns it into a TN; an accepted candidate in an FP image that
    /// overlays a known site turns it into a TP. Each image moves at most
    /// once, and records are ordered by image id.
    pub fn derive_ledger(&self, reviews: &[ReviewAction]) -> Result<Vec<AdjustmentRecord>, ReviewError> {
        let klass: HashMap<&str, Outcome> = self
            .report
            .outcomes
            .iter()
            .map(|o| (o.image_id.as_str(), o.klass))
            .collect();
        let mut moved: BTreeMap<String, AdjustmentRecord> = BTreeMap::new();
        for r in self.final_states(reviews).values() {
            match (r.verdict, &r.candidate_id, &r.site_id) {
                (Verdict::MarkNotVisible, None, Some(site)) => {
                    let Some((Some(image), _)) = self.find_site(site) else { continue };
                    if klass.get(image) == Some(&Outcome::FN) && !moved.contains_key(image) {
                        moved.insert(
                            image.to_owned(),
                            AdjustmentRecord::reclassify(Outcome::FN, Outcome::TN, 1, AdjustmentReason::SiteNotVisible)
                                .with_note(format!("image {image}: site {site} not visible")),
                        );
                    }
                }
                (Verdict::Accept, Some(cid), None) => {
                    let c = self.find_candidate(cid)?;
                    let image = parse_candidate_id(cid).map(|(i, _)| i).unwrap_or_default();
                    if klass.get(image) != Some(&Outcome::FP) || moved.contains_key(image) {
                        continue;
                    }
                    let hit = self
                        .gt
                        .iter()
                        .map(|s| (&s.id, &s.shape))
                        .chain(self.known.iter().map(|s| (&s.id, &s.shape)))
                        .find(|(_, shape)| intersection_area(&c.shape, shape) > self.report.min_intersection_m2);
                    if let Some((site, _)) = hit {
                        moved.insert(
                            image.to_owned(),
                            AdjustmentRecord::reclassify(Outcome::FP, Outcome::TP, 1, AdjustmentReason::NearbySiteMatched)
                                .with_note(format!("image {image}: candidate {cid} overlays site {site}")),
                        );
                    }
                }
                _ => {}
            }
        }
        Ok(moved.into_values().collect())
    }

    pub fn metrics_doc(&self, reviews: &[ReviewAction], adjusted: bool) -> Result<MetricsDoc, ReviewError> {
        let automatic = self.report.counts;
        let (counts, ledger) = if adjusted {
            let ledger = self.derive_ledger(reviews)?;
            (apply_adjustments(&automatic, &ledger).map_err(PipelineError::from)?, ledger)
        } else {
            (automatic, Vec::new())
        };
        Ok(MetricsDoc {
            v: 1,
            run_id: self.record.id.clone(),
            evaluation: if adjusted { "adjusted" } else { "automatic" },
            threshold: self.report.threshold,
            automatic,
            counts,
            metrics: metrics(&counts),
            ledger,
            reviews: if adjusted { reviews.len() } else { 0 },
        })
    }

    /// Metrics JSON for the current review snapshot.
    pub fn metrics_json(&self, adjusted: bool) -> Result<String, ReviewError> {
        render(&self.metrics_doc(&self.reviews(), adjusted)?)
    }

    /// Replays `actions` from an empty ledger and renders adjusted metrics.
    pub fn replay_metrics_json(&self, actions: &[ReviewAction]) -> Result<String, ReviewError> {
        let mut list = Vec::new();
        for a in actions {
            self.replay_one(&mut list, a.clone())?;
        }
        render(&self.metrics_doc(&list, true)?)
    }

    /// Accepted and relabeled shapes, one feature per reviewed target.
    pub fn export_annotations(&self) -> Result<geojson::FeatureCollection, ReviewError> {
        let reviews = self.reviews();
        let mut features = Vec::new();
        for (target, r) in self.final_states(&reviews) {
            let shape = match (r.verdict, &r.new_polygon) {
                (Verdict::Relabel, Some(p)) => parse_polygon(p)?,
                (Verdict::Accept, _) => match (&r.candidate_id, &r.site_id) {
                    (Some(c), _) => self.find_candidate(c)?.shape,
                    (None, Some(s)) => match self.find_site(s) {
                        Some((_, shape)) => shape.clone(),
                        None => continue,
                    },
                    _ => continue,
                },
                _ => continue,
            };
            let mut props = JsonObject::new();
            props.insert("target".into(), target.into());
            props.insert(
                "verdict".into(),
                serde_json::to_value(r.verdict).expect("serializable"),
            );
            props.insert("reviewer".into(), r.reviewer.clone().into());
            props.insert("timestamp".into(), r.timestamp.clone().into());
            features.push(polygon_feature(&shape, props));
        }
        let mut fc = geojson::FeatureCollection::from_iter(features);
        let mut fm = JsonObject::new();
        fm.insert("v".into(), 1.into());
        fm.insert("run_id".into(), self.record.id.clone().into());
        fc.foreign_members = Some(fm);
        Ok(fc)
    }

    /// Candidates at `t` as GeoJSON, each tagged with its latest verdict.
    pub fn candidates_collection(&self, t: f64) -> Result<geojson::FeatureCollection, ReviewError> {
        let reviews = self.reviews();
        let states = self.final_states(&reviews);
        let mut features = Vec::new();
        for (image, cands) in self.candidates(t)? {
            for c in cands.iter() {
                let mut f = candidate_feature(c, &image);
                let verdict = states
                    .get(&format!("candidate:{}", c.id))
                    .map(|r| serde_json::to_value(r.verdict).expect("serializable"))
                    .unwrap_or(serde_json::Value::Null);
                if let Some(p) = f.properties.as_mut() {
                    p.insert("verdict".into(), verdict);
                }
                features.push(f);
            }
        }
        let mut fc = geojson::FeatureCollection::from_iter(features);
        let mut fm = JsonObject::new();
        fm.insert("v".into(), 1.into());
        fm.insert("run_id".into(), self.record.id.clone().into());
        fm.insert("threshold".into(), (threshold_milli(t)? as f64 / 1000.0).into());
        fc.foreign_members = Some(fm);
        Ok(fc)
    }
}

fn render<T: Serialize>(doc: &T) -> Result<String, ReviewError> {
    let mut s = serde_json::to_string_pretty(doc).expect("serializable");
    s.push('\n');
    Ok(s)
}

/// Parses `reviews.jsonl`; a missing file is an empty ledger.
pub fn read_reviews(paths: &RunPaths) -> Result<Vec<ReviewAction>, ReviewError> {
    let path = paths.reviews();
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(&path).map_err(|e| PipelineError::io(&path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| ReviewError::Invalid(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
