//! Evaluation: mask IoU with the repeated random-crop protocol, and
//! per-image detection outcomes with automatic and adjudicated confusion
//! accounting.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{intersection_area, Polygon, Raster};
use crate::model::{ModelError, Segmenter};
use crate::postproc::{threshold_clip, CandidateShape};
use crate::tiles::{random_crop, Tile, TileError};
use crate::{par, seeds};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("mask dimensions differ: {a:?} vs {b:?}")]
    DimensionMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("the test set is empty")]
    EmptyTestSet,
    #[error("at least 2 passes are needed, got {0}")]
    TooFewPasses(usize),
    #[error("cannot move {requested} from {from:?}: only {available} available")]
    InsufficientCount {
        from: Outcome,
        requested: u64,
        available: u64,
    },
    #[error("adjustment record is malformed: {0}")]
    BadRecord(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tile(#[from] TileError),
}

/// `|a ∩ b| / |a ∪ b|` over foreground pixels; two empty masks score 1.
pub fn iou(a: &Raster<u8>, b: &Raster<u8>) -> Result<f64, EvalError> {
    if !a.same_shape(b) {
        return Err(EvalError::DimensionMismatch {
            a: (a.width(), a.height()),
            b: (b.width(), b.height()),
        });
    }
    let (mut inter, mut union) = (0u64, 0u64);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (x, y) = (x > 0, y > 0);
        inter += u64::from(x && y);
        union += u64::from(x || y);
    }
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepeatedIouParams {
    pub passes: usize,
    /// Side of the random crop per pass; `None` evaluates whole tiles.
    pub crop_side: Option<usize>,
    pub threshold: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatedIou {
    pub mean: f64,
    /// Sample standard deviation of the per-pass means.
    pub std: f64,
    pub pass_means: Vec<f64>,
}

/// Runs `passes` evaluations, each with fresh seed-derived crops, and
/// summarizes the per-pass mean IoU.
pub fn repeated_iou(
    tiles: &[Tile],
    segmenter: &dyn Segmenter,
    params: &RepeatedIouParams,
) -> Result<RepeatedIou, EvalError> {
    if tiles.is_empty() {
        return Err(EvalError::EmptyTestSet);
    }
    if params.passes < 2 {
        return Err(EvalError::TooFewPasses(params.passes));
    }
    let mut pass_means = Vec::with_capacity(params.passes);
    for pass in 0..params.passes {
        let scores = par::map_range(tiles.len(), |i| -> Result<f64, EvalError> {
            let tile = match params.crop_side {
                Some(side) => {
                    let s = seeds::derive(params.seed, &[pass as u64, i as u64]);
                    random_crop(&tiles[i], side, s)?
                }
                None => tiles[i].clone(),
            };
            let prob = segmenter.predict(&tile.source_id, &tile.image)?;
            iou(&threshold_clip(&prob, params.threshold), &tile.mask)
        });
        let scores = scores.into_iter().collect::<Result<Vec<f64>, _>>()?;
        pass_means.push(scores.iter().sum::<f64>() / scores.len() as f64);
    }
    let (mean, std) = mean_std(&pass_means);
    Ok(RepeatedIou {
        mean,
        std,
        pass_means,
    })
}

/// Welford mean and sample standard deviation (identical inputs give
/// exactly zero spread).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &x) in xs.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (k + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = if xs.len() > 1 {
        m2 / (xs.len() - 1) as f64
    } else {
        0.0
    };
    (mean, var.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    TP,
    TN,
    FP,
    FN,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub const fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn get(&self, o: Outcome) -> u64 {
        match o {
            Outcome::TP => self.tp,
            Outcome::TN => self.tn,
            Outcome::FP => self.fp,
            Outcome::FN => self.fn_,
        }
    }

    fn slot(&mut self, o: Outcome) -> &mut u64 {
        match o {
            Outcome::TP => &mut self.tp,
            Outcome::TN => &mut self.tn,
            Outcome::FP => &mut self.fp,
            Outcome::FN => &mut self.fn_,
        }
    }

    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a DetectionOutcome>) -> Self {
        let mut c = Self::default();
        for o in outcomes {
            *c.slot(o.klass) += 1;
        }
        c
    }
}

/// Accuracy, recall and precision; a metric is `None` when its
/// denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        recall: ratio(c.tp, c.tp + c.fn_),
        precision: ratio(c.tp, c.tp + c.fp),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentKind {
    /// Move `count` images from one outcome class to another.
    Reclassify,
    /// Add `count` images to an outcome class.
    Append,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjustmentReason {
    SiteNotVisible,
    NearbySiteMatched,
    Other,
}

/// One human adjudication applied on top of automatic counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentRecord {
    pub kind: AdjustmentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<Outcome>,
    pub to: Outcome,
    pub count: u64,
    pub reason: AdjustmentReason,
    #[serde(default)]
    pub note: String,
}

impl AdjustmentRecord {
    pub fn reclassify(from: Outcome, to: Outcome, count: u64, reason: AdjustmentReason) -> Self {
        Self {
            kind: AdjustmentKind::Reclassify,
            from: Some(from),
            to,
            count,
            reason,
            note: String::new(),
        }
    }

    pub fn append(to: Outcome, count: u64, reason: AdjustmentReason) -> Self {
        Self {
            kind: AdjustmentKind::Append,
            from: None,
            to,
            count,
            reason,
            note: String::new(),
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

/// Applies the ledger in order. Reclassifications preserve the total;
/// appends grow it.
pub fn apply_adjustments(
    c: &ConfusionCounts,
    ledger: &[AdjustmentRecord],
) -> Result<ConfusionCounts, EvalError> {
    let mut out = *c;
    for rec in ledger {
        if rec.count == 0 {
            return Err(EvalError::BadRecord("count must be at least 1".into()));
        }
        match rec.kind {
            AdjustmentKind::Reclassify => {
                let from = rec
                    .from
                    .ok_or_else(|| EvalError::BadRecord("reclassify needs `from`".into()))?;
                let available = out.get(from);
                if rec.count > available {
                    return Err(EvalError::InsufficientCount {
                        from,
                        requested: rec.count,
                        available,
                    });
                }
                *out.slot(from) -= rec.count;
                *out.slot(rec.to) += rec.count;
            }
            AdjustmentKind::Append => *out.slot(rec.to) += rec.count,
        }
    }
    Ok(out)
}

/// Ground truth and predictions for one evaluated image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionImage {
    pub image_id: String,
    /// `(site_id, shape)` of every annotated site in the image.
    pub gt_sites: Vec<(String, Polygon)>,
    pub candidates: Vec<CandidateShape>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteOutcome {
    pub site_id: String,
    pub matched: bool,
    pub candidate_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionOutcome {
    pub image_id: String,
    pub klass: Outcome,
    /// Candidates intersecting at least one ground-truth site.
    pub matched_candidate_ids: Vec<String>,
    /// Candidates intersecting none.
    pub unmatched_candidate_ids: Vec<String>,
    /// First annotated site of the image, if any.
    pub site_id: Option<String>,
    pub sites: Vec<SiteOutcome>,
}

/// Classifies each image: sites present and any candidate overlapping one
/// by more than `min_intersection` m² → TP, sites but no overlap → FN, no
/// sites and no candidates → TN, no sites but candidates → FP.
pub fn detect_outcomes(images: &[DetectionImage], min_intersection: f64) -> Vec<DetectionOutcome> {
    par::map(images, |img| {
        let sites: Vec<SiteOutcome> = img
            .gt_sites
            .iter()
            .map(|(id, shape)| {
                let hits: Vec<String> = img
                    .candidates
                    .iter()
                    .filter(|c| intersection_area(shape, &c.shape) > min_intersection)
                    .map(|c| c.id.clone())
                    .collect();
                SiteOutcome {
                    site_id: id.clone(),
                    matched: !hits.is_empty(),
                    candidate_ids: hits,
                }
            })
            .collect();
        let (matched, unmatched): (Vec<&CandidateShape>, Vec<&CandidateShape>) =
            img.candidates.iter().partition(|c| {
                sites.iter().any(|s| s.candidate_ids.contains(&c.id))
            });
        let klass = match (img.gt_sites.is_empty(), img.candidates.is_empty()) {
            (false, _) if sites.iter().any(|s| s.matched) => Outcome::TP,
            (false, _) => Outcome::FN,
            (true, true) => Outcome::TN,
            (true, false) => Outcome::FP,
        };
        DetectionOutcome {
            image_id: img.image_id.clone(),
            klass,
            matched_candidate_ids: matched.iter().map(|c| c.id.clone()).collect(),
            unmatched_candidate_ids: unmatched.iter().map(|c| c.id.clone()).collect(),
            site_id: img.gt_sites.first().map(|(id, _)| id.clone()),
            sites,
        }
    })
}

/// One row of a detection table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub evaluation: String,
    pub counts: ConfusionCounts,
}

fn fmt4(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))
}

/// Fixed-width text table: model, evaluation, TP TN FP FN, accuracy, recall, precision.
pub fn render_table_text(rows: &[TableRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:<10} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
        "Model", "Evaluation", "TP", "TN", "FP", "FN", "Accuracy", "Recall", "Precision"
    );
    for r in rows {
        let m = metrics(&r.counts);
        let _ = writeln!(
            s,
            "{:<12} {:<10} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
            r.model,
            r.evaluation,
            r.counts.tp,
            r.counts.tn,
            r.counts.fp,
            r.counts.fn_,
            fmt4(m.accuracy),
            fmt4(m.recall),
            fmt4(m.precision)
        );
    }
    s
}

pub fn render_table_csv(rows: &[TableRow]) -> String {
    let mut s = String::from("model,evaluation,tp,tn,fp,fn,accuracy,recall,precision\n");
    for r in rows {
        let m = metrics(&r.counts);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            r.model,
            r.evaluation,
            r.counts.tp,
            r.counts.tn,
            r.counts.fp,
            r.counts.fn_,
            fmt4(m.accuracy),
            fmt4(m.recall),
            fmt4(m.precision)
        );
    }
    s
}
