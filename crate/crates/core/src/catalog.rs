//! Site catalog ingestion, curation filters and stratified splits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::formats::VectorFeature;
use crate::geo::{polygon_area, Polygon};
use crate::par;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CatalogError {
    #[error("stratum `{stratum}` has {size} members; at least 3 are needed to split")]
    StratumTooSmall { stratum: &'static str, size: usize },
    #[error("fraction {name} = {value} must lie strictly between 0 and 1")]
    InvalidFraction { name: &'static str, value: f64 },
    #[error("feature {index} has no `id` property")]
    MissingId { index: usize },
    #[error("feature `{id}`: unknown {field} value `{value}`")]
    BadProperty {
        id: String,
        field: &'static str,
        value: String,
    },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Visibility {
    Visible,
    NotVisible,
    #[default]
    Unknown,
}

impl Visibility {
    fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().replace([' ', '-'], "_").as_str() {
            "visible" => Some(Self::Visible),
            "not_visible" | "notvisible" => Some(Self::NotVisible),
            "unknown" | "" => Some(Self::Unknown),
            _ => None,
        }
    }
}

/// One catalogued site. `area_m2` caches the polygon area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteRecord {
    pub id: String,
    pub shape: Polygon,
    pub area_m2: f64,
    #[serde(default)]
    pub destroyed: bool,
    #[serde(default)]
    pub visibility: Visibility,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub preservation: Option<String>,
}

impl SiteRecord {
    pub fn new(id: impl Into<String>, shape: Polygon) -> Self {
        let area_m2 = polygon_area(&shape);
        Self {
            id: id.into(),
            shape,
            area_m2,
            destroyed: false,
            visibility: Visibility::Unknown,
            category: None,
            preservation: None,
        }
    }

    pub fn destroyed(mut self, destroyed: bool) -> Self {
        self.destroyed = destroyed;
        self
    }

    pub fn with_labels(mut self, category: Option<&str>, preservation: Option<&str>) -> Self {
        self.category = category.map(str::to_owned);
        self.preservation = preservation.map(str::to_owned);
        self
    }

    /// GeoJSON feature readable by [`sites_from_features`].
    pub fn to_feature(&self) -> geojson::Feature {
        let mut props = geojson::JsonObject::new();
        props.insert("id".into(), self.id.clone().into());
        props.insert("area_m2".into(), self.area_m2.into());
        props.insert("destroyed".into(), self.destroyed.into());
        props.insert(
            "visibility".into(),
            serde_json::to_value(self.visibility).expect("plain enum"),
        );
        if let Some(c) = &self.category {
            props.insert("category".into(), c.clone().into());
        }
        if let Some(p) = &self.preservation {
            props.insert("preservation".into(), p.clone().into());
        }
        crate::formats::polygon_feature(&self.shape, props)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeKind {
    Urban,
    Agriculture,
    Flooded,
    Rocky,
}

/// A region known to contain no sites, used for empty-mask tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeRegion {
    pub id: String,
    pub shape: Polygon,
    pub kind: NegativeKind,
}

fn feature_id(f: &VectorFeature, index: usize) -> Result<String, CatalogError> {
    match f.properties.get("id") {
        Some(serde_json::Value::String(s)) => Ok(s.clone()),
        Some(serde_json::Value::Number(n)) => Ok(n.to_string()),
        _ => Err(CatalogError::MissingId { index }),
    }
}

/// Builds site records from GeoJSON features (`id` required; `destroyed`,
/// `visibility`, `category`, `preservation` optional).
pub fn sites_from_features(features: &[VectorFeature]) -> Result<Vec<SiteRecord>, CatalogError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let id = feature_id(f, i)?;
        if !seen.insert(id.clone()) {
            return Err(CatalogError::DuplicateId(id));
        }
        let visibility = match f.str_prop("visibility") {
            None => Visibility::Unknown,
            Some(v) => Visibility::parse(v).ok_or_else(|| CatalogError::BadProperty {
                id: id.clone(),
                field: "visibility",
                value: v.to_owned(),
            })?,
        };
        let mut rec = SiteRecord::new(id, f.polygon.clone())
            .destroyed(f.bool_prop("destroyed").unwrap_or(false))
            .with_labels(f.str_prop("category"), f.str_prop("preservation"));
        rec.visibility = visibility;
        out.push(rec);
    }
    Ok(out)
}

pub fn negatives_from_features(
    features: &[VectorFeature],
) -> Result<Vec<NegativeRegion>, CatalogError> {
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let id = feature_id(f, i)?;
            let kind_str = f.str_prop("kind").unwrap_or("agriculture");
            let kind = serde_json::from_value(serde_json::Value::String(kind_str.to_owned()))
                .map_err(|_| CatalogError::BadProperty {
                    id: id.clone(),
                    field: "kind",
                    value: kind_str.to_owned(),
                })?;
            Ok(NegativeRegion {
                id,
                shape: f.polygon.clone(),
                kind,
            })
        })
        .collect()
}

/// Why a site was dropped. Variants are ordered by precedence: a site that
/// matches several filters records the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RemovalReason {
    TopK,
    WindowOverflow,
    TooSmall,
    Destroyed,
}

impl RemovalReason {
    pub const ALL: [RemovalReason; 4] = [
        RemovalReason::TopK,
        RemovalReason::WindowOverflow,
        RemovalReason::TooSmall,
        RemovalReason::Destroyed,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurationParams {
    /// Number of largest sites dropped outright.
    pub top_k: usize,
    /// Sites smaller than this (m²) are dropped.
    pub min_area_m2: f64,
    /// Sites whose bounding-box long side exceeds this (m) are dropped.
    pub window_side_m: f64,
}

impl Default for CurationParams {
    fn default() -> Self {
        Self {
            top_k: 200,
            min_area_m2: 1000.0,
            window_side_m: 1000.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curation {
    pub kept: Vec<SiteRecord>,
    pub removed: Vec<(SiteRecord, RemovalReason)>,
    /// Every filter each removed site matched, first-reason included.
    pub matched: Vec<(String, Vec<RemovalReason>)>,
}

/// Applies the curation filters. `kept` and `removed` partition the input
/// and both preserve input order.
pub fn curate(sites: &[SiteRecord], params: &CurationParams) -> Curation {
    let mut by_area: Vec<usize> = (0..sites.len()).collect();
    by_area.sort_by(|&a, &b| {
        sites[b]
            .area_m2
            .total_cmp(&sites[a].area_m2)
            .then_with(|| sites[a].id.cmp(&sites[b].id))
    });
    let mut top = vec![false; sites.len()];
    for &i in by_area.iter().take(params.top_k) {
        top[i] = true;
    }

    let reasons: Vec<Vec<RemovalReason>> = par::map_range(sites.len(), |i| {
        let s = &sites[i];
        let mut r = Vec::new();
        if top[i] {
            r.push(RemovalReason::TopK);
        }
        if s.shape.bbox().long_side() > params.window_side_m {
            r.push(RemovalReason::WindowOverflow);
        }
        if s.area_m2 < params.min_area_m2 {
            r.push(RemovalReason::TooSmall);
        }
        if s.destroyed {
            r.push(RemovalReason::Destroyed);
        }
        r
    });

    let mut out = Curation {
        kept: Vec::new(),
        removed: Vec::new(),
        matched: Vec::new(),
    };
    for (site, r) in sites.iter().zip(reasons) {
        match r.first() {
            None => out.kept.push(site.clone()),
            Some(&first) => {
                out.removed.push((site.clone(), first));
                out.matched.push((site.id.clone(), r));
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub id: String,
    pub reason: RemovalReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReasonCount {
    pub reason: RemovalReason,
    /// Sites whose recorded (first) reason is this one.
    pub first_reason: usize,
    /// Sites matching this filter at all, overlaps included.
    pub matched: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalDiscrepancy {
    pub expected: usize,
    pub computed: usize,
    pub difference: i64,
}

/// JSON curation report: `{kept, removed, ...}` plus per-reason and
/// image-count accounting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurationReport {
    pub kept: Vec<String>,
    pub removed: Vec<Removal>,
    pub input_sites: usize,
    pub removed_total: usize,
    pub per_reason: Vec<ReasonCount>,
    /// Sum of per-filter matches; exceeds `removed_total` when filters overlap.
    pub removed_sum_of_filters: usize,
    pub negatives: usize,
    /// Kept sites plus negative regions, one image each.
    pub total_images: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_total_images: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub discrepancy: Option<TotalDiscrepancy>,
}

impl CurationReport {
    pub fn new(
        curation: &Curation,
        negatives: usize,
        reference_total_images: Option<usize>,
    ) -> Self {
        let per_reason: Vec<ReasonCount> = RemovalReason::ALL
            .iter()
            .map(|&reason| ReasonCount {
                reason,
                first_reason: curation.removed.iter().filter(|(_, r)| *r == reason).count(),
                matched: curation
                    .matched
                    .iter()
                    .filter(|(_, rs)| rs.contains(&reason))
                    .count(),
            })
            .collect();
        let removed_sum_of_filters = per_reason.iter().map(|c| c.matched).sum();
        let total_images = curation.kept.len() + negatives;
        let discrepancy = reference_total_images
            .filter(|&expected| expected != total_images)
            .map(|expected| TotalDiscrepancy {
                expected,
                computed: total_images,
                difference: total_images as i64 - expected as i64,
            });
        Self {
            kept: curation.kept.iter().map(|s| s.id.clone()).collect(),
            removed: curation
                .removed
                .iter()
                .map(|(s, r)| Removal {
                    id: s.id.clone(),
                    reason: *r,
                })
                .collect(),
            input_sites: curation.kept.len() + curation.removed.len(),
            removed_total: curation.removed.len(),
            per_reason,
            removed_sum_of_filters,
            negatives,
            total_images,
            reference_total_images,
            discrepancy,
        }
    }
}

/// Sites whose category is in `categories` and preservation in `preservation`.
pub fn select_by_labels(
    sites: &[SiteRecord],
    categories: &BTreeSet<String>,
    preservation: &BTreeSet<String>,
) -> Vec<SiteRecord> {
    sites
        .iter()
        .filter(|s| {
            s.category.as_ref().is_some_and(|c| categories.contains(c))
                && s.preservation.as_ref().is_some_and(|p| preservation.contains(p))
        })
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub id: String,
    pub split: Split,
}

fn check_fraction(name: &'static str, value: f64) -> Result<(), CatalogError> {
    if value > 0.0 && value < 1.0 {
        Ok(())
    } else {
        Err(CatalogError::InvalidFraction { name, value })
    }
}

fn split_stratum(
    ids: &[String],
    stratum: &'static str,
    test_frac: f64,
    val_frac_of_train: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SplitAssignment>, CatalogError> {
    if ids.len() < 3 {
        return Err(CatalogError::StratumTooSmall {
            stratum,
            size: ids.len(),
        });
    }
    let n = ids.len();
    let n_test = (test_frac * n as f64).floor() as usize;
    let n_val = (val_frac_of_train * (n - n_test) as f64).floor() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut split = vec![Split::Train; n];
    for &i in &order[..n_test] {
        split[i] = Split::Test;
    }
    for &i in &order[n_test..n_test + n_val] {
        split[i] = Split::Val;
    }
    Ok(ids
        .iter()
        .zip(split)
        .map(|(id, split)| SplitAssignment {
            id: id.clone(),
            split,
        })
        .collect())
}

/// Stratified train/val/test assignment. Sites and negatives are split
/// independently; an empty negative list is allowed and skipped.
pub fn make_splits(
    site_ids: &[String],
    negative_ids: &[String],
    test_frac: f64,
    val_frac_of_train: f64,
    seed: u64,
) -> Result<Vec<SplitAssignment>, CatalogError> {
    check_fraction("test_frac", test_frac)?;
    check_fraction("val_frac_of_train", val_frac_of_train)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = split_stratum(site_ids, "sites", test_frac, val_frac_of_train, &mut rng)?;
    if !negative_ids.is_empty() {
        rng.set_stream(1);
        out.extend(split_stratum(
            negative_ids,
            "negatives",
            test_frac,
            val_frac_of_train,
            &mut rng,
        )?);
    }
    Ok(out)
}
