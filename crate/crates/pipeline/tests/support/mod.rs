//! A completed run whose outcome per image is fixed by construction: the
//! segmenter reads hand-made probability rasters, so each test image is a
//! known TP, FN, FP or TN.

#![allow(dead_code)]

use std::path::Path;

use moundline::catalog::SiteRecord;
use moundline::formats::{write_feature_collection, write_prob_raster};
use moundline::geo::{GeoTransform, Point, Polygon, Raster};
use moundline::model::{SegmenterKind, SegmenterSpec};
use moundline::synth::{generate_series, scene_series, Scene, SceneSpec};
use moundline_pipeline::config::Inputs;
use moundline_pipeline::stages::execute_run;
use moundline_pipeline::{RunConfig, RunStore};
use tempfile::TempDir;

pub const RUN: &str = "fixture";
pub const TP: [&str; 2] = ["scene_003", "scene_006"];
pub const FN: [&str; 3] = ["scene_005", "scene_007", "scene_008"];
pub const FP: &str = "scene_004";
pub const TN: &str = "scene_009";
pub const KNOWN_SITE: &str = "known-near-fp";

pub struct Fixture {
    pub dir: TempDir,
    pub store: RunStore,
    pub scenes: Vec<Scene>,
}

impl Fixture {
    pub fn scene(&self, id: &str) -> &Scene {
        self.scenes.iter().find(|s| s.id == id).expect("fixture scene")
    }

    pub fn data_dir(&self) -> &Path {
        self.dir.path()
    }
}

pub fn template() -> SceneSpec {
    SceneSpec { extent_m: (256.0, 256.0), ..SceneSpec::default() }
}

/// Gaussian bump of height 0.95 and spread 12 px around `center`.
pub fn bump(t: GeoTransform, w: usize, h: usize, center: Point) -> Raster<f32> {
    Raster::from_fn(w, h, t, |c, r| {
        let (x, y) = t.pixel_center(c, r);
        let d2 = (x - center.x).powi(2) + (y - center.y).powi(2);
        (0.95 * (-d2 / (2.0 * 144.0)).exp()) as f32
    })
}

fn scene_center(s: &Scene) -> Point {
    let (x0, y0, x1, y1) = s.image.transform().extent(s.image.width(), s.image.height());
    Point::new((x0 + x1) / 2.0, (y0 + y1) / 2.0)
}

/// Square of side `side` around the FP bump, catalogued as a known site.
pub fn known_site(fp: &Scene) -> SiteRecord {
    let c = scene_center(fp);
    SiteRecord::new(KNOWN_SITE, Polygon::rect(c.x - 10.0, c.y - 10.0, c.x + 10.0, c.y + 10.0).unwrap())
}

pub fn config(dir: &Path) -> RunConfig {
    RunConfig {
        id: RUN.into(),
        inputs: Inputs::Synth { scenes: 10, train: 3, template: template() },
        known_sites: Some(dir.join("known.geojson")),
        external_rasters: Some(dir.join("external")),
        segmenter: SegmenterSpec { kind: SegmenterKind::ExternalRaster, ..SegmenterSpec::default() },
        seed: 11,
        ..RunConfig::default()
    }
}

pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let scenes = generate_series(&scene_series(10, &template(), cfg.seed)).unwrap();
    let ext = dir.path().join("external");
    std::fs::create_dir_all(&ext).unwrap();
    for s in &scenes {
        let (t, w, h) = (*s.image.transform(), s.image.width(), s.image.height());
        let prob = if TP.contains(&s.id.as_str()) {
            bump(t, w, h, s.sites[0].shape.centroid())
        } else if s.id == FP {
            bump(t, w, h, scene_center(s))
        } else {
            Raster::filled(w, h, 0.0f32, t)
        };
        write_prob_raster(&ext.join(&s.id), &prob).unwrap();
    }
    let fp = scenes.iter().find(|s| s.id == FP).unwrap();
    assert!(fp.sites.is_empty() && scenes.iter().find(|s| s.id == TN).unwrap().sites.is_empty());
    write_feature_collection(&dir.path().join("known.geojson"), vec![known_site(fp).to_feature()], None).unwrap();
    let store = RunStore::new(dir.path());
    execute_run(&store, &cfg).unwrap();
    Fixture { dir, store, scenes }
}
