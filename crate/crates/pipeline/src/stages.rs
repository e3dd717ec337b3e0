//! Pipeline stages. Each reads and writes only the documented file formats,
//! so they can run one at a time from the CLI or chained by [`execute_run`].

use std::path::{Path, PathBuf};

use moundline::catalog::{
    curate, make_splits, negatives_from_features, sites_from_features, CurationParams,
    CurationReport, NegativeRegion, SiteRecord, Split,
};
use moundline::evals::{
    apply_adjustments, detect_outcomes, metrics, AdjustmentRecord, ConfusionCounts, DetectionImage,
};
use moundline::formats::{
    polygon_feature, read_feature_collection, read_prob_raster, read_rgb_png, write_feature_collection,
    write_prob_raster,
};
use moundline::geo::{intersection_area, union_bbox, BBox, GeoTransform, Point, Polygon, ProbRaster, Raster, Rgb};
use moundline::model::{train_baseline, BaselineModel, ExternalRasterSource, SegmenterKind, SegmenterSpec, Segmenter};
use moundline::mosaic::{plan_sweep, stitch, write_heatmap, RegionSweep, Weighting};
use moundline::postproc::{extract_candidates, polygonize, CandidateParams, CandidateShape};
use moundline::synth::{generate_series, scene_series, write_scene, SceneSpec};
use moundline::tiles::{
    downscale_half, list_tiles, read_tile, write_tile, ImageryEntry, ImageryManifest, PadPolicy, Tile,
};
use moundline::par;

use crate::config::{check_id, Inputs, RunConfig, SplitParams, TileParams};
use crate::error::{PipelineError, Result};
use crate::store::{write_gt, write_json, write_sites, DetectionReport, GtSite, RunRecord, RunStatus, RunStore};

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

/// Threshold in thousandths, the resolution of candidate ids.
pub fn threshold_milli(t: f64) -> Result<u32> {
    if !(0.0..=1.0).contains(&t) {
        return Err(PipelineError::Config(format!("threshold {t} must lie in [0, 1]")));
    }
    Ok((t * 1000.0).round() as u32)
}

/// Source prefix of candidate ids: `<image>/t<milli>`; candidates append `/<k>`.
pub fn candidate_source(image_id: &str, milli: u32) -> String {
    format!("{image_id}/t{milli}")
}

/// Splits `<image>/t<milli>/<k>` into its image id and threshold.
pub fn parse_candidate_id(id: &str) -> Option<(&str, u32)> {
    let mut parts = id.rsplitn(3, '/');
    let k = parts.next()?;
    let t = parts.next()?;
    let image = parts.next()?;
    k.parse::<usize>().ok()?;
    let milli = t.strip_prefix('t')?.parse::<u32>().ok()?;
    (milli <= 1000 && !image.is_empty()).then_some((image, milli))
}

/// Candidates for one image at threshold `milli / 1000`.
pub fn image_candidates(
    prob: &ProbRaster,
    image_id: &str,
    params: &CandidateParams,
    milli: u32,
) -> Result<Vec<CandidateShape>> {
    let p = CandidateParams {
        threshold: milli as f64 / 1000.0,
        ..*params
    };
    Ok(extract_candidates(prob, &candidate_source(image_id, milli), &p)?)
}

// ---- synth -------------------------------------------------------------

/// Writes `count` scenes plus `imagery.json` and a combined `sites.geojson`
/// (each site tagged with its `image_id`). Returns the scene ids.
pub fn synth_to_dir(out: &Path, count: usize, seed: u64, template: &SceneSpec) -> Result<Vec<String>> {
    create_dir(out)?;
    let scenes = generate_series(&scene_series(count, template, seed))?;
    let written: Vec<Result<()>> = par::map(&scenes, |s| Ok(write_scene(out, s, None)?));
    written.into_iter().collect::<Result<()>>()?;
    let manifest = ImageryManifest {
        entries: scenes
            .iter()
            .map(|s| {
                let (x0, y0, x1, y1) = s.image.transform().extent(s.image.width(), s.image.height());
                ImageryEntry {
                    file: PathBuf::from(format!("{}.png", s.id)),
                    extent: [x0, y0, x1, y1],
                }
            })
            .collect(),
    };
    manifest.save(&out.join("imagery.json"))?;
    let features = scenes
        .iter()
        .flat_map(|s| {
            s.sites.iter().map(move |site| {
                let mut f = site.to_feature();
                if let Some(p) = f.properties.as_mut() {
                    p.insert("image_id".into(), s.id.clone().into());
                }
                f
            })
        })
        .collect();
    write_feature_collection(&out.join("sites.geojson"), features, None)?;
    Ok(scenes.iter().map(|s| s.id.clone()).collect())
}

// ---- curate ------------------------------------------------------------

pub fn load_sites(path: &Path) -> Result<Vec<SiteRecord>> {
    let (features, _) = read_feature_collection(path)?;
    Ok(sites_from_features(&features)?)
}

pub fn load_negatives(path: Option<&Path>) -> Result<Vec<NegativeRegion>> {
    match path {
        None => Ok(Vec::new()),
        Some(p) => {
            let (features, _) = read_feature_collection(p)?;
            Ok(negatives_from_features(&features)?)
        }
    }
}

/// Curates a catalog; writes `curation.json` and `kept.geojson` into `out`.
pub fn curate_to_dir(
    sites: &Path,
    negatives: Option<&Path>,
    params: &CurationParams,
    reference_total: Option<usize>,
    out: &Path,
) -> Result<CurationReport> {
    let all = load_sites(sites)?;
    let negs = load_negatives(negatives)?;
    let curation = curate(&all, params);
    let report = CurationReport::new(&curation, negs.len(), reference_total);
    create_dir(out)?;
    write_json(&out.join("curation.json"), &report)?;
    write_sites(&out.join("kept.geojson"), &curation.kept)?;
    Ok(report)
}

// ---- tile --------------------------------------------------------------

/// A tile together with its split and the ground-truth sites it contains.
pub struct BuiltTile {
    pub tile: Tile,
    pub split: Split,
    pub gt: Vec<GtSite>,
}

fn window_bbox(center: Point, side_m: f64) -> BBox {
    let h = side_m / 2.0;
    BBox {
        min_x: center.x - h,
        min_y: center.y - h,
        max_x: center.x + h,
        max_y: center.y + h,
    }
}

/// Windows of `window_m` centered on every kept site and negative region,
/// masks burned from the kept sites, stratified split assignment.
pub fn build_catalog_tiles(
    manifest: &ImageryManifest,
    kept: &[SiteRecord],
    negatives: &[NegativeRegion],
    tiles: &TileParams,
    split: &SplitParams,
    seed: u64,
) -> Result<Vec<BuiltTile>> {
    for id in kept.iter().map(|s| &s.id).chain(negatives.iter().map(|n| &n.id)) {
        check_id("site", id)?;
    }
    let site_ids: Vec<String> = kept.iter().map(|s| s.id.clone()).collect();
    let neg_ids: Vec<String> = negatives.iter().map(|n| n.id.clone()).collect();
    let splits = make_splits(&site_ids, &neg_ids, split.test_frac, split.val_frac_of_train, seed)?;
    let centers: Vec<(String, Point)> = kept
        .iter()
        .map(|s| (s.id.clone(), s.shape.centroid()))
        .chain(negatives.iter().map(|n| (n.id.clone(), n.shape.centroid())))
        .collect();
    let built: Vec<Result<BuiltTile>> = par::map_range(centers.len(), |i| {
        let (id, center) = &centers[i];
        let image = manifest.extract(*center, tiles.window_m, tiles.ppm, tiles.pad)?;
        let window = window_bbox(*center, tiles.window_m);
        let inside: Vec<&SiteRecord> = kept.iter().filter(|s| s.shape.bbox().intersects(&window)).collect();
        let shapes: Vec<Polygon> = inside.iter().map(|s| s.shape.clone()).collect();
        let mut tile = Tile::from_shapes(id.clone(), image, &shapes);
        if tiles.downscale {
            tile = downscale_half(&tile)?;
        }
        let gt = inside
            .iter()
            .map(|s| GtSite {
                id: s.id.clone(),
                image_id: id.clone(),
                shape: s.shape.clone(),
            })
            .collect();
        Ok(BuiltTile {
            tile,
            split: splits[i].split,
            gt,
        })
    });
    built.into_iter().collect()
}

/// Tiles a curated catalog into `out` (PNG pairs plus sidecars).
pub fn tile_to_dir(
    imagery: &Path,
    kept: &Path,
    negatives: Option<&Path>,
    tiles: &TileParams,
    split: &SplitParams,
    seed: u64,
    out: &Path,
) -> Result<usize> {
    let manifest = ImageryManifest::load(imagery)?;
    let sites = load_sites(kept)?;
    let negs = load_negatives(negatives)?;
    let built = build_catalog_tiles(&manifest, &sites, &negs, tiles, split, seed)?;
    create_dir(out)?;
    for b in &built {
        write_tile(out, &b.tile.source_id, &b.tile, Some(b.split))?;
    }
    Ok(built.len())
}

/// Every tile in `dir` with its recorded split (unsplit tiles count as train).
pub fn read_tile_dir(dir: &Path) -> Result<Vec<(String, Tile, Split)>> {
    list_tiles(dir)?
        .into_iter()
        .map(|stem| {
            let (tile, side) = read_tile(dir, &stem)?;
            Ok((stem, tile, side.split.unwrap_or(Split::Train)))
        })
        .collect()
}

// ---- train / predict ---------------------------------------------------

pub fn train_from_dir(tiles: &Path, spec: &SegmenterSpec, out: &Path) -> Result<BaselineModel> {
    let all = read_tile_dir(tiles)?;
    let pick = |want: Split| -> Vec<Tile> {
        all.iter().filter(|(_, _, s)| *s == want).map(|(_, t, _)| t.clone()).collect()
    };
    let model = train_baseline(&pick(Split::Train), &pick(Split::Val), spec)?;
    model.save(out)?;
    Ok(model)
}

/// Loads a segmenter: a baseline checkpoint file, or a directory of
/// external probability rasters.
pub fn load_segmenter(path: &Path) -> Result<Box<dyn Segmenter>> {
    if path.is_dir() {
        Ok(Box::new(ExternalRasterSource::new(path)))
    } else if path.exists() {
        Ok(Box::new(BaselineModel::load(path)?))
    } else {
        Err(PipelineError::MissingInput(path.to_path_buf()))
    }
}

/// Images to predict: every tile of a tile directory, or every entry of an
/// imagery manifest.
pub fn load_images(tiles: Option<&Path>, manifest: Option<&Path>) -> Result<Vec<(String, Raster<Rgb>)>> {
    match (tiles, manifest) {
        (Some(dir), None) => Ok(read_tile_dir(dir)?.into_iter().map(|(s, t, _)| (s, t.image)).collect()),
        (None, Some(m)) => {
            let manifest = ImageryManifest::load(m)?;
            manifest
                .entries
                .iter()
                .map(|e| {
                    let id = e
                        .file
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .ok_or_else(|| PipelineError::Config(format!("bad image path {}", e.file.display())))?
                        .to_owned();
                    Ok((id, read_rgb_png(&e.file)?))
                })
                .collect()
        }
        _ => Err(PipelineError::Config("give exactly one of --tiles or --manifest".into())),
    }
}

pub fn predict_to_dir(segmenter: &dyn Segmenter, images: &[(String, Raster<Rgb>)], out: &Path) -> Result<usize> {
    create_dir(out)?;
    let done: Vec<Result<()>> = par::map(images, |(id, img)| {
        check_id("image", id)?;
        let p = segmenter.predict(id, img)?;
        write_prob_raster(&out.join(id), &p)?;
        Ok(())
    });
    done.into_iter().collect::<Result<()>>()?;
    Ok(images.len())
}

/// Stems of every `.f32` raster in `dir`, sorted.
pub fn list_preds(dir: &Path) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))? {
        let p = e.map_err(|e| PipelineError::io(dir, e))?.path();
        if p.extension().and_then(|x| x.to_str()) == Some("f32") {
            if let Some(s) = p.file_stem().and_then(|s| s.to_str()) {
                ids.push(s.to_owned());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

// ---- vectorize / evaluate ----------------------------------------------

pub fn candidate_feature(c: &CandidateShape, image_id: &str) -> geojson::Feature {
    let mut props = geojson::JsonObject::new();
    props.insert("id".into(), c.id.clone().into());
    props.insert("image_id".into(), image_id.into());
    props.insert("peak_prob".into(), c.peak_prob.into());
    props.insert("mean_prob".into(), c.mean_prob.into());
    props.insert("area_m2".into(), c.area_m2.into());
    polygon_feature(&c.shape, props)
}

/// Candidates of every raster in `preds`, per image, in id order.
pub fn candidates_for_dir(preds: &Path, params: &CandidateParams) -> Result<Vec<(String, Vec<CandidateShape>)>> {
    let milli = threshold_milli(params.threshold)?;
    let ids = list_preds(preds)?;
    let out: Vec<Result<(String, Vec<CandidateShape>)>> = par::map(&ids, |id| {
        let prob = read_prob_raster(&preds.join(id))?;
        Ok((id.clone(), image_candidates(&prob, id, params, milli)?))
    });
    out.into_iter().collect()
}

/// Ground truth re-keyed to prediction ids. A site belongs to every raster
/// whose id equals its `image_id` or whose footprint it overlaps, so tile-level
/// predictions score against scene-level ground truth.
pub fn gt_for_preds(preds: &Path, gt: &[GtSite]) -> Result<Vec<GtSite>> {
    let ids = list_preds(preds)?;
    let footprints: Vec<Result<Polygon>> = par::map(&ids, |id| {
        let prob = read_prob_raster(&preds.join(id))?;
        let (x0, y0, x1, y1) = prob.transform().extent(prob.width(), prob.height());
        Ok(Polygon::rect(x0, y0, x1, y1).map_err(moundline::mosaic::MosaicError::from)?)
    });
    let mut out = Vec::new();
    for (id, fp) in ids.iter().zip(footprints) {
        let fp = fp?;
        let bb = fp.bbox();
        for s in gt {
            let hit = s.image_id == *id
                || (s.shape.bbox().intersects(&bb) && intersection_area(&s.shape, &fp) > 0.0);
            if hit {
                out.push(GtSite { image_id: id.clone(), ..s.clone() });
            }
        }
    }
    Ok(out)
}

pub fn vectorize_to_file(preds: &Path, params: &CandidateParams, out: &Path) -> Result<usize> {
    let per_image = candidates_for_dir(preds, params)?;
    let features: Vec<geojson::Feature> = per_image
        .iter()
        .flat_map(|(id, cs)| cs.iter().map(move |c| candidate_feature(c, id)))
        .collect();
    let n = features.len();
    write_feature_collection(out, features, None)?;
    Ok(n)
}

/// Scores candidates against ground truth, one outcome per image.
pub fn detection_report(
    run_id: &str,
    images: &[(String, Vec<CandidateShape>)],
    gt: &[GtSite],
    threshold: f64,
    min_intersection_m2: f64,
) -> DetectionReport {
    let det: Vec<DetectionImage> = images
        .iter()
        .map(|(id, cands)| DetectionImage {
            image_id: id.clone(),
            gt_sites: gt
                .iter()
                .filter(|s| s.image_id == *id)
                .map(|s| (s.id.clone(), s.shape.clone()))
                .collect(),
            candidates: cands.clone(),
        })
        .collect();
    let outcomes = detect_outcomes(&det, min_intersection_m2);
    let counts = ConfusionCounts::from_outcomes(&outcomes);
    DetectionReport {
        v: 1,
        run_id: run_id.to_owned(),
        threshold,
        min_intersection_m2,
        counts,
        metrics: metrics(&counts),
        outcomes,
    }
}

/// Automatic and ledger-adjusted counts.
pub fn evaluate_counts(
    counts: ConfusionCounts,
    ledger: &[AdjustmentRecord],
) -> Result<(ConfusionCounts, ConfusionCounts)> {
    Ok((counts, apply_adjustments(&counts, ledger)?))
}

pub fn read_ledger(path: &Path) -> Result<Vec<AdjustmentRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| PipelineError::Config(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

// ---- mosaic ------------------------------------------------------------

/// Sweeps `sweep` over the imagery, predicts each window and stitches the
/// result. Windows leaving the imagery are zero-padded.
pub fn mosaic_region(
    manifest: &ImageryManifest,
    segmenter: &dyn Segmenter,
    sweep: &RegionSweep,
    weighting: Weighting,
) -> Result<ProbRaster> {
    let windows = plan_sweep(sweep)?;
    let region = sweep.transform().map_err(moundline::mosaic::MosaicError::from)?;
    let (w, h) = sweep.grid_size();
    let side_m = sweep.tile_side as f64 / sweep.ppm;
    let preds: Vec<Result<ProbRaster>> = par::map(&windows, |win| {
        let t = sweep.window_transform(win).map_err(moundline::mosaic::MosaicError::from)?;
        let (cx, cy) = t.pixel_to_world(win.side as f64 / 2.0, win.side as f64 / 2.0);
        let image = manifest.extract(Point::new(cx, cy), side_m, sweep.ppm, PadPolicy::ZeroPad)?;
        let id = format!("sweep_{}_{}", win.col, win.row);
        Ok(segmenter.predict(&id, &image)?)
    });
    let preds = preds.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(stitch(&preds, region, w, h, weighting)?)
}

/// Union of prediction extents, stitched; falls back to the first raster
/// when the union would exceed `max_cells`.
pub fn stitch_predictions(preds: &[ProbRaster], weighting: Weighting, max_cells: usize) -> Result<Option<ProbRaster>> {
    let Some(first) = preds.first() else {
        return Ok(None);
    };
    let boxes: Vec<Polygon> = preds
        .iter()
        .map(|p| {
            let (x0, y0, x1, y1) = p.transform().extent(p.width(), p.height());
            Polygon::rect(x0, y0, x1, y1)
        })
        .collect::<Result<_, _>>()
        .map_err(moundline::mosaic::MosaicError::from)?;
    let bb = union_bbox(&boxes).expect("non-empty");
    let t0 = first.transform();
    let w = (bb.width() / t0.pixel_w()).round() as usize;
    let h = (bb.height() / t0.pixel_h()).round() as usize;
    if w * h > max_cells {
        return Ok(Some(stitch(std::slice::from_ref(first), *t0, first.width(), first.height(), weighting)?));
    }
    let region = GeoTransform::new(bb.min_x, bb.max_y, t0.pixel_w(), t0.pixel_h())
        .map_err(moundline::mosaic::MosaicError::from)?;
    Ok(Some(stitch(preds, region, w, h, weighting)?))
}

// ---- full run ----------------------------------------------------------

/// Test image with ground truth.
struct EvalImage {
    id: String,
    image: Raster<Rgb>,
    gt: Vec<GtSite>,
}

struct Prepared {
    train: Vec<Tile>,
    val: Vec<Tile>,
    test: Vec<EvalImage>,
    known: Vec<SiteRecord>,
}

fn prepare(config: &RunConfig, run_dir: &Path) -> Result<Prepared> {
    match &config.inputs {
        Inputs::Synth { scenes, train, template } => {
            let specs = scene_series(*scenes, template, config.seed);
            let generated = generate_series(&specs)?;
            let mut out = Prepared { train: Vec::new(), val: Vec::new(), test: Vec::new(), known: Vec::new() };
            for (i, s) in generated.into_iter().enumerate() {
                let shapes: Vec<Polygon> = s.sites.iter().map(|x| x.shape.clone()).collect();
                if i < *train {
                    out.train.push(Tile::from_shapes(s.id.clone(), s.image, &shapes));
                } else {
                    out.test.push(EvalImage {
                        gt: s
                            .sites
                            .iter()
                            .map(|x| GtSite { id: x.id.clone(), image_id: s.id.clone(), shape: x.shape.clone() })
                            .collect(),
                        id: s.id,
                        image: s.image,
                    });
                    out.known.extend(s.sites);
                }
            }
            Ok(out)
        }
        Inputs::Tiles { dir } => {
            let mut out = Prepared { train: Vec::new(), val: Vec::new(), test: Vec::new(), known: Vec::new() };
            for (stem, tile, split) in read_tile_dir(dir)? {
                match split {
                    Split::Train => out.train.push(tile),
                    Split::Val => out.val.push(tile),
                    Split::Test => {
                        let gt: Vec<GtSite> = polygonize(&tile.mask, tile.mask.transform())
                            .into_iter()
                            .enumerate()
                            .map(|(k, shape)| GtSite { id: format!("{stem}-gt{k}"), image_id: stem.clone(), shape })
                            .collect();
                        out.test.push(EvalImage { id: stem, image: tile.image, gt });
                    }
                }
            }
            Ok(out)
        }
        Inputs::Catalog { imagery, sites, negatives, reference_total_images } => {
            let all = load_sites(sites)?;
            let negs = load_negatives(negatives.as_deref())?;
            let curation = curate(&all, &config.curation);
            write_json(
                &run_dir.join("curation.json"),
                &CurationReport::new(&curation, negs.len(), *reference_total_images),
            )?;
            let manifest = ImageryManifest::load(imagery)?;
            let built = build_catalog_tiles(
                &manifest,
                &curation.kept,
                &negs,
                &config.tiles,
                &config.split,
                config.seed,
            )?;
            let mut out = Prepared { train: Vec::new(), val: Vec::new(), test: Vec::new(), known: all };
            for b in built {
                match b.split {
                    Split::Train => out.train.push(b.tile),
                    Split::Val => out.val.push(b.tile),
                    Split::Test => out.test.push(EvalImage { id: b.tile.source_id.clone(), image: b.tile.image, gt: b.gt }),
                }
            }
            Ok(out)
        }
    }
}

/// Largest heatmap rendered for a run, in cells.
pub const MAX_HEATMAP_CELLS: usize = 16 << 20;

/// Runs the whole chain into `<store>/<id>/`: train (or load external
/// rasters), predict every test image, vectorize at the configured
/// threshold, evaluate, and render the heatmap.
pub fn execute_run(store: &RunStore, config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    let paths = store.paths(&config.id)?;
    if paths.dir.exists() {
        std::fs::remove_dir_all(&paths.dir).map_err(|e| PipelineError::io(&paths.dir, e))?;
    }
    let mut record = RunRecord {
        v: 1,
        id: config.id.clone(),
        status: RunStatus::Created,
        config: config.clone(),
        images: Vec::new(),
        error: None,
    };
    store.save(&record)?;
    match run_stages(config, &paths.dir) {
        Ok(images) => {
            record.status = RunStatus::Complete;
            record.images = images;
            store.save(&record)?;
            Ok(record)
        }
        Err(e) => {
            record.status = RunStatus::Failed;
            record.error = Some(e.to_string());
            store.save(&record)?;
            Err(e)
        }
    }
}

fn run_stages(config: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let paths = crate::store::RunPaths { dir: dir.to_path_buf() };
    let prepared = prepare(config, dir)?;
    for img in &prepared.test {
        check_id("image", &img.id)?;
    }
    let segmenter: Box<dyn Segmenter> = match config.segmenter.kind {
        SegmenterKind::Baseline => {
            let model = train_baseline(&prepared.train, &prepared.val, &config.segmenter)?;
            model.save(&paths.model())?;
            Box::new(model)
        }
        SegmenterKind::ExternalRaster => Box::new(ExternalRasterSource::new(
            config.external_rasters.clone().expect("validated"),
        )),
    };
    create_dir(&paths.preds())?;
    let milli = threshold_milli(config.postproc.threshold)?;
    let results: Vec<Result<(ProbRaster, Vec<CandidateShape>)>> = par::map(&prepared.test, |img| {
        let prob = segmenter.predict(&img.id, &img.image)?;
        write_prob_raster(&paths.pred(&img.id), &prob)?;
        let cands = image_candidates(&prob, &img.id, &config.postproc, milli)?;
        Ok((prob, cands))
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let gt: Vec<GtSite> = prepared.test.iter().flat_map(|i| i.gt.iter().cloned()).collect();
    write_gt(&paths.gt(), &gt)?;
    let mut known = prepared.known.clone();
    if let Some(extra) = &config.known_sites {
        known.extend(load_sites(extra)?);
    }
    write_sites(&paths.known_sites(), &known)?;
    let per_image: Vec<(String, Vec<CandidateShape>)> = prepared
        .test
        .iter()
        .zip(&results)
        .map(|(img, (_, c))| (img.id.clone(), c.clone()))
        .collect();
    let report = detection_report(
        &config.id,
        &per_image,
        &gt,
        milli as f64 / 1000.0,
        config.evaluation.min_intersection_m2,
    );
    write_json(&paths.report(), &report)?;
    let preds: Vec<ProbRaster> = results.into_iter().map(|(p, _)| p).collect();
    if let Some(mosaic) = stitch_predictions(&preds, config.sweep.weighting, MAX_HEATMAP_CELLS)? {
        write_heatmap(&paths.heatmap(), &mosaic, config.sweep.ramp)?;
    }
    Ok(prepared.test.into_iter().map(|i| i.id).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn candidate_ids_round_trip() {
        let src = candidate_source("scene_004", threshold_milli(0.5).unwrap());
        assert_eq!(src, "scene_004/t500");
        assert_eq!(parse_candidate_id(&format!("{src}/3")), Some(("scene_004", 500)));
        assert_eq!(parse_candidate_id("a/b/t300/0"), Some(("a/b", 300)));
        for bad in ["scene/t500", "scene/500/1", "scene/t500/x", "/t500/1", "s/t1001/0"] {
            assert_eq!(parse_candidate_id(bad), None, "{bad}");
        }
        assert!(threshold_milli(1.2).is_err());
        assert_eq!(threshold_milli(0.3004).unwrap(), 300);
    }

    #[test]
    fn stitched_predictions_cover_their_union() {
        let t = |x: f64| GeoTransform::new(x, 100.0, 1.0, 1.0).unwrap();
        let a = Raster::filled(10, 10, 0.2f32, t(0.0));
        let b = Raster::filled(10, 10, 0.6f32, t(20.0));
        let m = stitch_predictions(&[a.clone(), b], Weighting::Uniform, 1 << 20).unwrap().unwrap();
        assert_eq!((m.width(), m.height()), (30, 10));
        assert_eq!(m.get(0, 0), 0.2);
        assert_eq!(m.get(15, 0), moundline::mosaic::NODATA);
        assert_eq!(m.get(29, 9), 0.6);
        let capped = stitch_predictions(&[a, Raster::filled(10, 10, 0.6f32, t(20.0))], Weighting::Uniform, 100)
            .unwrap()
            .unwrap();
        assert_eq!((capped.width(), capped.height()), (10, 10));
        assert!(stitch_predictions(&[], Weighting::Uniform, 10).unwrap().is_none());
    }

    #[test]
    fn ledger_lines_parse() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.jsonl");
        std::fs::write(&p, "{\"kind\":\"append\",\"to\":\"TN\",\"count\":3,\"reason\":\"other\"}\n\n").unwrap();
        let l = read_ledger(&p).unwrap();
        assert_eq!(l.len(), 1);
        let (a, b) = evaluate_counts(ConfusionCounts::new(1, 1, 1, 1), &l).unwrap();
        assert_eq!((a.tn, b.tn), (1, 4));
        std::fs::write(&p, "{\"kind\":\"nope\"}\n").unwrap();
        assert!(read_ledger(&p).unwrap_err().is_validation());
    }
}
