//! Each hot path runs on a one-thread pool ("sequential") and on the
//! default pool ("parallel").

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use moundline::catalog::{curate, CurationParams, SiteRecord};
use moundline::geo::{GeoTransform, Polygon, ProbRaster, Raster};
use moundline::model::{compute_features, BaselineModel, SegmenterSpec};
use moundline::mosaic::{stitch, Weighting};
use moundline::postproc::{extract_candidates, gaussian_blur, polygonize, CandidateParams};
use moundline::synth::{generate_scene, SceneSpec};
use moundline::tiles::rasterize_mask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::ThreadPool;

fn pools() -> [(&'static str, ThreadPool); 2] {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    [("sequential", one), ("parallel", all)]
}

fn prob_raster(side: usize, seed: u64) -> ProbRaster {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = GeoTransform::new(0.0, side as f64, 1.0, 1.0).unwrap();
    Raster::from_fn(side, side, t, |_, _| rng.random::<f32>())
}

fn bench_raster_ops(c: &mut Criterion) {
    let prob = prob_raster(512, 1);
    let scene = generate_scene("bench", &SceneSpec { n_mounds: 8, ..SceneSpec::default() }).unwrap();
    let shapes: Vec<Polygon> = scene.sites.iter().map(|s| s.shape.clone()).collect();
    let mask = rasterize_mask(&shapes, *scene.image.transform(), 384, 384);
    let model = BaselineModel::zeros(SegmenterSpec::default());
    let mut g = c.benchmark_group("raster");
    g.sample_size(20);
    for (name, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("gaussian_blur_512", name), &prob, |b, p| {
            b.iter(|| pool.install(|| gaussian_blur(p, 2.0)))
        });
        g.bench_with_input(BenchmarkId::new("features_384", name), &scene.image, |b, img| {
            b.iter(|| pool.install(|| compute_features(img, &[1, 3, 7, 15])))
        });
        g.bench_with_input(BenchmarkId::new("predict_384", name), &scene.image, |b, img| {
            b.iter(|| pool.install(|| model.predict_image(img)))
        });
        g.bench_with_input(BenchmarkId::new("rasterize_mask_384", name), &shapes, |b, s| {
            b.iter(|| pool.install(|| rasterize_mask(s, *scene.image.transform(), 384, 384)))
        });
        g.bench_with_input(BenchmarkId::new("polygonize_384", name), &mask, |b, m| {
            b.iter(|| pool.install(|| polygonize(m, m.transform())))
        });
        g.bench_with_input(BenchmarkId::new("extract_candidates_512", name), &prob, |b, p| {
            b.iter(|| pool.install(|| extract_candidates(p, "bench", &CandidateParams::default()).unwrap()))
        });
    }
    g.finish();
}

fn bench_stitch_and_curate(c: &mut Criterion) {
    let tiles: Vec<ProbRaster> = (0..16)
        .map(|k| {
            let (col, row) = ((k % 4) * 128, (k / 4) * 128);
            let t = GeoTransform::new(col as f64, -(row as f64), 1.0, 1.0).unwrap();
            prob_raster(256, k as u64).with_transform(t)
        })
        .collect();
    let region = GeoTransform::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sites: Vec<SiteRecord> = (0..5000)
        .map(|i| {
            let (x, y) = (rng.random_range(0.0..1e5), rng.random_range(0.0..1e5));
            let s = rng.random_range(10.0..300.0);
            SiteRecord::new(format!("s{i}"), Polygon::rect(x, y, x + s, y + s * 0.8).unwrap())
                .destroyed(rng.random_bool(0.05))
        })
        .collect();
    let mut g = c.benchmark_group("region");
    g.sample_size(20);
    for (name, pool) in pools() {
        g.bench_with_input(BenchmarkId::new("stitch_16x256", name), &tiles, |b, t| {
            b.iter(|| pool.install(|| stitch(t, region, 640, 640, Weighting::Uniform).unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("curate_5000", name), &sites, |b, s| {
            b.iter(|| pool.install(|| curate(s, &CurationParams::default())))
        });
    }
    g.finish();
}

criterion_group!(benches, bench_raster_ops, bench_stitch_and_curate);
criterion_main!(benches);
