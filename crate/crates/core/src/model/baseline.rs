//! Logistic pixel classifier over standardized window features, trained by
//! mini-batch gradient descent on focal or Dice loss.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{compute_features, feature_count, FeatureMap};
use super::loss::{dice_from_pairs, dice_grad_probs, focal_grad_logit, focal_loss, sigmoid, LossKind};
use super::{ModelError, SegmenterKind, SegmenterSpec};
use crate::formats::FormatError;
use crate::geo::{ProbRaster, Raster, Rgb};
use crate::tiles::{augment, random_crop, AugSpec, Tile};
use crate::{par, seeds};

const EVAL_STREAM: u64 = u64::MAX;

/// The loss a batch is scored with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: LossKind,
    pub gamma: f64,
    pub alpha: f64,
}

impl From<&SegmenterSpec> for Objective {
    fn from(s: &SegmenterSpec) -> Self {
        Self {
            kind: s.loss,
            gamma: s.focal_gamma,
            alpha: s.focal_alpha,
        }
    }
}

/// Standardized feature rows (`n` per sample) with labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub x: Vec<f64>,
    pub y: Vec<bool>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Loss of `batch` under `params` (weights then bias) and its gradient.
pub fn batch_loss_and_grad(obj: &Objective, batch: &Batch, params: &[f64]) -> (f64, Vec<f64>) {
    let n = batch.n;
    assert_eq!(params.len(), n + 1, "one weight per feature plus bias");
    let m = batch.len();
    let mut grad = vec![0.0; n + 1];
    if m == 0 {
        return (0.0, grad);
    }
    let probs: Vec<f64> = (0..m)
        .map(|i| {
            let row = &batch.x[i * n..(i + 1) * n];
            sigmoid(params[n] + row.iter().zip(params).map(|(x, w)| x * w).sum::<f64>())
        })
        .collect();
    let (loss, dz): (f64, Vec<f64>) = match obj.kind {
        LossKind::Focal => {
            let inv = 1.0 / m as f64;
            let loss = probs
                .iter()
                .zip(&batch.y)
                .map(|(&p, &y)| focal_loss(p, y, obj.gamma, obj.alpha))
                .sum::<f64>()
                * inv;
            let dz = probs
                .iter()
                .zip(&batch.y)
                .map(|(&p, &y)| focal_grad_logit(p, y, obj.gamma, obj.alpha) * inv)
                .collect();
            (loss, dz)
        }
        LossKind::Dice => {
            let dp = dice_grad_probs(&probs, &batch.y);
            let dz = dp.iter().zip(&probs).map(|(g, p)| g * p * (1.0 - p)).collect();
            (dice_from_pairs(&probs, &batch.y), dz)
        }
    };
    for (i, d) in dz.iter().enumerate() {
        let row = &batch.x[i * n..(i + 1) * n];
        for (g, x) in grad.iter_mut().zip(row) {
            *g += d * x;
        }
        grad[n] += d;
    }
    (loss, grad)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    /// Loss on a fixed sample of the un-augmented training tiles after each epoch.
    pub train: Vec<f64>,
    /// Same for validation tiles; empty without validation data.
    pub val: Vec<f64>,
}

/// Trained logistic model; serializes as the JSON checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineModel {
    pub spec: SegmenterSpec,
    pub feature_radii: Vec<usize>,
    pub norm_mean: Vec<f64>,
    pub norm_std: Vec<f64>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub history: LossHistory,
}

impl BaselineModel {
    /// Untrained model: zero weights and identity normalization.
    pub fn zeros(spec: SegmenterSpec) -> Self {
        let n = feature_count(&spec.feature_radii);
        Self {
            feature_radii: spec.feature_radii.clone(),
            spec,
            norm_mean: vec![0.0; n],
            norm_std: vec![1.0; n],
            weights: vec![0.0; n],
            bias: 0.0,
            history: LossHistory::default(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }

    fn set_params(&mut self, p: &[f64]) {
        let n = self.weights.len();
        self.weights.copy_from_slice(&p[..n]);
        self.bias = p[n];
    }

    fn standardize(&self, f: &[f32], out: &mut Vec<f64>) {
        for ((&v, m), s) in f.iter().zip(&self.norm_mean).zip(&self.norm_std) {
            out.push((v as f64 - m) / s);
        }
    }

    /// Per-pixel probability raster on the image grid.
    pub fn predict_image(&self, image: &Raster<Rgb>) -> ProbRaster {
        let fm = compute_features(image, &self.feature_radii);
        let w = image.width();
        let mut values = vec![0f32; image.len()];
        par::for_each_row(&mut values, w.max(1), |y, row| {
            for (x, out) in row.iter_mut().enumerate() {
                let f = fm.pixel(y * w + x);
                let mut z = self.bias;
                for (k, &v) in f.iter().enumerate() {
                    z += self.weights[k] * (v as f64 - self.norm_mean[k]) / self.norm_std[k];
                }
                *out = sigmoid(z) as f32;
            }
        });
        Raster::new(image.width(), image.height(), values, *image.transform()).expect("same shape")
    }

    pub fn save(&self, path: &Path) -> Result<(), FormatError> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| FormatError::json(path, e))?;
        std::fs::write(path, json).map_err(|e| FormatError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, FormatError> {
        let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
        let m: Self = serde_json::from_slice(&bytes).map_err(|e| FormatError::json(path, e))?;
        let n = feature_count(&m.feature_radii);
        if m.weights.len() != n || m.norm_mean.len() != n || m.norm_std.len() != n {
            return Err(FormatError::invalid(path, "parameter count does not match feature_radii"));
        }
        Ok(m)
    }

    fn batch_from(&self, fm: &FeatureMap, mask: &Raster<u8>, idx: &[usize]) -> Batch {
        let mut x = Vec::with_capacity(idx.len() * fm.n);
        for &i in idx {
            self.standardize(fm.pixel(i), &mut x);
        }
        Batch {
            n: fm.n,
            x,
            y: idx.iter().map(|&i| mask.values()[i] > 0).collect(),
        }
    }
}

/// Pixel indices for one step: every pixel when `size` is 0, otherwise
/// `size` draws with replacement, split 1:1 between classes if `balance`.
fn sample_pixels(mask: &Raster<u8>, size: usize, balance: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let total = mask.len();
    if size == 0 || total == 0 {
        return (0..total).collect();
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..total).partition(|&i| mask.values()[i] > 0);
    let mut draw = |from: &[usize], k: usize, out: &mut Vec<usize>| {
        for _ in 0..k {
            out.push(from[rng.random_range(0..from.len())]);
        }
    };
    let mut idx = Vec::with_capacity(size);
    if balance && !pos.is_empty() && !neg.is_empty() {
        draw(&pos, size / 2, &mut idx);
        draw(&neg, size - size / 2, &mut idx);
    } else {
        let all: Vec<usize> = (0..total).collect();
        draw(&all, size, &mut idx);
    }
    idx
}

fn mean_loss(obj: &Objective, batches: &[Batch], params: &[f64]) -> f64 {
    let losses = par::map(batches, |b| batch_loss_and_grad(obj, b, params).0);
    losses.iter().sum::<f64>() / losses.len().max(1) as f64
}

/// Fits the baseline on `train`, tracking loss on `train` and `val` after
/// every epoch. Deterministic for a fixed `spec.seed`.
pub fn train_baseline(
    train: &[Tile],
    val: &[Tile],
    spec: &SegmenterSpec,
) -> Result<BaselineModel, ModelError> {
    spec.validate()?;
    if spec.kind != SegmenterKind::Baseline {
        return Err(ModelError::InvalidSpec("train_baseline needs kind = baseline".into()));
    }
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let radii = &spec.feature_radii;
    let n = feature_count(radii);
    let mut model = BaselineModel::zeros(spec.clone());

    // Normalization statistics from the un-augmented training tiles.
    let stats = par::map(train, |t| {
        let fm = compute_features(&t.image, radii);
        let mut s = vec![0.0f64; 2 * n];
        for i in 0..t.mask.len() {
            for (k, &v) in fm.pixel(i).iter().enumerate() {
                s[k] += v as f64;
                s[n + k] += v as f64 * v as f64;
            }
        }
        (s, t.mask.len())
    });
    let mut acc = vec![0.0; 2 * n];
    let mut count = 0usize;
    for (s, c) in &stats {
        acc.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        count += c;
    }
    let count = count.max(1) as f64;
    for k in 0..n {
        let mean = acc[k] / count;
        let var = (acc[n + k] / count - mean * mean).max(0.0);
        model.norm_mean[k] = mean;
        model.norm_std[k] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
    }

    let eval_batches = |tiles: &[Tile], stream: u64| -> Vec<Batch> {
        par::map_range(tiles.len(), |i| {
            let t = &tiles[i];
            let fm = compute_features(&t.image, radii);
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, &[stream, i as u64]));
            let idx = sample_pixels(&t.mask, spec.batch_pixels, spec.balance, &mut rng);
            model.batch_from(&fm, &t.mask, &idx)
        })
    };
    let train_eval = eval_batches(train, EVAL_STREAM);
    let val_eval = eval_batches(val, EVAL_STREAM - 1);

    let obj = Objective::from(spec);
    let mut params = model.params();
    for epoch in 0..spec.epochs {
        let e = epoch as u64;
        let batches: Vec<Result<Batch, ModelError>> = par::map_range(train.len(), |i| {
            let s = seeds::derive(spec.seed, &[e, i as u64]);
            let mut t = match spec.crop_side {
                Some(side) => random_crop(&train[i], side, seeds::derive(s, &[1]))?,
                None => train[i].clone(),
            };
            if spec.augment {
                t = augment(&t, &AugSpec::sample(seeds::derive(s, &[2]), &spec.aug_bounds))?;
            }
            let fm = compute_features(&t.image, radii);
            let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(s, &[3]));
            let idx = sample_pixels(&t.mask, spec.batch_pixels, spec.balance, &mut rng);
            Ok(model.batch_from(&fm, &t.mask, &idx))
        });
        let batches = batches.into_iter().collect::<Result<Vec<_>, _>>()?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seeds::derive(spec.seed, &[e, u64::MAX])));
        for i in order {
            let (_, grad) = batch_loss_and_grad(&obj, &batches[i], &params);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= spec.learning_rate * g;
            }
        }
        model.history.train.push(mean_loss(&obj, &train_eval, &params));
        if !val_eval.is_empty() {
            model.history.val.push(mean_loss(&obj, &val_eval, &params));
        }
    }
    model.set_params(&params);
    Ok(model)
}

/// Largest relative difference between the analytic gradient of the
/// model's loss on pixels of `tile` and central finite differences with
/// step `epsilon`. Magnitudes below 1e-6 are compared absolutely.
pub fn finite_diff_check(model: &BaselineModel, tile: &Tile, epsilon: f64) -> f64 {
    let fm = compute_features(&tile.image, &model.feature_radii);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(model.spec.seed, &[0xfd]));
    let idx = sample_pixels(&tile.mask, 256, true, &mut rng);
    let batch = model.batch_from(&fm, &tile.mask, &idx);
    gradient_error(&Objective::from(&model.spec), &batch, &model.params(), epsilon)
}

pub(crate) fn gradient_error(obj: &Objective, batch: &Batch, params: &[f64], epsilon: f64) -> f64 {
    let (_, analytic) = batch_loss_and_grad(obj, batch, params);
    let mut p = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..p.len() {
        let orig = p[k];
        p[k] = orig + epsilon;
        let up = batch_loss_and_grad(obj, batch, &p).0;
        p[k] = orig - epsilon;
        let down = batch_loss_and_grad(obj, batch, &p).0;
        p[k] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let scale = analytic[k].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[k] - numeric).abs() / scale);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::{GeoTransform, Polygon};

    fn ellipse_tile(seed: u64) -> Tile {
        let t = GeoTransform::new(0.0, 48.0, 1.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cx = rng.random_range(16.0..32.0);
        let cy = rng.random_range(16.0..32.0);
        let inside = |x: f64, y: f64| ((x - cx) / 10.0).powi(2) + ((y - cy) / 7.0).powi(2) <= 1.0;
        let img = Raster::from_fn(48, 48, t, |c, r| {
            let (x, y) = t.pixel_center(c, r);
            let base: u8 = if inside(x, y) { 200 } else { 40 };
            let v = base.saturating_add(rng.random_range(0..10));
            [v, v, v]
        });
        let shape = Polygon::from_coords(
            &(0..32)
                .map(|k| {
                    let a = k as f64 * std::f64::consts::TAU / 32.0;
                    (cx + 10.0 * a.cos(), cy + 7.0 * a.sin())
                })
                .collect::<Vec<_>>(),
        )
        .unwrap();
        Tile::from_shapes(format!("e{seed}"), img, &[shape])
    }

    fn small_spec() -> SegmenterSpec {
        SegmenterSpec {
            feature_radii: vec![1, 3],
            batch_pixels: 512,
            ..SegmenterSpec::default()
        }
    }

    #[test]
    fn zero_model_predicts_half() {
        let tile = ellipse_tile(1);
        let p = BaselineModel::zeros(small_spec()).predict_image(&tile.image);
        assert!(p.values().iter().all(|&v| v == 0.5));
        assert_eq!(p.transform(), tile.image.transform());
    }

    #[test]
    fn separable_scene_is_learned() {
        let train: Vec<Tile> = (0..6).map(ellipse_tile).collect();
        let val = vec![ellipse_tile(100)];
        let m = train_baseline(&train, &val, &small_spec()).unwrap();
        let p = m.predict_image(&val[0].image);
        let correct = p
            .values()
            .iter()
            .zip(val[0].mask.values())
            .filter(|(&p, &y)| (p >= 0.5) == (y > 0))
            .count();
        assert!(correct as f64 / p.len() as f64 >= 0.95, "accuracy {}", correct as f64 / p.len() as f64);
        assert_eq!(m.history.train.len(), 20);
        assert_eq!(m.history.val.len(), 20);
    }

    #[test]
    fn training_is_deterministic() {
        let train: Vec<Tile> = (0..3).map(ellipse_tile).collect();
        let spec = SegmenterSpec { epochs: 3, ..small_spec() };
        let a = train_baseline(&train, &[], &spec).unwrap();
        let b = train_baseline(&train, &[], &spec).unwrap();
        let bits = |m: &BaselineModel| m.history.train.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(train_baseline(&[], &[], &small_spec()), Err(ModelError::EmptyTrainingSet)));
        let spec = SegmenterSpec { epochs: 0, ..small_spec() };
        assert!(matches!(train_baseline(&[ellipse_tile(0)], &[], &spec), Err(ModelError::InvalidSpec(_))));
    }

    #[test]
    fn full_batch_convex_loss_never_increases() {
        let spec = SegmenterSpec {
            focal_gamma: 0.0,
            focal_alpha: 0.5,
            batch_pixels: 0,
            balance: false,
            augment: false,
            learning_rate: 0.2,
            epochs: 30,
            ..small_spec()
        };
        let m = train_baseline(&[ellipse_tile(3)], &[], &spec).unwrap();
        for w in m.history.train.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let tile = ellipse_tile(4);
        let trained = train_baseline(std::slice::from_ref(&tile), &[], &SegmenterSpec { epochs: 2, ..small_spec() }).unwrap();
        assert!(finite_diff_check(&trained, &tile, 1e-5) < 1e-4);
        let mut dice = trained.clone();
        dice.spec.loss = LossKind::Dice;
        assert!(finite_diff_check(&dice, &tile, 1e-5) < 1e-4);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let tile = ellipse_tile(5);
        let m = train_baseline(std::slice::from_ref(&tile), &[], &SegmenterSpec { epochs: 1, ..small_spec() }).unwrap();
        let path = dir.path().join("model.json");
        m.save(&path).unwrap();
        let back = BaselineModel::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.predict_image(&tile.image), m.predict_image(&tile.image));
    }
}
