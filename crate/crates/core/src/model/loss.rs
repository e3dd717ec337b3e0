//! Pixel losses and their gradients with respect to the logit.

use serde::{Deserialize, Serialize};

use crate::geo::{ProbRaster, Raster};

use super::ModelError;

/// Probabilities are clamped to `[EPS, 1 − EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Focal,
    Dice,
}

/// `−α_t (1 − p_t)^γ ln p_t` with `p_t = p` for positives and `1 − p`
/// otherwise.
pub fn focal_loss(p: f64, y: bool, gamma: f64, alpha: f64) -> f64 {
    let p = p.clamp(EPS, 1.0 - EPS);
    let (pt, at) = if y { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

/// d focal / d z for `p = σ(z)`. Zero where the clamp is active.
pub fn focal_grad_logit(p: f64, y: bool, gamma: f64, alpha: f64) -> f64 {
    if !(EPS..=1.0 - EPS).contains(&p) {
        return 0.0;
    }
    let (pt, at, s) = if y { (p, alpha, 1.0) } else { (1.0 - p, 1.0 - alpha, -1.0) };
    let q = 1.0 - pt;
    // dp_t/dz = s·p_t·(1 − p_t)
    let dl_dpt = if gamma == 0.0 {
        -at / pt
    } else {
        at * gamma * q.powf(gamma - 1.0) * pt.ln() - at * q.powf(gamma) / pt
    };
    dl_dpt * s * pt * q
}

/// Soft Dice over paired samples, smoothing 1.
pub fn dice_from_pairs(p: &[f64], y: &[bool]) -> f64 {
    let (num, den) = dice_terms(p, y);
    1.0 - num / den
}

fn dice_terms(p: &[f64], y: &[bool]) -> (f64, f64) {
    let (mut py, mut sp, mut sy) = (0.0, 0.0, 0.0);
    for (&p, &y) in p.iter().zip(y) {
        let y = f64::from(u8::from(y));
        py += p * y;
        sp += p;
        sy += y;
    }
    (2.0 * py + 1.0, sp + sy + 1.0)
}

/// d dice / d p_i for every sample.
pub fn dice_grad_probs(p: &[f64], y: &[bool]) -> Vec<f64> {
    let (num, den) = dice_terms(p, y);
    y.iter()
        .map(|&y| -(2.0 * f64::from(u8::from(y)) * den - num) / (den * den))
        .collect()
}

/// Soft Dice loss between a probability raster and a binary mask; nodata
/// cells are ignored.
pub fn dice_loss(pred: &ProbRaster, target: &Raster<u8>) -> Result<f64, ModelError> {
    if !pred.same_shape(target) {
        return Err(ModelError::DimensionMismatch {
            expected: (target.width(), target.height()),
            actual: (pred.width(), pred.height()),
        });
    }
    let (p, y): (Vec<f64>, Vec<bool>) = pred
        .values()
        .iter()
        .zip(target.values())
        .filter(|(&p, _)| !pred.is_nodata(p))
        .map(|(&p, &t)| (p as f64, t > 0))
        .unzip();
    Ok(dice_from_pairs(&p, &y))
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GeoTransform;
    use proptest::prelude::*;

    #[test]
    fn focal_scalar_value() {
        let v = focal_loss(0.5, true, 2.0, 0.25);
        assert!((v - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-15);
        assert!((v - 0.043322).abs() < 5e-7);
        assert!(focal_loss(1.0, true, 2.0, 0.25) < 1e-12);
        assert!(focal_loss(0.0, false, 2.0, 0.25) < 1e-12);
    }

    #[test]
    fn dice_limits() {
        let t = GeoTransform::new(0.0, 4.0, 1.0, 1.0).unwrap();
        let ones = Raster::filled(4, 4, 1u8, t);
        let pred = Raster::filled(4, 4, 1.0f32, t);
        assert!(dice_loss(&pred, &ones).unwrap().abs() < 1e-15);
        let zero = Raster::filled(4, 4, 0.0f32, t);
        assert!((dice_loss(&zero, &ones).unwrap() - (1.0 - 1.0 / 17.0)).abs() < 1e-15);
        let small = Raster::filled(2, 2, 0.0f32, t);
        assert!(matches!(dice_loss(&small, &ones), Err(ModelError::DimensionMismatch { .. })));
    }

    proptest! {
        #[test]
        fn focal_reduces_to_half_bce(p in 1e-6f64..(1.0 - 1e-6), y in any::<bool>()) {
            let bce = if y { -p.ln() } else { -(1.0 - p).ln() };
            prop_assert!((focal_loss(p, y, 0.0, 0.5) - 0.5 * bce).abs() < 1e-12);
        }

        #[test]
        fn focal_nonnegative_and_monotone(a in 0.0f64..1.0, b in 0.0f64..1.0, gamma in 0.0f64..5.0, alpha in 0.01f64..0.99) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(focal_loss(lo, true, gamma, alpha) >= 0.0);
            prop_assert!(focal_loss(hi, true, gamma, alpha) <= focal_loss(lo, true, gamma, alpha));
            prop_assert!(focal_loss(1.0 - hi, false, gamma, alpha) <= focal_loss(1.0 - lo, false, gamma, alpha));
        }

        #[test]
        fn sigmoid_bounded(z in -800.0f64..800.0) {
            let s = sigmoid(z);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert!((sigmoid(-z) - (1.0 - s)).abs() < 1e-15);
        }
    }
}
