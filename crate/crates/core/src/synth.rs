//! Seeded synthetic floodplain scenes: smooth background with field
//! boundaries, bright elliptical mounds (the ground truth), dark mound-like
//! clutter and speckle. Written in the same PNG + world file + GeoJSON
//! formats as real imagery.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::SiteRecord;
use crate::formats::{write_feature_collection, write_rgb_png, FormatError};
use crate::geo::{GeoError, GeoTransform, Polygon, Raster, Rgb};
use crate::{par, seeds};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("could not place object {index} without overlap after {attempts} attempts")]
    PlacementFailed { index: usize, attempts: usize },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

const MAX_ATTEMPTS: usize = 1000;
const GT_VERTICES: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    /// Scene size in meters.
    pub extent_m: (f64, f64),
    /// World coordinates of the top-left corner.
    pub origin: (f64, f64),
    pub ppm: f64,
    pub n_mounds: usize,
    /// Semi-major axis range in meters.
    pub mound_radius_m: (f64, f64),
    pub eccentricity: (f64, f64),
    /// Brightness added at the mound rim (rises by half again at the center).
    pub mound_contrast: (f64, f64),
    /// Speckle amplitude in gray levels.
    pub background_noise: f64,
    /// Number of dark, mound-shaped distractors.
    pub clutter: usize,
    /// Number of straight field boundaries (soft brightness steps).
    pub field_boundaries: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            extent_m: (384.0, 384.0),
            origin: (500_000.0, 3_500_000.0),
            ppm: 1.0,
            n_mounds: 3,
            mound_radius_m: (14.0, 30.0),
            eccentricity: (0.0, 0.7),
            mound_contrast: (28.0, 45.0),
            background_noise: 10.0,
            clutter: 2,
            field_boundaries: 3,
            seed: 0,
        }
    }
}

fn check_range(name: &str, r: (f64, f64)) -> Result<(), SynthError> {
    if r.0.is_finite() && r.1.is_finite() && r.0 <= r.1 {
        Ok(())
    } else {
        Err(SynthError::InvalidSpec(format!("{name} range {r:?}")))
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if !(self.ppm > 0.0 && self.ppm.is_finite()) {
            return Err(SynthError::InvalidSpec(format!("ppm {}", self.ppm)));
        }
        if !(self.extent_m.0 > 0.0 && self.extent_m.1 > 0.0) {
            return Err(SynthError::InvalidSpec(format!("extent {:?}", self.extent_m)));
        }
        check_range("mound_radius_m", self.mound_radius_m)?;
        check_range("eccentricity", self.eccentricity)?;
        check_range("mound_contrast", self.mound_contrast)?;
        if self.mound_radius_m.0 <= 0.0 {
            return Err(SynthError::InvalidSpec("mound radius must be positive".into()));
        }
        if self.eccentricity.0 < 0.0 || self.eccentricity.1 >= 1.0 {
            return Err(SynthError::InvalidSpec(format!("eccentricity {:?}", self.eccentricity)));
        }
        if self.background_noise.is_nan() || self.background_noise < 0.0 {
            return Err(SynthError::InvalidSpec(format!("noise {}", self.background_noise)));
        }
        Ok(())
    }

    pub fn transform(&self) -> Result<GeoTransform, GeoError> {
        GeoTransform::from_ppm(self.origin.0, self.origin.1, self.ppm)
    }
}

/// Ellipse in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn area(&self) -> f64 {
        std::f64::consts::PI * self.a * self.b
    }

    /// Squared normalized radius of a world point.
    pub fn rho2(&self, x: f64, y: f64) -> f64 {
        let (s, c) = self.angle.sin_cos();
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        (u / self.a).powi(2) + (v / self.b).powi(2)
    }

    /// Inscribed regular `n`-gon, counter-clockwise.
    pub fn polygon(&self, n: usize) -> Result<Polygon, GeoError> {
        let (s, c) = self.angle.sin_cos();
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|k| {
                let t = k as f64 * std::f64::consts::TAU / n as f64;
                let (u, v) = (self.a * t.cos(), self.b * t.sin());
                (self.cx + u * c - v * s, self.cy + u * s + v * c)
            })
            .collect();
        Polygon::from_coords(&pts)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub image: Raster<Rgb>,
    pub sites: Vec<SiteRecord>,
    pub mounds: Vec<Ellipse>,
    pub clutter: Vec<Ellipse>,
}

fn draw(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.random_range(r.0..r.1)
    } else {
        r.0
    }
}

/// Places mounds then clutter by rejection sampling: fully inside the
/// extent and separated by at least 2 m between bounding circles.
fn place(spec: &SceneSpec, rng: &mut ChaCha8Rng) -> Result<(Vec<Ellipse>, Vec<Ellipse>), SynthError> {
    let (w, h) = spec.extent_m;
    let (x0, y1) = spec.origin;
    let mut placed: Vec<Ellipse> = Vec::new();
    for index in 0..spec.n_mounds + spec.clutter {
        let a = draw(rng, spec.mound_radius_m);
        let e = draw(rng, spec.eccentricity);
        let b = a * (1.0 - e * e).sqrt();
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let margin = a + 1.0;
        if 2.0 * margin >= w || 2.0 * margin >= h {
            return Err(SynthError::PlacementFailed { index, attempts: 0 });
        }
        let mut ok = None;
        for _ in 0..MAX_ATTEMPTS {
            let cx = x0 + rng.random_range(margin..w - margin);
            let cy = y1 - h + rng.random_range(margin..h - margin);
            let clear = placed
                .iter()
                .all(|o| ((o.cx - cx).powi(2) + (o.cy - cy).powi(2)).sqrt() > o.a + a + 2.0);
            if clear {
                ok = Some(Ellipse { cx, cy, a, b, angle });
                break;
            }
        }
        placed.push(ok.ok_or(SynthError::PlacementFailed {
            index,
            attempts: MAX_ATTEMPTS,
        })?);
    }
    let clutter = placed.split_off(spec.n_mounds);
    Ok((placed, clutter))
}

/// Generates one scene. `id` names the image and prefixes site ids.
pub fn generate_scene(id: &str, spec: &SceneSpec) -> Result<Scene, SynthError> {
    spec.validate()?;
    let t = spec.transform()?;
    let (w, h) = (
        (spec.extent_m.0 * spec.ppm).round() as usize,
        (spec.extent_m.1 * spec.ppm).round() as usize,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (mounds, clutter) = place(spec, &mut rng)?;
    let contrasts: Vec<f64> = (0..mounds.len() + clutter.len())
        .map(|_| draw(&mut rng, spec.mound_contrast))
        .collect();

    // Low-frequency background: a few long-wavelength ripples plus soft
    // steps across straight field boundaries.
    let ripples: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            let k = std::f64::consts::TAU / rng.random_range(150.0..400.0);
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            (k * dir.cos(), k * dir.sin(), rng.random_range(0.0..std::f64::consts::TAU), 3.0)
        })
        .collect();
    let (ox, oy) = spec.origin;
    let fields: Vec<(f64, f64, f64, f64)> = (0..spec.field_boundaries)
        .map(|_| {
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            let px = ox + rng.random_range(0.0..spec.extent_m.0);
            let py = oy - rng.random_range(0.0..spec.extent_m.1);
            let offset = px * dir.cos() + py * dir.sin();
            (dir, offset, rng.random_range(-5.0..5.0), rng.random_range(3.0..10.0))
        })
        .collect();
    let tint = [rng.random_range(1.0..1.08), 1.0, rng.random_range(0.85..0.95)];
    let base = rng.random_range(100.0..120.0);
    let noise_seed = rng.random::<u64>();

    let objects: Vec<(Ellipse, f64)> = mounds
        .iter()
        .zip(&contrasts)
        .map(|(e, &c)| (*e, c))
        .chain(clutter.iter().zip(&contrasts[mounds.len()..]).map(|(e, &c)| (*e, -c)))
        .collect();

    let rows = par::map_range(h, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(noise_seed, &[r as u64]));
        (0..w)
            .map(|c| {
                let (x, y) = t.pixel_center(c, r);
                let mut g = base;
                for &(kx, ky, ph, amp) in &ripples {
                    g += amp * (kx * (x - ox) + ky * (y - oy) + ph).sin();
                }
                for &(dir, offset, step, width) in &fields {
                    let d = x * dir.cos() + y * dir.sin() - offset;
                    g += step * (d / width).tanh();
                }
                for (e, contrast) in &objects {
                    let rho2 = e.rho2(x, y);
                    if rho2 <= 1.0 {
                        g += contrast * (1.5 - 0.5 * rho2);
                    }
                }
                if spec.background_noise > 0.0 {
                    g += rng.random_range(-spec.background_noise..=spec.background_noise);
                }
                let px: Rgb = std::array::from_fn(|k| (g * tint[k]).round().clamp(0.0, 255.0) as u8);
                px
            })
            .collect::<Vec<Rgb>>()
    });
    let image = Raster::new(w, h, rows.concat(), t)?;
    let sites = mounds
        .iter()
        .enumerate()
        .map(|(k, e)| Ok(SiteRecord::new(format!("{id}-m{k:02}"), e.polygon(GT_VERTICES)?)))
        .collect::<Result<Vec<_>, GeoError>>()?;
    Ok(Scene {
        id: id.to_owned(),
        image,
        sites,
        mounds,
        clutter,
    })
}

/// Specs for a series of scenes laid side by side: scene `i` gets its own
/// seed and origin, and every fifth scene has no mounds.
pub fn scene_series(count: usize, template: &SceneSpec, seed: u64) -> Vec<(String, SceneSpec)> {
    (0..count)
        .map(|i| {
            let mut s = template.clone();
            s.seed = seeds::derive(seed, &[i as u64]);
            s.origin.0 = template.origin.0 + i as f64 * (template.extent_m.0 + 1000.0);
            if i % 5 == 4 {
                s.n_mounds = 0;
            }
            (format!("scene_{i:03}"), s)
        })
        .collect()
}

pub fn generate_series(specs: &[(String, SceneSpec)]) -> Result<Vec<Scene>, SynthError> {
    par::map(specs, |(id, s)| generate_scene(id, s)).into_iter().collect()
}

/// Writes `<id>.png` with its world file and `<id>.geojson` with the sites.
pub fn write_scene(dir: &Path, scene: &Scene, epsg: Option<u32>) -> Result<(), SynthError> {
    std::fs::create_dir_all(dir).map_err(|e| FormatError::io(dir, e))?;
    write_rgb_png(&dir.join(format!("{}.png", scene.id)), &scene.image)?;
    let features = scene.sites.iter().map(SiteRecord::to_feature).collect();
    write_feature_collection(&dir.join(format!("{}.geojson", scene.id)), features, epsg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::polygon_area;
    use crate::tiles::rasterize_mask;

    #[test]
    fn empty_scene_is_background_only() {
        let spec = SceneSpec { n_mounds: 0, clutter: 0, ..SceneSpec::default() };
        let s = generate_scene("x", &spec).unwrap();
        assert!(s.sites.is_empty());
        assert_eq!(s.image.width(), 384);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec { seed: 9, ..SceneSpec::default() };
        assert_eq!(generate_scene("a", &spec).unwrap(), generate_scene("a", &spec).unwrap());
        let other = SceneSpec { seed: 10, ..spec.clone() };
        assert_ne!(generate_scene("a", &spec).unwrap().image, generate_scene("a", &other).unwrap().image);
    }

    #[test]
    fn gt_polygons_track_ellipse_area() {
        for seed in 0..5 {
            let spec = SceneSpec { seed, n_mounds: 5, mound_radius_m: (20.0, 40.0), ..SceneSpec::default() };
            let s = generate_scene("a", &spec).unwrap();
            for (site, e) in s.sites.iter().zip(&s.mounds) {
                let rel = (polygon_area(&site.shape) - e.area()).abs() / e.area();
                assert!(rel < 0.01, "relative area error {rel}");
            }
        }
    }

    #[test]
    fn mask_fraction_matches_analytic_area() {
        let spec = SceneSpec { seed: 3, n_mounds: 6, mound_radius_m: (20.0, 35.0), ..SceneSpec::default() };
        let s = generate_scene("a", &spec).unwrap();
        let shapes: Vec<Polygon> = s.sites.iter().map(|x| x.shape.clone()).collect();
        let m = rasterize_mask(&shapes, *s.image.transform(), s.image.width(), s.image.height());
        let frac = m.values().iter().filter(|&&v| v > 0).count() as f64 / m.len() as f64;
        let analytic = s.mounds.iter().map(Ellipse::area).sum::<f64>() / (384.0 * 384.0);
        assert!((frac - analytic).abs() / analytic < 0.02, "{frac} vs {analytic}");
    }

    #[test]
    fn mounds_are_brighter_than_surroundings() {
        for seed in 0..32 {
            let spec = SceneSpec { seed, ..SceneSpec::default() };
            let s = generate_scene("a", &spec).unwrap();
            let shapes: Vec<Polygon> = s.sites.iter().map(|x| x.shape.clone()).collect();
            let m = rasterize_mask(&shapes, *s.image.transform(), 384, 384);
            let (mut si, mut ni, mut so, mut no) = (0.0, 0.0, 0.0, 0.0);
            for (p, &k) in s.image.values().iter().zip(m.values()) {
                let g = (p[0] as f64 + p[1] as f64 + p[2] as f64) / 3.0;
                if k > 0 {
                    si += g;
                    ni += 1.0;
                } else {
                    so += g;
                    no += 1.0;
                }
            }
            let diff = si / ni - so / no;
            assert!(diff >= spec.mound_contrast.0, "seed {seed}: {diff}");
        }
    }

    #[test]
    fn mounds_do_not_overlap() {
        let spec = SceneSpec { seed: 1, n_mounds: 8, ..SceneSpec::default() };
        let s = generate_scene("a", &spec).unwrap();
        for i in 0..s.sites.len() {
            for j in i + 1..s.sites.len() {
                assert_eq!(crate::geo::intersection_area(&s.sites[i].shape, &s.sites[j].shape), 0.0);
            }
        }
    }

    #[test]
    fn crowded_scene_fails_placement() {
        let spec = SceneSpec { n_mounds: 200, mound_radius_m: (30.0, 30.0), ..SceneSpec::default() };
        assert!(matches!(generate_scene("a", &spec), Err(SynthError::PlacementFailed { .. })));
    }

    #[test]
    fn written_scene_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let s = generate_scene("scene_000", &SceneSpec { seed: 2, ..SceneSpec::default() }).unwrap();
        write_scene(dir.path(), &s, Some(32638)).unwrap();
        let img = crate::formats::read_rgb_png(&dir.path().join("scene_000.png")).unwrap();
        assert_eq!(img, s.image);
        let (f, epsg) = crate::formats::read_feature_collection(&dir.path().join("scene_000.geojson")).unwrap();
        assert_eq!(epsg, Some(32638));
        let sites = crate::catalog::sites_from_features(&f).unwrap();
        assert_eq!(sites.len(), s.sites.len());
        assert_eq!(sites[0].id, s.sites[0].id);
    }
}
