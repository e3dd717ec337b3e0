//! Training and evaluation tiles: window extraction around a point, mask
//! rasterization, random crops, dihedral/photometric augmentation and 2x
//! downscaling. Image and mask always share size and geotransform.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Split;
use crate::formats::{self, FormatError};
use crate::geo::{BBox, GeoTransform, Point, Polygon, Raster, Rgb};
use crate::par;

#[derive(Debug, Error)]
pub enum TileError {
    #[error("window of {side} px at ({col0:.1}, {row0:.1}) exits the {width}x{height} source")]
    OutOfBounds {
        col0: f64,
        row0: f64,
        side: usize,
        width: usize,
        height: usize,
    },
    #[error("crop side {out_side} exceeds tile size {width}x{height}")]
    CropTooLarge {
        out_side: usize,
        width: usize,
        height: usize,
    },
    #[error("downscaling needs even dimensions, got {width}x{height}")]
    OddDimensions { width: usize, height: usize },
    #[error("invalid window: {0}")]
    InvalidWindow(String),
    #[error("invalid augmentation: {0}")]
    InvalidSpec(String),
    #[error("no imagery covers point ({x:.1}, {y:.1})")]
    NoImagery { x: f64, y: f64 },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// What to do when a requested window leaves the source raster.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PadPolicy {
    /// Reject the window with [`TileError::OutOfBounds`].
    #[default]
    Strict,
    /// Fill pixels outside the source with zeros.
    ZeroPad,
}

/// Cuts a square window of `round(side_m · ppm)` pixels centered on
/// `center`. Pixels are sampled nearest-neighbour from the source, so the
/// output is an exact copy when it is aligned with the source grid.
pub fn extract_window(
    image: &Raster<Rgb>,
    center: Point,
    side_m: f64,
    ppm: f64,
    policy: PadPolicy,
) -> Result<Raster<Rgb>, TileError> {
    if side_m.is_nan() || side_m <= 0.0 || ppm.is_nan() || ppm <= 0.0 {
        return Err(TileError::InvalidWindow(format!("side {side_m} m, ppm {ppm}")));
    }
    let side = (side_m * ppm).round() as usize;
    if side == 0 {
        return Err(TileError::InvalidWindow("window rounds to zero pixels".into()));
    }
    let px = 1.0 / ppm;
    let half = side as f64 * px / 2.0;
    let transform = GeoTransform::new(center.x - half, center.y + half, px, px)
        .map_err(|e| TileError::InvalidWindow(e.to_string()))?;

    let src = image.transform();
    let (col0, row0) = src.world_to_pixel(transform.origin_x(), transform.origin_y());
    let (x1, y1) = transform.pixel_to_world(side as f64, side as f64);
    let (col1, row1) = src.world_to_pixel(x1, y1);
    const EPS: f64 = 1e-9;
    let inside = col0 >= -EPS
        && row0 >= -EPS
        && col1 <= image.width() as f64 + EPS
        && row1 <= image.height() as f64 + EPS;
    if policy == PadPolicy::Strict && !inside {
        return Err(TileError::OutOfBounds {
            col0,
            row0,
            side,
            width: image.width(),
            height: image.height(),
        });
    }

    let (w, h) = (image.width() as isize, image.height() as isize);
    let mut values = vec![[0u8; 3]; side * side];
    par::for_each_row(&mut values, side, |r, row| {
        for (c, out) in row.iter_mut().enumerate() {
            let (x, y) = transform.pixel_center(c, r);
            let (sc, sr) = src.world_to_pixel(x, y);
            let (sc, sr) = (sc.floor() as isize, sr.floor() as isize);
            if sc >= 0 && sr >= 0 && sc < w && sr < h {
                *out = image.get(sc as usize, sr as usize);
            }
        }
    });
    Ok(Raster::new(side, side, values, transform).expect("side x side values"))
}

/// Burns polygons into a `{0,1}` mask: a pixel is 1 iff its center lies
/// inside any polygon (holes excluded).
pub fn rasterize_mask(shapes: &[Polygon], transform: GeoTransform, w: usize, h: usize) -> Raster<u8> {
    let mut values = vec![0u8; w * h];
    if shapes.is_empty() || w == 0 {
        return Raster::new(w, h, values, transform).expect("w x h values");
    }
    // Work in pixel space so scanline crossings are cheap.
    let rings: Vec<Vec<Vec<(f64, f64)>>> = shapes
        .iter()
        .map(|p| {
            p.rings()
                .map(|r| r.iter().map(|q| transform.world_to_pixel(q.x, q.y)).collect())
                .collect()
        })
        .collect();
    par::for_each_row(&mut values, w, |r, row| {
        let y = r as f64 + 0.5;
        for poly in &rings {
            let mut xs: Vec<f64> = Vec::new();
            for ring in poly {
                for e in ring.windows(2) {
                    let ((x0, y0), (x1, y1)) = (e[0], e[1]);
                    if (y0 > y) != (y1 > y) {
                        xs.push(x0 + (y - y0) * (x1 - x0) / (y1 - y0));
                    }
                }
            }
            xs.sort_by(f64::total_cmp);
            for pair in xs.chunks_exact(2) {
                // Centers c + 0.5 with pair[0] < c + 0.5 < pair[1], matching
                // the strict crossing test of point-in-polygon.
                let start = (pair[0] - 0.5).floor() + 1.0;
                let end = (pair[1] - 0.5).ceil() - 1.0;
                let start = start.max(0.0) as usize;
                if end < 0.0 {
                    continue;
                }
                let end = (end as usize).min(w - 1);
                for v in row.iter_mut().take(end + 1).skip(start) {
                    *v = 1;
                }
            }
        }
    });
    Raster::new(w, h, values, transform).expect("w x h values")
}

/// Photometric jitter bounds: brightness in ±`brightness` (of 255) and
/// contrast scale in `1 ± contrast`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugBounds {
    pub brightness: f64,
    pub contrast: f64,
}

impl Default for AugBounds {
    fn default() -> Self {
        Self {
            brightness: 16.0,
            contrast: 0.1,
        }
    }
}

/// One augmentation draw. Geometry is "mirror columns, then rotate
/// `rot_quarter` quarter-turns counter-clockwise".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugSpec {
    pub rot_quarter: u8,
    pub mirror: bool,
    pub brightness_shift: f64,
    pub contrast_scale: f64,
    pub seed: u64,
}

impl Default for AugSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl AugSpec {
    pub const fn identity() -> Self {
        Self {
            rot_quarter: 0,
            mirror: false,
            brightness_shift: 0.0,
            contrast_scale: 1.0,
            seed: 0,
        }
    }

    pub fn sample(seed: u64, bounds: &AugBounds) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rot_quarter = rng.random_range(0..4u8);
        let mirror = rng.random_bool(0.5);
        let brightness_shift = if bounds.brightness > 0.0 {
            rng.random_range(-bounds.brightness..=bounds.brightness)
        } else {
            0.0
        };
        let contrast_scale = if bounds.contrast > 0.0 {
            rng.random_range(1.0 - bounds.contrast..=1.0 + bounds.contrast)
        } else {
            1.0
        };
        Self {
            rot_quarter,
            mirror,
            brightness_shift,
            contrast_scale,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), TileError> {
        if self.rot_quarter > 3 {
            return Err(TileError::InvalidSpec(format!("rot_quarter {}", self.rot_quarter)));
        }
        if !self.brightness_shift.is_finite() || self.contrast_scale.is_nan() || self.contrast_scale <= 0.0 {
            return Err(TileError::InvalidSpec(format!(
                "brightness {} / contrast {}",
                self.brightness_shift, self.contrast_scale
            )));
        }
        Ok(())
    }

    /// Geometry of applying `self` then `next`, as a single spec (the
    /// photometric part is reset to identity).
    pub fn then_geometry(&self, next: &AugSpec) -> AugSpec {
        // M·R^k = R^-k·M, so R^kb M^mb R^ka M^ma = R^(kb ± ka) M^(ma ^ mb).
        let ka = self.rot_quarter as i32;
        let kb = next.rot_quarter as i32;
        let k = if next.mirror { kb - ka } else { kb + ka };
        AugSpec {
            rot_quarter: k.rem_euclid(4) as u8,
            mirror: self.mirror ^ next.mirror,
            ..AugSpec::identity()
        }
    }
}

/// Image + ground-truth pair with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub image: Raster<Rgb>,
    pub mask: Raster<u8>,
    pub source_id: String,
    /// Offset of this tile inside the window it was cropped from.
    pub crop_offset: (usize, usize),
    pub aug: AugSpec,
}

impl Tile {
    /// Pairs an image with the mask of `shapes` rasterized on its grid.
    pub fn from_shapes(source_id: impl Into<String>, image: Raster<Rgb>, shapes: &[Polygon]) -> Self {
        let mask = rasterize_mask(shapes, *image.transform(), image.width(), image.height());
        Self {
            image,
            mask,
            source_id: source_id.into(),
            crop_offset: (0, 0),
            aug: AugSpec::identity(),
        }
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn foreground(&self) -> usize {
        self.mask.values().iter().filter(|&&v| v > 0).count()
    }
}

/// Crops an `out_side` square at a seeded uniform offset.
pub fn random_crop(t: &Tile, out_side: usize, seed: u64) -> Result<Tile, TileError> {
    let (w, h) = (t.width(), t.height());
    if out_side > w || out_side > h || out_side == 0 {
        return Err(TileError::CropTooLarge {
            out_side,
            width: w,
            height: h,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let col = rng.random_range(0..=w - out_side);
    let row = rng.random_range(0..=h - out_side);
    Ok(crop_at(t, col, row, out_side))
}

pub fn crop_at(t: &Tile, col: usize, row: usize, side: usize) -> Tile {
    Tile {
        image: t.image.window(col, row, side, side),
        mask: t.mask.window(col, row, side, side),
        source_id: t.source_id.clone(),
        crop_offset: (t.crop_offset.0 + col, t.crop_offset.1 + row),
        aug: t.aug,
    }
}

fn dihedral<V: Copy + PartialEq>(r: &Raster<V>, rot: u8, mirror: bool) -> Raster<V> {
    let (w, h) = (r.width(), r.height());
    let src = |c: usize, row: usize| {
        if mirror {
            r.get(w - 1 - c, row)
        } else {
            r.get(c, row)
        }
    };
    let t = *r.transform();
    // Output (c', r') pulls from the pre-rotation pixel it came from.
    match rot % 4 {
        0 => Raster::from_fn(w, h, t, &src),
        1 => Raster::from_fn(h, w, t, |c, row| src(w - 1 - row, c)),
        2 => Raster::from_fn(w, h, t, |c, row| src(w - 1 - c, h - 1 - row)),
        _ => Raster::from_fn(h, w, t, |c, row| src(row, h - 1 - c)),
    }
    .with_nodata(r.nodata())
}

fn photometric(v: u8, shift: f64, scale: f64) -> u8 {
    ((v as f64 - 127.5) * scale + 127.5 + shift).round().clamp(0.0, 255.0) as u8
}

/// Applies `spec`: geometry to image and mask alike, brightness/contrast
/// to the image only. Rotated tiles keep their original geotransform.
pub fn augment(t: &Tile, spec: &AugSpec) -> Result<Tile, TileError> {
    spec.validate()?;
    let mut image = dihedral(&t.image, spec.rot_quarter, spec.mirror);
    let mask = dihedral(&t.mask, spec.rot_quarter, spec.mirror);
    if spec.brightness_shift != 0.0 || spec.contrast_scale != 1.0 {
        for px in image.values_mut() {
            for ch in px.iter_mut() {
                *ch = photometric(*ch, spec.brightness_shift, spec.contrast_scale);
            }
        }
    }
    Ok(Tile {
        image,
        mask,
        source_id: t.source_id.clone(),
        crop_offset: t.crop_offset,
        aug: *spec,
    })
}

/// Rotation by an arbitrary angle about the tile center, bilinear for the
/// image and nearest for the mask; uncovered pixels become 0.
pub fn rotate_arbitrary(t: &Tile, degrees: f64) -> Tile {
    let (w, h) = (t.width(), t.height());
    let (s, c) = degrees.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let inverse = |col: usize, row: usize| {
        let (x, y) = (col as f64 + 0.5 - cx, row as f64 + 0.5 - cy);
        // Inverse rotation maps output centers back into the source.
        (c * x - s * y + cx - 0.5, s * x + c * y + cy - 0.5)
    };
    let image = Raster::from_fn(w, h, *t.image.transform(), |col, row| {
        let (sx, sy) = inverse(col, row);
        if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f64 || sy > (h - 1) as f64 {
            return [0, 0, 0];
        }
        let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
        let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
        let mut out = [0u8; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let p = |x: usize, y: usize| t.image.get(x, y)[ch] as f64;
            let v = p(x0, y0) * (1.0 - fx) * (1.0 - fy)
                + p(x1, y0) * fx * (1.0 - fy)
                + p(x0, y1) * (1.0 - fx) * fy
                + p(x1, y1) * fx * fy;
            *o = v.round().clamp(0.0, 255.0) as u8;
        }
        out
    });
    let mask = Raster::from_fn(w, h, *t.mask.transform(), |col, row| {
        let (sx, sy) = inverse(col, row);
        let (x, y) = (sx.round(), sy.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            0
        } else {
            t.mask.get(x as usize, y as usize)
        }
    });
    Tile {
        image,
        mask,
        source_id: t.source_id.clone(),
        crop_offset: t.crop_offset,
        aug: t.aug,
    }
}

/// Halves resolution: 2x2 box average for the image, 2x2 majority for the
/// mask (two of four foreground pixels count as foreground).
pub fn downscale_half(t: &Tile) -> Result<Tile, TileError> {
    let (w, h) = (t.width(), t.height());
    if w % 2 != 0 || h % 2 != 0 {
        return Err(TileError::OddDimensions { width: w, height: h });
    }
    let transform = t.image.transform().scaled(2.0);
    let image = Raster::from_fn(w / 2, h / 2, transform, |c, r| {
        let mut out = [0u8; 3];
        for (ch, o) in out.iter_mut().enumerate() {
            let sum: u32 = [(0, 0), (1, 0), (0, 1), (1, 1)]
                .iter()
                .map(|&(dc, dr)| t.image.get(2 * c + dc, 2 * r + dr)[ch] as u32)
                .sum();
            *o = ((sum + 2) / 4) as u8;
        }
        out
    });
    let mask = Raster::from_fn(w / 2, h / 2, transform, |c, r| {
        let n: u32 = [(0, 0), (1, 0), (0, 1), (1, 1)]
            .iter()
            .map(|&(dc, dr)| u32::from(t.mask.get(2 * c + dc, 2 * r + dr) > 0))
            .sum();
        u8::from(n >= 2)
    });
    Ok(Tile {
        image,
        mask,
        source_id: t.source_id.clone(),
        crop_offset: t.crop_offset,
        aug: t.aug,
    })
}

/// JSON sidecar stored next to each tile's PNGs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileSidecar {
    pub source_id: String,
    pub crop_offset: (usize, usize),
    pub aug: AugSpec,
    pub split: Option<Split>,
}

/// Writes `<stem>.png`, `<stem>_mask.png` (each with a world file) and `<stem>.json`.
pub fn write_tile(dir: &Path, stem: &str, t: &Tile, split: Option<Split>) -> Result<(), TileError> {
    formats::write_rgb_png(&dir.join(format!("{stem}.png")), &t.image)?;
    formats::write_mask_png(&dir.join(format!("{stem}_mask.png")), &t.mask)?;
    let sidecar = TileSidecar {
        source_id: t.source_id.clone(),
        crop_offset: t.crop_offset,
        aug: t.aug,
        split,
    };
    let path = dir.join(format!("{stem}.json"));
    let json = serde_json::to_vec_pretty(&sidecar).map_err(|e| FormatError::json(&path, e))?;
    std::fs::write(&path, json).map_err(|e| FormatError::io(&path, e))?;
    Ok(())
}

pub fn read_tile(dir: &Path, stem: &str) -> Result<(Tile, TileSidecar), TileError> {
    let image = formats::read_rgb_png(&dir.join(format!("{stem}.png")))?;
    let mask = formats::read_mask_png(&dir.join(format!("{stem}_mask.png")))?;
    let path = dir.join(format!("{stem}.json"));
    let text = std::fs::read(&path).map_err(|e| FormatError::io(&path, e))?;
    let sidecar: TileSidecar = serde_json::from_slice(&text).map_err(|e| FormatError::json(&path, e))?;
    Ok((
        Tile {
            image,
            mask,
            source_id: sidecar.source_id.clone(),
            crop_offset: sidecar.crop_offset,
            aug: sidecar.aug,
        },
        sidecar,
    ))
}

/// Stems of every tile in `dir` (files with a `.json` sidecar and matching PNG).
pub fn list_tiles(dir: &Path) -> Result<Vec<String>, TileError> {
    let entries = std::fs::read_dir(dir).map_err(|e| FormatError::io(dir, e))?;
    let mut stems = Vec::new();
    for e in entries {
        let p = e.map_err(|e| FormatError::io(dir, e))?.path();
        if p.extension().and_then(|x| x.to_str()) == Some("json") {
            if let Some(stem) = p.file_stem().and_then(|s| s.to_str()) {
                if dir.join(format!("{stem}.png")).exists() && dir.join(format!("{stem}_mask.png")).exists() {
                    stems.push(stem.to_owned());
                }
            }
        }
    }
    stems.sort();
    Ok(stems)
}

/// One georeferenced image listed in an imagery manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageryEntry {
    pub file: PathBuf,
    /// `[min_x, min_y, max_x, max_y]` in world units.
    pub extent: [f64; 4],
}

/// Ingestion manifest for a directory of image tiles with world files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImageryManifest {
    pub entries: Vec<ImageryEntry>,
}

impl ImageryManifest {
    pub fn load(path: &Path) -> Result<Self, TileError> {
        let text = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
        let mut m: ImageryManifest =
            serde_json::from_slice(&text).map_err(|e| FormatError::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for e in &mut m.entries {
            if e.file.is_relative() {
                e.file = base.join(&e.file);
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), TileError> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| FormatError::json(path, e))?;
        std::fs::write(path, json).map_err(|e| FormatError::io(path, e))?;
        Ok(())
    }

    /// The first entry fully containing `window`, or else the first whose
    /// extent contains the window's center.
    pub fn find(&self, window: &BBox) -> Option<&ImageryEntry> {
        let contains = |e: &&ImageryEntry| {
            let [x0, y0, x1, y1] = e.extent;
            x0 <= window.min_x && y0 <= window.min_y && x1 >= window.max_x && y1 >= window.max_y
        };
        let cx = 0.5 * (window.min_x + window.max_x);
        let cy = 0.5 * (window.min_y + window.max_y);
        self.entries.iter().find(contains).or_else(|| {
            self.entries.iter().find(|e| {
                let [x0, y0, x1, y1] = e.extent;
                x0 <= cx && cx <= x1 && y0 <= cy && cy <= y1
            })
        })
    }

    /// Extracts a window from whichever image covers it.
    pub fn extract(
        &self,
        center: Point,
        side_m: f64,
        ppm: f64,
        policy: PadPolicy,
    ) -> Result<Raster<Rgb>, TileError> {
        let half = side_m / 2.0;
        let bbox = BBox {
            min_x: center.x - half,
            min_y: center.y - half,
            max_x: center.x + half,
            max_y: center.y + half,
        };
        let entry = self.find(&bbox).ok_or(TileError::NoImagery {
            x: center.x,
            y: center.y,
        })?;
        let image = formats::read_rgb_png(&entry.file)?;
        extract_window(&image, center, side_m, ppm, policy)
    }
}
