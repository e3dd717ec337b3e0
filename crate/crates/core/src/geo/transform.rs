use serde::{Deserialize, Serialize};

use super::GeoError;

/// North-up affine mapping between pixel and projected world coordinates.
///
/// `(origin_x, origin_y)` is the world position of the top-left *corner* of
/// pixel `(0, 0)`. Rows grow downward, so world y decreases as row increases.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTransform", into = "RawTransform")]
pub struct GeoTransform {
    origin_x: f64,
    origin_y: f64,
    pixel_w: f64,
    pixel_h: f64,
}

#[derive(Serialize, Deserialize)]
struct RawTransform {
    origin_x: f64,
    origin_y: f64,
    pixel_w: f64,
    pixel_h: f64,
}

impl TryFrom<RawTransform> for GeoTransform {
    type Error = GeoError;

    fn try_from(raw: RawTransform) -> Result<Self, Self::Error> {
        GeoTransform::new(raw.origin_x, raw.origin_y, raw.pixel_w, raw.pixel_h)
    }
}

impl From<GeoTransform> for RawTransform {
    fn from(t: GeoTransform) -> Self {
        RawTransform {
            origin_x: t.origin_x,
            origin_y: t.origin_y,
            pixel_w: t.pixel_w,
            pixel_h: t.pixel_h,
        }
    }
}

impl GeoTransform {
    pub fn new(origin_x: f64, origin_y: f64, pixel_w: f64, pixel_h: f64) -> Result<Self, GeoError> {
        let finite = [origin_x, origin_y, pixel_w, pixel_h].iter().all(|v| v.is_finite());
        if !finite || pixel_w <= 0.0 || pixel_h <= 0.0 {
            return Err(GeoError::InvalidTransform { pixel_w, pixel_h });
        }
        Ok(Self {
            origin_x,
            origin_y,
            pixel_w,
            pixel_h,
        })
    }

    /// Square pixels of side `1 / ppm` meters.
    pub fn from_ppm(origin_x: f64, origin_y: f64, ppm: f64) -> Result<Self, GeoError> {
        Self::new(origin_x, origin_y, 1.0 / ppm, 1.0 / ppm)
    }

    pub fn origin_x(&self) -> f64 {
        self.origin_x
    }

    pub fn origin_y(&self) -> f64 {
        self.origin_y
    }

    pub fn pixel_w(&self) -> f64 {
        self.pixel_w
    }

    pub fn pixel_h(&self) -> f64 {
        self.pixel_h
    }

    pub fn pixel_area(&self) -> f64 {
        self.pixel_w * self.pixel_h
    }

    pub fn world_to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.origin_x) / self.pixel_w,
            (self.origin_y - y) / self.pixel_h,
        )
    }

    pub fn pixel_to_world(&self, col: f64, row: f64) -> (f64, f64) {
        (
            self.origin_x + col * self.pixel_w,
            self.origin_y - row * self.pixel_h,
        )
    }

    /// World coordinates of the center of pixel `(col, row)`.
    pub fn pixel_center(&self, col: usize, row: usize) -> (f64, f64) {
        self.pixel_to_world(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Transform of a sub-window whose top-left pixel is `(col, row)` in this grid.
    pub fn shifted(&self, col: f64, row: f64) -> Self {
        let (x, y) = self.pixel_to_world(col, row);
        Self { origin_x: x, origin_y: y, ..*self }
    }

    /// Same origin, pixels `factor` times larger.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            pixel_w: self.pixel_w * factor,
            pixel_h: self.pixel_h * factor,
            ..*self
        }
    }

    /// World extent `(min_x, min_y, max_x, max_y)` of a `width` x `height` grid.
    pub fn extent(&self, width: usize, height: usize) -> (f64, f64, f64, f64) {
        let (max_x, min_y) = self.pixel_to_world(width as f64, height as f64);
        (self.origin_x, min_y, max_x, self.origin_y)
    }

    /// The six ESRI world-file parameters. The last two locate the *center* of
    /// pixel `(0, 0)`, hence the half-pixel shift from our corner origin.
    pub fn to_world_file(&self) -> [f64; 6] {
        [
            self.pixel_w,
            0.0,
            0.0,
            -self.pixel_h,
            self.origin_x + 0.5 * self.pixel_w,
            self.origin_y - 0.5 * self.pixel_h,
        ]
    }

    pub fn from_world_file(params: [f64; 6]) -> Result<Self, GeoError> {
        let [a, d, b, e, c, f] = params;
        if d != 0.0 || b != 0.0 {
            return Err(GeoError::RotatedWorldFile);
        }
        let pixel_w = a;
        let pixel_h = -e;
        Self::new(c - 0.5 * pixel_w, f + 0.5 * pixel_h, pixel_w, pixel_h)
    }

    /// Whether `other` has the same pixel size within `tol` meters.
    pub fn same_pixel_size(&self, other: &GeoTransform, tol: f64) -> bool {
        (self.pixel_w - other.pixel_w).abs() <= tol && (self.pixel_h - other.pixel_h).abs() <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn world_to_pixel_examples() {
        let t = GeoTransform::new(0.0, 100.0, 1.0, 1.0).unwrap();
        assert_eq!(t.world_to_pixel(0.0, 100.0), (0.0, 0.0));
        assert_eq!(t.world_to_pixel(10.0, 90.0), (10.0, 10.0));

        let utm = GeoTransform::new(500_000.0, 3_500_000.0, 2.0, 2.0).unwrap();
        assert_eq!(utm.world_to_pixel(500_100.0, 3_499_900.0), (50.0, 50.0));
    }

    #[test]
    fn corner_round_trip_is_exact() {
        let t = GeoTransform::new(500_000.0, 3_500_000.0, 0.5, 0.25).unwrap();
        for row in 0..40 {
            for col in 0..40 {
                let (x, y) = t.pixel_to_world(col as f64, row as f64);
                assert_eq!(t.world_to_pixel(x, y), (col as f64, row as f64));
            }
        }
    }

    #[test]
    fn rejects_non_positive_pixels() {
        assert!(GeoTransform::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(GeoTransform::new(0.0, 0.0, 1.0, -1.0).is_err());
        assert!(GeoTransform::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn world_file_uses_pixel_centers() {
        let t = GeoTransform::new(100.0, 200.0, 2.0, 2.0).unwrap();
        let wf = t.to_world_file();
        assert_eq!(wf, [2.0, 0.0, 0.0, -2.0, 101.0, 199.0]);
        assert_eq!(GeoTransform::from_world_file(wf).unwrap(), t);
        assert!(GeoTransform::from_world_file([1.0, 0.1, 0.0, -1.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn serde_rejects_invalid_pixel_size() {
        let bad = r#"{"origin_x":0,"origin_y":0,"pixel_w":-1,"pixel_h":1}"#;
        assert!(serde_json::from_str::<GeoTransform>(bad).is_err());
    }
}
