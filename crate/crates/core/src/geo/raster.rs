use serde::{Deserialize, Serialize};

use super::{GeoError, GeoTransform};

/// 8-bit RGB pixel.
pub type Rgb = [u8; 3];

/// A georeferenced, row-major grid of values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster<V> {
    width: usize,
    height: usize,
    values: Vec<V>,
    transform: GeoTransform,
    nodata: Option<V>,
}

impl<V: Copy + PartialEq> Raster<V> {
    pub fn new(
        width: usize,
        height: usize,
        values: Vec<V>,
        transform: GeoTransform,
    ) -> Result<Self, GeoError> {
        if values.len() != width * height {
            return Err(GeoError::DimensionMismatch {
                expected: width * height,
                actual: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
            transform,
            nodata: None,
        })
    }

    pub fn filled(width: usize, height: usize, value: V, transform: GeoTransform) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
            transform,
            nodata: None,
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        transform: GeoTransform,
        mut f: impl FnMut(usize, usize) -> V,
    ) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                values.push(f(col, row));
            }
        }
        Self {
            width,
            height,
            values,
            transform,
            nodata: None,
        }
    }

    pub fn with_nodata(mut self, nodata: Option<V>) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn with_transform(mut self, transform: GeoTransform) -> Self {
        self.transform = transform;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn transform(&self) -> &GeoTransform {
        &self.transform
    }

    pub fn nodata(&self) -> Option<V> {
        self.nodata
    }

    pub fn values(&self) -> &[V] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [V] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<V> {
        self.values
    }

    pub fn get(&self, col: usize, row: usize) -> V {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, col: usize, row: usize, v: V) {
        self.values[row * self.width + col] = v;
    }

    pub fn row(&self, row: usize) -> &[V] {
        &self.values[row * self.width..(row + 1) * self.width]
    }

    pub fn is_nodata(&self, v: V) -> bool {
        self.nodata == Some(v)
    }

    pub fn same_shape<W>(&self, other: &Raster<W>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Applies `f` to every value, keeping geometry.
    pub fn map<W: Copy + PartialEq>(&self, f: impl Fn(V) -> W) -> Raster<W> {
        Raster {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| f(v)).collect(),
            transform: self.transform,
            nodata: self.nodata.map(&f),
        }
    }

    /// Copies the `w` x `h` window whose top-left pixel is `(col, row)`.
    /// The window must lie inside the raster.
    pub fn window(&self, col: usize, row: usize, w: usize, h: usize) -> Raster<V> {
        assert!(col + w <= self.width && row + h <= self.height, "window out of bounds");
        let mut values = Vec::with_capacity(w * h);
        for r in row..row + h {
            values.extend_from_slice(&self.values[r * self.width + col..r * self.width + col + w]);
        }
        Raster {
            width: w,
            height: h,
            values,
            transform: self.transform.shifted(col as f64, row as f64),
            nodata: self.nodata,
        }
    }
}
