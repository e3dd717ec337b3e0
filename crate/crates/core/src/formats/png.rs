use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb as ImgRgb, RgbImage, Rgba, RgbaImage};

use super::{read_world_file, write_world_file, FormatError};
use crate::geo::{ProbRaster, Raster, Rgb};

fn image_err(path: &Path, source: image::ImageError) -> FormatError {
    FormatError::Image {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes an 8-bit RGB PNG plus its world file.
pub fn write_rgb_png(path: &Path, r: &Raster<Rgb>) -> Result<(), FormatError> {
    let img: RgbImage = ImageBuffer::from_fn(r.width() as u32, r.height() as u32, |x, y| {
        ImgRgb(r.get(x as usize, y as usize))
    });
    img.save(path).map_err(|e| image_err(path, e))?;
    write_world_file(path, r.transform())?;
    Ok(())
}

/// Reads an RGB PNG (any color type is converted) georeferenced by its world file.
pub fn read_rgb_png(path: &Path) -> Result<Raster<Rgb>, FormatError> {
    let transform = read_world_file(path)?;
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    let values = img.pixels().map(|p| p.0).collect();
    Ok(Raster::new(w as usize, h as usize, values, transform)?)
}

/// Writes a binary mask as 8-bit gray with values 0/255, plus world file.
pub fn write_mask_png(path: &Path, m: &Raster<u8>) -> Result<(), FormatError> {
    let img: GrayImage = ImageBuffer::from_fn(m.width() as u32, m.height() as u32, |x, y| {
        Luma([if m.get(x as usize, y as usize) > 0 { 255 } else { 0 }])
    });
    img.save(path).map_err(|e| image_err(path, e))?;
    write_world_file(path, m.transform())?;
    Ok(())
}

/// Reads a 0/255 mask PNG back to a {0,1} raster (values ≥ 128 are foreground).
pub fn read_mask_png(path: &Path) -> Result<Raster<u8>, FormatError> {
    let transform = read_world_file(path)?;
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_luma8();
    let (w, h) = img.dimensions();
    let values = img.pixels().map(|p| u8::from(p.0[0] >= 128)).collect();
    Ok(Raster::new(w as usize, h as usize, values, transform)?)
}

/// 8-bit grayscale rendering of a probability raster, `round(255·p)`.
pub fn render_gray_png(path: &Path, r: &ProbRaster) -> Result<(), FormatError> {
    let img: GrayImage = ImageBuffer::from_fn(r.width() as u32, r.height() as u32, |x, y| {
        let v = r.get(x as usize, y as usize);
        let g = if r.is_nodata(v) || !v.is_finite() {
            0
        } else {
            (255.0 * v.clamp(0.0, 1.0) as f64).round() as u8
        };
        Luma([g])
    });
    img.save(path).map_err(|e| image_err(path, e))?;
    write_world_file(path, r.transform())?;
    Ok(())
}

/// Writes an RGBA PNG plus world file.
pub fn write_rgba_png(path: &Path, r: &Raster<[u8; 4]>) -> Result<(), FormatError> {
    let img: RgbaImage = ImageBuffer::from_fn(r.width() as u32, r.height() as u32, |x, y| {
        Rgba(r.get(x as usize, y as usize))
    });
    img.save(path).map_err(|e| image_err(path, e))?;
    write_world_file(path, r.transform())?;
    Ok(())
}
