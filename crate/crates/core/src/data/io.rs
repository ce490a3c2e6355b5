//! PNG reading and writing.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::data::Image;
use crate::error::{Error, Result};

fn decode(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory(&bytes).map_err(|e| Error::Format(format!("cannot decode {}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decodes an 8-bit RGB image scaled to `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<Image> {
    let img = decode(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Image::zeros(3, h, w);
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            let i = out.index(c, y as usize, x as usize);
            out.data[i] = px[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Decodes a label; any nonzero luma counts as change.
pub fn load_label(path: &Path) -> Result<Image> {
    let img = decode(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| if p[0] != 0 { 1.0 } else { 0.0 }).collect();
    Image::new(1, h, w, data)
}

pub fn save_rgb(img: &Image, path: &Path) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::dim("save_rgb", format!("expected 3 channels, got {}", img.channels)));
    }
    let buf: RgbImage = ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        Rgb([0, 1, 2].map(|c| to_u8(img.get(c, y as usize, x as usize))))
    });
    ensure_parent(path)?;
    buf.save(path).map_err(|e| write_error(path, e))
}

fn write_error(path: &Path, e: image::ImageError) -> Error {
    match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("cannot encode {}: {other}", path.display())),
    }
}

fn save_gray(img: &Image, path: &Path, map: impl Fn(f32) -> u8) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::dim("save_gray", format!("expected 1 channel, got {}", img.channels)));
    }
    let buf: GrayImage = ImageBuffer::from_fn(img.width as u32, img.height as u32, |x, y| {
        Luma([map(img.get(0, y as usize, x as usize))])
    });
    ensure_parent(path)?;
    buf.save(path).map_err(|e| write_error(path, e))
}

/// Writes a binary mask: 255 where the value is nonzero.
pub fn save_mask(mask: &Image, path: &Path) -> Result<()> {
    save_gray(mask, path, |v| if v != 0.0 { 255 } else { 0 })
}

/// Writes a probability map thresholded at `thresh` (change = 255).
pub fn save_prediction(prob: &Image, path: &Path, thresh: f32) -> Result<()> {
    save_gray(prob, path, |v| if v >= thresh { 255 } else { 0 })
}

/// Writes a single-channel map min-max scaled to `0..=255`. A constant map
/// becomes all zeros.
pub fn save_normalized(map: &Image, path: &Path) -> Result<()> {
    let (lo, hi) = map.data.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    save_gray(map, path, |v| if range > 0.0 { ((v - lo) / range * 255.0).round() as u8 } else { 0 })
}
