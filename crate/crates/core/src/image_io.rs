//! PNG/JPEG decoding into [0, 1] RGB arrays and PNG encoding of faces.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use ndarray::Array3;

use crate::{AlignedFace, Error, Result};

fn rgb_to_array(img: &RgbImage) -> Array3<f32> {
    let (w, h) = img.dimensions();
    Array3::from_shape_fn((h as usize, w as usize, 3), |(r, c, ch)| {
        img.get_pixel(c as u32, r as u32)[ch] as f32 / 255.0
    })
}

/// Decodes PNG or JPEG bytes into an H×W×3 array in [0, 1].
pub fn decode_image(bytes: &[u8]) -> Result<Array3<f32>> {
    let img = image::load_from_memory(bytes)?.to_rgb8();
    Ok(rgb_to_array(&img))
}

pub fn load_image(path: &Path) -> Result<Array3<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes)
}

pub fn to_rgb8(face: &AlignedFace) -> RgbImage {
    let s = face.size() as u32;
    let px = face.pixels();
    RgbImage::from_fn(s, s, |x, y| {
        let mut rgb = [0u8; 3];
        for (ch, v) in rgb.iter_mut().enumerate() {
            *v = (px[[y as usize, x as usize, ch]] * 255.0).round().clamp(0.0, 255.0) as u8;
        }
        image::Rgb(rgb)
    })
}

/// PNG bytes for a face. Both the CLI and the HTTP service go through this
/// encoder so identical faces give identical bytes.
pub fn encode_png(face: &AlignedFace) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_rgb8(face).write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn save_png(face: &AlignedFace, path: &Path) -> Result<()> {
    let bytes = encode_png(face)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Loads an image that is already an S×S aligned face.
pub fn load_aligned(path: &Path) -> Result<AlignedFace> {
    AlignedFace::new(load_image(path)?)
}

/// Quantises a face to 8-bit levels, the precision it has after a PNG round trip.
pub fn quantize(face: &AlignedFace) -> AlignedFace {
    let px = face.pixels().mapv(|v| (v * 255.0).round() / 255.0);
    AlignedFace::from_clipped(px).expect("quantised face keeps its shape")
}
