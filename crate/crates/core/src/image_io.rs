//! PNG / PPM reading and 8-bit output.

use std::path::Path;

use image::{GrayImage, ImageFormat, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Smallest side the four-scale pyramid supports.
pub const MIN_SIDE: usize = 8;
/// Largest side a 16-bit header field can carry.
pub const MAX_SIDE: usize = u16::MAX as usize;

pub fn check_dims(h: usize, w: usize) -> Result<()> {
    if h < MIN_SIDE || w < MIN_SIDE || h > MAX_SIDE || w > MAX_SIDE {
        return Err(Error::Dimensions(format!(
            "{w}x{h}, each side must be within {MIN_SIDE}..={MAX_SIDE}"
        )));
    }
    Ok(())
}

/// Loads an image as a `[1, 3, H, W]` tensor in `[0, 1]`. Grayscale and
/// alpha inputs are converted to RGB.
pub fn load_rgb(path: &Path) -> Result<Tensor> {
    let img = image::ImageReader::open(path)
        .and_then(|r| r.with_guessed_format())
        .map_err(|e| Error::Image {
            path: path.to_owned(),
            reason: e.to_string(),
        })?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_owned(),
            reason: e.to_string(),
        })?;
    let rgb = img.to_rgb8();
    Ok(rgb8_to_tensor(
        rgb.width() as usize,
        rgb.height() as usize,
        rgb.as_raw(),
    ))
}

/// Interleaved RGB bytes to a channel-major tensor in `[0, 1]`.
pub fn rgb8_to_tensor(w: usize, h: usize, rgb: &[u8]) -> Tensor {
    assert_eq!(rgb.len(), 3 * w * h, "RGB buffer length");
    let plane = w * h;
    let mut data = vec![0.0; 3 * plane];
    for (p, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + p] = f64::from(px[c]) / 255.0;
        }
    }
    Tensor::from_data(Shape::new(3, h, w), data).expect("length checked above")
}

/// `[0, 1]` value to a byte: clamp, scale, round half up.
pub fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Channel-major RGB tensor to interleaved 8-bit RGB.
pub fn tensor_to_rgb8(t: &Tensor) -> Result<Vec<u8>> {
    let s = t.shape();
    if s.c != 3 {
        return Err(Error::contract(format!("expected an RGB tensor, got {s}")));
    }
    let plane = s.plane();
    let d = t.data();
    let mut out = vec![0u8; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            out[3 * p + c] = to_u8(d[c * plane + p]);
        }
    }
    Ok(out)
}

/// The tensor as it survives an 8-bit round trip.
pub fn quantize_8bit(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    Ok(rgb8_to_tensor(s.w, s.h, &tensor_to_rgb8(t)?))
}

fn save(path: &Path, result: image::ImageResult<()>) -> Result<()> {
    result.map_err(|e| match e {
        image::ImageError::IoError(io) => Error::Io(io),
        other => Error::Image {
            path: path.to_owned(),
            reason: other.to_string(),
        },
    })
}

pub fn save_png(path: &Path, t: &Tensor) -> Result<()> {
    let s = t.shape();
    let img = RgbImage::from_raw(s.w as u32, s.h as u32, tensor_to_rgb8(t)?).expect("buffer matches dims");
    save(path, img.save_with_format(path, ImageFormat::Png))
}

/// Writes `plane` (`h * w` values) as a grayscale PNG stretched to the full
/// 0..255 range. A constant plane maps to mid-gray.
pub fn save_gray_png(path: &Path, plane: &[f64], h: usize, w: usize) -> Result<()> {
    if plane.len() != h * w {
        return Err(Error::contract(format!(
            "plane of {} values is not {h}x{w}",
            plane.len()
        )));
    }
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bytes = plane
        .iter()
        .map(|&v| if hi > lo { to_u8((v - lo) / (hi - lo)) } else { 128 })
        .collect();
    let img = GrayImage::from_raw(w as u32, h as u32, bytes).expect("buffer matches dims");
    save(path, img.save_with_format(path, ImageFormat::Png))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_rounding() {
        assert_eq!(to_u8(0.0), 0);
        assert_eq!(to_u8(1.0), 255);
        assert_eq!(to_u8(-3.0), 0);
        assert_eq!(to_u8(7.0), 255);
        assert_eq!(to_u8(0.5 / 255.0), 1);
        assert_eq!(to_u8(0.4999 / 255.0), 0);
        assert_eq!(to_u8(128.0 / 255.0), 128);
    }

    #[test]
    fn bytes_survive_the_tensor_round_trip() {
        let rgb: Vec<u8> = (0..3 * 5 * 4).map(|i| (i * 37 % 256) as u8).collect();
        let t = rgb8_to_tensor(5, 4, &rgb);
        assert_eq!(t.shape(), Shape::new(3, 4, 5));
        assert_eq!(t.at(1, 0, 0), f64::from(rgb[1]) / 255.0);
        assert_eq!(tensor_to_rgb8(&t).unwrap(), rgb);
    }

    #[test]
    fn dims_limits() {
        assert!(check_dims(8, 8).is_ok());
        assert!(matches!(check_dims(7, 64), Err(Error::Dimensions(_))));
        assert!(matches!(check_dims(64, 70000), Err(Error::Dimensions(_))));
    }
}
