//! Image decoding, PNG normalization and resizing.

use std::io::Cursor;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{DynamicImage, ImageEncoder, ImageFormat, RgbImage};

use super::ImageSize;
use crate::error::{Error, Result};

pub fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    image::load_from_memory(bytes).map_err(|e| Error::Protocol(format!("payload is not a decodable image: {e}")))
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    PngEncoder::new_with_quality(Cursor::new(&mut buf), CompressionType::Fast, FilterType::Adaptive).write_image(
        img.as_raw(),
        img.width(),
        img.height(),
        image::ExtendedColorType::Rgb8,
    )?;
    Ok(buf)
}

/// Converts a backend image into PNG at the requested size.
///
/// PNG input that already has the requested size is kept byte-for-byte.
/// Anything else is decoded, resized if needed and re-encoded; the returned
/// size is the backend's native resolution when it differed from `size`.
pub fn normalize_png(bytes: &[u8], size: ImageSize) -> Result<(Vec<u8>, Option<ImageSize>)> {
    let format = image::guess_format(bytes).map_err(|e| Error::Protocol(format!("unrecognized image payload: {e}")))?;
    let img = decode(bytes)?;
    let native = ImageSize::new(img.width(), img.height());
    if native == size && format == ImageFormat::Png {
        return Ok((bytes.to_vec(), None));
    }
    let resized = if native == size {
        img.to_rgb8()
    } else {
        img.resize_exact(size.width, size.height, image::imageops::FilterType::Triangle).to_rgb8()
    };
    let png = encode_png(&resized)?;
    Ok((png, (native != size).then_some(native)))
}
