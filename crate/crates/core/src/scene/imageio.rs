//! PNG reading and writing. Pixel values are treated as linear `[0, 1]`
//! intensities; no gamma conversion is applied.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::img::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

/// Decodes an image file into one (grayscale) or three (color) channels.
/// Alpha is discarded.
pub fn read_image(path: &Path) -> Result<Image> {
    let dynimg = image::open(path)?;
    Ok(from_dynamic(&dynimg))
}

pub fn from_dynamic(dynimg: &DynamicImage) -> Image {
    use image::ColorType as C;
    let (w, h) = (dynimg.width() as usize, dynimg.height() as usize);
    let color = dynimg.color().has_color();
    let channels = if color { 3 } else { 1 };
    let data: Vec<f64> = match dynimg.color() {
        C::L8 | C::La8 | C::Rgb8 | C::Rgba8 => {
            let raw = if color { dynimg.to_rgb8().into_raw() } else { dynimg.to_luma8().into_raw() };
            raw.into_iter().map(|v| v as f64 / 255.0).collect()
        }
        C::L16 | C::La16 | C::Rgb16 | C::Rgba16 => {
            let raw = if color { dynimg.to_rgb16().into_raw() } else { dynimg.to_luma16().into_raw() };
            raw.into_iter().map(|v| v as f64 / 65535.0).collect()
        }
        _ => {
            let raw = if color { dynimg.to_rgb32f().into_raw() } else { dynimg.to_luma32f().into_raw() };
            raw.into_iter().map(f64::from).collect()
        }
    };
    Image {
        width: w,
        height: h,
        channels,
        data,
    }
}

fn quantize(v: f64, max: f64) -> f64 {
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    (v * max).round()
}

/// Writes a one- or three-channel image as PNG, clamping to `[0, 1]`.
pub fn write_png(path: &Path, img: &Image, depth: BitDepth) -> Result<()> {
    let (w, h) = (img.width as u32, img.height as u32);
    let bad = || Error::shape(format!("cannot write a {}-channel image as PNG", img.channels));
    let dynimg = match (img.channels, depth) {
        (1, BitDepth::Eight) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, img.data.iter().map(|&v| quantize(v, 255.0) as u8).collect())
                .ok_or_else(bad)?,
        ),
        (1, BitDepth::Sixteen) => DynamicImage::ImageLuma16(
            ImageBuffer::<Luma<u16>, _>::from_raw(w, h, img.data.iter().map(|&v| quantize(v, 65535.0) as u16).collect())
                .ok_or_else(bad)?,
        ),
        (3, BitDepth::Eight) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, img.data.iter().map(|&v| quantize(v, 255.0) as u8).collect())
                .ok_or_else(bad)?,
        ),
        (3, BitDepth::Sixteen) => DynamicImage::ImageRgb16(
            ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, img.data.iter().map(|&v| quantize(v, 65535.0) as u16).collect())
                .ok_or_else(bad)?,
        ),
        _ => return Err(bad()),
    };
    dynimg.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
