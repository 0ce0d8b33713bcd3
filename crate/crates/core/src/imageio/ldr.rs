use std::io::Cursor;
use std::path::Path;

use image::{ImageBuffer, ImageFormat, Luma, Rgb};

use super::{write_atomic, AlphaMatte, ImageError, RadianceImage, Result};

/// Display gamma applied to previews.
pub const PREVIEW_GAMMA: f64 = 2.2;

/// Linear value to a `max`-scaled integer code: `round(max · clamp(v)^(1/2.2))`.
pub fn encode_gamma(v: f32, max: u32) -> u32 {
    let v = f64::from(v).clamp(0.0, 1.0);
    (f64::from(max) * v.powf(1.0 / PREVIEW_GAMMA)).round() as u32
}

/// Integer code back to linear radiance.
pub fn decode_gamma(code: u32, max: u32) -> f32 {
    (f64::from(code) / f64::from(max)).powf(PREVIEW_GAMMA) as f32
}

fn png_bytes<P, C>(buf: ImageBuffer<P, C>) -> Result<Vec<u8>>
where
    P: image::Pixel + image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub(super) fn write_png(path: &Path, img: &RadianceImage, bits: u8) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes = if bits == 8 {
        let raw: Vec<u8> = img
            .data()
            .iter()
            .map(|&v| encode_gamma(v, 255) as u8)
            .collect();
        png_bytes(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("sized buffer"))?
    } else {
        let raw: Vec<u16> = img
            .data()
            .iter()
            .map(|&v| encode_gamma(v, 65535) as u16)
            .collect();
        png_bytes(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("sized buffer"))?
    };
    write_atomic(path, &bytes)
}

fn load(path: &Path) -> Result<image::DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| ImageError::io(path, e))?;
    Ok(image::load_from_memory_with_format(
        &bytes,
        ImageFormat::Png,
    )?)
}

pub(super) fn read_png(path: &Path) -> Result<RadianceImage> {
    let rgb = load(path)?.to_rgb16();
    let (w, h) = rgb.dimensions();
    let data = rgb
        .into_raw()
        .into_iter()
        .map(|c| decode_gamma(u32::from(c), 65535))
        .collect();
    RadianceImage::from_vec(w as usize, h as usize, data)
}

pub(super) fn read_png_matte(path: &Path) -> Result<AlphaMatte> {
    let grey = load(path)?.to_luma16();
    let (w, h) = grey.dimensions();
    let data = grey
        .into_raw()
        .into_iter()
        .map(|c| f32::from(c) / 65535.0)
        .collect();
    AlphaMatte::new(w as usize, h as usize, data)
}

pub(super) fn write_png_matte(path: &Path, matte: &AlphaMatte) -> Result<()> {
    let raw: Vec<u16> = matte
        .data()
        .iter()
        .map(|&a| (f64::from(a) * 65535.0).round() as u16)
        .collect();
    let buf =
        ImageBuffer::<Luma<u16>, _>::from_raw(matte.width() as u32, matte.height() as u32, raw)
            .expect("sized buffer");
    write_atomic(path, &png_bytes(buf)?)
}
