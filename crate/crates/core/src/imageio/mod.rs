//! Image containers and file I/O.
//!
//! Everything inside the crate is linear radiance stored as `f32`. Gamma is
//! only applied when a preview PNG is written, and undone when one is read.
//!
//! On-disk formats:
//!
//! * HDR: portable float map (`PF`, little-endian, scanlines bottom-to-top).
//! * LDR previews: 8- or 16-bit RGB PNG, gamma 2.2.
//! * OLAT sets: a `set_<anchor:06>/` directory holding `led_<index:03>.pfm`
//!   files plus a `manifest.txt` (see [`olat_dir`]).

mod bayer;
mod ldr;
pub mod olat_dir;
mod pfm;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use bayer::{demosaic, BayerFrame, BayerPattern};
pub use ldr::{decode_gamma, encode_gamma, PREVIEW_GAMMA};
pub use olat_dir::{read_olat_set, set_dir_name, write_olat_set};
pub use pfm::{read_pfm_raw, write_pfm_raw, RawPfm};

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("unsupported extension for {0}")]
    UnsupportedExtension(PathBuf),
    #[error("{0}: truncated file")]
    Truncated(PathBuf),
    #[error("{path}: {msg}")]
    Malformed { path: PathBuf, msg: String },
    #[error("image dimensions {width}x{height} overflow")]
    DimensionOverflow { width: usize, height: usize },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("data length {got} does not match {width}x{height}x{channels}")]
    LengthMismatch {
        width: usize,
        height: usize,
        channels: usize,
        got: usize,
    },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("negative sample at index {0}")]
    Negative(usize),
    #[error("bayer frame dimensions must be even, got {0}x{1}")]
    OddDimensions(usize, usize),
    #[error("png: {0}")]
    Png(#[from] image::ImageError),
}

impl ImageError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        ImageError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn malformed(path: &Path, msg: impl Into<String>) -> Self {
        ImageError::Malformed {
            path: path.to_path_buf(),
            msg: msg.into(),
        }
    }

    /// True for failures of the underlying filesystem rather than of the content.
    pub fn is_io(&self) -> bool {
        matches!(self, ImageError::Io { .. })
    }
}

pub type Result<T, E = ImageError> = std::result::Result<T, E>;

fn checked_len(width: usize, height: usize, channels: usize) -> Result<usize> {
    width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(channels))
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .ok_or(ImageError::DimensionOverflow { width, height })
}

/// Row-major, 3-channel, linear-radiance raster.
///
/// All samples are finite and non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct RadianceImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl RadianceImage {
    /// Black image.
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    /// # Panics
    /// If `rgb` holds a negative or non-finite component.
    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        assert!(rgb.iter().all(|v| v.is_finite() && *v >= 0.0));
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Builds an image by evaluating `f(x, y)` for every pixel.
    ///
    /// # Panics
    /// If `f` returns a negative or non-finite component.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                let px = f(x, y);
                assert!(
                    px.iter().all(|v| v.is_finite() && *v >= 0.0),
                    "invalid radiance {px:?} at ({x}, {y})"
                );
                data.extend_from_slice(&px);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Strict constructor: rejects negative and non-finite samples.
    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        Self::check_len(width, height, data.len())?;
        for (i, v) in data.iter().enumerate() {
            if !v.is_finite() {
                return Err(ImageError::NonFinite(i));
            }
            if *v < 0.0 {
                return Err(ImageError::Negative(i));
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Ingest constructor: negative samples are clamped to zero and counted.
    /// Non-finite samples are still an error.
    pub fn ingest(width: usize, height: usize, mut data: Vec<f32>) -> Result<(Self, usize)> {
        Self::check_len(width, height, data.len())?;
        let mut clamped = 0;
        for (i, v) in data.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(ImageError::NonFinite(i));
            }
            if *v < 0.0 {
                *v = 0.0;
                clamped += 1;
            }
        }
        Ok((
            Self {
                width,
                height,
                data,
            },
            clamped,
        ))
    }

    /// For producers whose arithmetic already guarantees the invariants.
    pub(crate) fn from_vec_unchecked(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height * 3);
        debug_assert!(data.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self {
            width,
            height,
            data,
        }
    }

    fn check_len(width: usize, height: usize, got: usize) -> Result<()> {
        if checked_len(width, height, 3)? != got {
            return Err(ImageError::LengthMismatch {
                width,
                height,
                channels: 3,
                got,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_dims(&self, other: &RadianceImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(ImageError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Rec. 709 luminance plane.
    pub fn luminance(&self) -> Plane {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| 0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2])
            .collect();
        Plane::from_vec(self.width, self.height, data)
    }

    /// One colour channel as a plane.
    pub fn channel(&self, c: usize) -> Plane {
        let data = self.data.chunks_exact(3).map(|p| p[c]).collect();
        Plane::from_vec(self.width, self.height, data)
    }

    /// Left-right mirror image.
    pub fn mirrored_horizontal(&self) -> RadianceImage {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend_from_slice(&self.pixel(x, y));
            }
        }
        Self::from_vec_unchecked(self.width, self.height, data)
    }

    /// Sub-rectangle copy.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> RadianceImage {
        assert!(x0 + width <= self.width && y0 + height <= self.height);
        let mut data = Vec::with_capacity(width * height * 3);
        for y in y0..y0 + height {
            let row = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[row..row + width * 3]);
        }
        Self::from_vec_unchecked(width, height, data)
    }
}

/// Single-channel `f32` grid used for luminance, pyramids and metric windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Sample with coordinates clamped to the border.
    #[inline]
    pub fn at_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.at(x, y)
    }

    /// Bilinear sample at a real-valued position; edge-clamped outside the grid.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let (x0, x1, fx) = bilinear_taps(x, self.width);
        let (y0, y1, fy) = bilinear_taps(y, self.height);
        let r0 = y0 * self.width;
        let r1 = y1 * self.width;
        let top = lerp(self.data[r0 + x0], self.data[r0 + x1], fx);
        let bot = lerp(self.data[r1 + x0], self.data[r1 + x1], fx);
        lerp(top, bot, fy)
    }
}

/// Neighbouring integer taps and fractional weight for bilinear sampling with
/// edge clamping. An integral in-range coordinate yields weight exactly zero.
#[inline]
pub(crate) fn bilinear_taps(v: f32, len: usize) -> (usize, usize, f32) {
    let max = (len - 1) as f32;
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, max) };
    let f = v.floor();
    let i0 = f as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, v - f)
}

#[inline]
pub(crate) fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + (b - a) * t
}

/// Per-pixel foreground coverage in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct AlphaMatte {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl AlphaMatte {
    /// Values are clamped into [0, 1]; NaN is rejected.
    pub fn new(width: usize, height: usize, mut data: Vec<f32>) -> Result<Self> {
        if checked_len(width, height, 1)? != data.len() {
            return Err(ImageError::LengthMismatch {
                width,
                height,
                channels: 1,
                got: data.len(),
            });
        }
        for (i, v) in data.iter_mut().enumerate() {
            if v.is_nan() {
                return Err(ImageError::NonFinite(i));
            }
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, alpha: f32) -> Self {
        Self::new(width, height, vec![alpha; width * height]).expect("valid constant matte")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}

/// Per-pixel 3-vectors, e.g. surface normals. Unlike [`RadianceImage`] the
/// components may be negative; a zero vector marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f32; 3]>,
}

impl NormalMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f32; 3] {
        self.data[y * self.width + x]
    }

    pub fn write_pfm(&self, path: &Path) -> Result<()> {
        let flat: Vec<f32> = self.data.iter().flatten().copied().collect();
        write_pfm_raw(path, self.width, self.height, 3, &flat)
    }

    pub fn read_pfm(path: &Path) -> Result<Self> {
        let raw = read_pfm_raw(path)?;
        if raw.channels != 3 {
            return Err(ImageError::malformed(
                path,
                "normal map must have 3 channels",
            ));
        }
        if let Some(i) = raw.data.iter().position(|v| !v.is_finite()) {
            return Err(ImageError::NonFinite(i));
        }
        let data = raw
            .data
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Self {
            width: raw.width,
            height: raw.height,
            data,
        })
    }
}

/// File encodings accepted by [`write_image`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Encoding {
    /// Lossless portable float map (`.pfm`).
    Float,
    /// 8-bit gamma-2.2 PNG preview.
    Png8,
    /// 16-bit gamma-2.2 PNG preview.
    Png16,
}

fn extension(path: &Path) -> Option<String> {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
}

/// Reads a `.pfm` (linear) or `.png` (gamma-decoded) image. Returns the image
/// and the number of negative samples clamped to zero.
pub fn read_image(path: &Path) -> Result<(RadianceImage, usize)> {
    match extension(path).as_deref() {
        Some("pfm") => {
            let raw = read_pfm_raw(path)?;
            let data = match raw.channels {
                3 => raw.data,
                _ => raw.data.iter().flat_map(|&v| [v, v, v]).collect(),
            };
            RadianceImage::ingest(raw.width, raw.height, data)
        }
        Some("png") => Ok((ldr::read_png(path)?, 0)),
        _ => Err(ImageError::UnsupportedExtension(path.to_path_buf())),
    }
}

/// Writes `image` atomically. The extension must agree with `encoding`.
pub fn write_image(path: &Path, image: &RadianceImage, encoding: Encoding) -> Result<()> {
    match (extension(path).as_deref(), encoding) {
        (Some("pfm"), Encoding::Float) => {
            write_pfm_raw(path, image.width, image.height, 3, &image.data)
        }
        (Some("png"), Encoding::Png8) => ldr::write_png(path, image, 8),
        (Some("png"), Encoding::Png16) => ldr::write_png(path, image, 16),
        _ => Err(ImageError::UnsupportedExtension(path.to_path_buf())),
    }
}

/// Reads a matte from a `.pfm` (channel mean) or a `.png` (linear grey, no gamma).
pub fn read_matte(path: &Path) -> Result<AlphaMatte> {
    match extension(path).as_deref() {
        Some("pfm") => {
            let raw = read_pfm_raw(path)?;
            let data = raw
                .data
                .chunks_exact(raw.channels)
                .map(|c| c.iter().sum::<f32>() / raw.channels as f32)
                .collect();
            AlphaMatte::new(raw.width, raw.height, data)
        }
        Some("png") => ldr::read_png_matte(path),
        _ => Err(ImageError::UnsupportedExtension(path.to_path_buf())),
    }
}

/// Writes a matte as 16-bit linear grey PNG or as a 3-channel PFM.
pub fn write_matte(path: &Path, matte: &AlphaMatte) -> Result<()> {
    match extension(path).as_deref() {
        Some("pfm") => {
            let flat: Vec<f32> = matte.data.iter().flat_map(|&v| [v, v, v]).collect();
            write_pfm_raw(path, matte.width, matte.height, 3, &flat)
        }
        Some("png") => ldr::write_png_matte(path, matte),
        _ => Err(ImageError::UnsupportedExtension(path.to_path_buf())),
    }
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place,
/// so readers never observe a partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| ImageError::malformed(path, "path has no file name"))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = dir.join(tmp_name);
    fs::write(&tmp, bytes).map_err(|e| ImageError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        ImageError::io(path, e)
    })
}
