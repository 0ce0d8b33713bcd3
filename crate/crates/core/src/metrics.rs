//! Image-quality measurements and loss terms, evaluated without gradients.
//!
//! SSIM and MS-SSIM use an 11×11 Gaussian window (σ = 1.5) applied over the
//! valid region only, stability constants `K1 = 0.01`, `K2 = 0.03`, and the
//! five-scale exponents of the original multi-scale SSIM. Colour images are
//! scored per channel and the channel scores averaged.

use std::fmt::Write as _;

use rayon::prelude::*;
use thiserror::Error;

use crate::imageio::{NormalMap, RadianceImage};
use crate::relight::OlatSet;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("size mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("set size mismatch: {0} vs {1} images")]
    SetMismatch(usize, usize),
    #[error("image {0:?} is smaller than the {1}px similarity window")]
    TooSmall((usize, usize), usize),
    #[error("every pixel of the normal maps is masked")]
    AllMasked,
    #[error("peak must be positive")]
    BadPeak,
    #[error("no frames to evaluate")]
    NoFrames,
}

pub type Result<T, E = MetricError> = std::result::Result<T, E>;

/// Exponents of the five scales, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(MetricError::DimensionMismatch(a, b));
    }
    Ok(())
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &RadianceImage, b: &RadianceImage) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum();
    Ok(s / a.data().len() as f64)
}

/// Mean absolute error over all pixels and channels.
pub fn mae(a: &RadianceImage, b: &RadianceImage) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs())
        .sum();
    Ok(s / a.data().len() as f64)
}

/// `10·log10(peak² / MSE)` in dB; `f64::INFINITY` for identical images.
pub fn psnr(a: &RadianceImage, b: &RadianceImage, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(MetricError::BadPeak);
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Channel plane in `f64` for the similarity kernels.
#[derive(Clone)]
struct Grid {
    w: usize,
    h: usize,
    v: Vec<f64>,
}

impl Grid {
    fn channel(img: &RadianceImage, c: usize) -> Self {
        Grid {
            w: img.width(),
            h: img.height(),
            v: img
                .data()
                .chunks_exact(3)
                .map(|p| f64::from(p[c]))
                .collect(),
        }
    }

    fn map2(&self, o: &Grid, f: impl Fn(f64, f64) -> f64) -> Grid {
        Grid {
            w: self.w,
            h: self.h,
            v: self.v.iter().zip(&o.v).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    /// 2×2 mean pooling; an odd trailing row/column is averaged with itself.
    fn halve(&self) -> Grid {
        let (w, h) = (self.w.div_ceil(2), self.h.div_ceil(2));
        let mut v = Vec::with_capacity(w * h);
        for y in 0..h {
            let (y0, y1) = (2 * y, (2 * y + 1).min(self.h - 1));
            for x in 0..w {
                let (x0, x1) = (2 * x, (2 * x + 1).min(self.w - 1));
                v.push(
                    (self.v[y0 * self.w + x0]
                        + self.v[y0 * self.w + x1]
                        + self.v[y1 * self.w + x0]
                        + self.v[y1 * self.w + x1])
                        * 0.25,
                );
            }
        }
        Grid { w, h, v }
    }

    /// Separable Gaussian filter, valid region only.
    fn filter_valid(&self, k: &[f64]) -> Grid {
        let n = k.len();
        let ow = self.w + 1 - n;
        let oh = self.h + 1 - n;
        let mut tmp = vec![0f64; ow * self.h];
        for y in 0..self.h {
            let row = &self.v[y * self.w..(y + 1) * self.w];
            for x in 0..ow {
                tmp[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
            }
        }
        let mut v = vec![0f64; ow * oh];
        for y in 0..oh {
            for x in 0..ow {
                let mut s = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    s += kv * tmp[(y + i) * ow + x];
                }
                v[y * ow + x] = s;
            }
        }
        Grid { w: ow, h: oh, v }
    }
}

fn gaussian_kernel() -> Vec<f64> {
    let c = (WINDOW / 2) as f64;
    let k: Vec<f64> = (0..WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM and mean contrast-structure term at one scale.
fn ssim_terms(x: &Grid, y: &Grid, k: &[f64], peak: f64) -> (f64, f64) {
    let c1 = (K1 * peak).powi(2);
    let c2 = (K2 * peak).powi(2);
    let mx = x.filter_valid(k);
    let my = y.filter_valid(k);
    let xx = x.map2(x, |a, b| a * b).filter_valid(k);
    let yy = y.map2(y, |a, b| a * b).filter_valid(k);
    let xy = x.map2(y, |a, b| a * b).filter_valid(k);
    let n = mx.v.len() as f64;
    let mut ssim = 0.0;
    let mut cs = 0.0;
    for i in 0..mx.v.len() {
        let (ux, uy) = (mx.v[i], my.v[i]);
        let sxx = xx.v[i] - ux * ux;
        let syy = yy.v[i] - uy * uy;
        let sxy = xy.v[i] - ux * uy;
        let l = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
        let c = (2.0 * sxy + c2) / (sxx + syy + c2);
        ssim += l * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

/// Parameters of the similarity indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimParams {
    /// Dynamic range `L` of the constants `(K·L)²`.
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self { peak: 1.0 }
    }
}

/// Number of scales `M` with `min(width, height) ≥ 11·2^(M−1)`, at most five.
pub fn ms_ssim_scales(width: usize, height: usize) -> usize {
    let side = width.min(height);
    (0..MS_SSIM_WEIGHTS.len())
        .take_while(|&j| side >= WINDOW << j)
        .count()
}

pub fn ssim(a: &RadianceImage, b: &RadianceImage) -> Result<f64> {
    ssim_with(a, b, SsimParams::default())
}

/// Single-scale SSIM.
pub fn ssim_with(a: &RadianceImage, b: &RadianceImage, p: SsimParams) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    if a.width().min(a.height()) < WINDOW {
        return Err(MetricError::TooSmall(a.dims(), WINDOW));
    }
    let k = gaussian_kernel();
    let total: f64 = (0..3)
        .map(|c| ssim_terms(&Grid::channel(a, c), &Grid::channel(b, c), &k, p.peak).0)
        .sum();
    Ok(total / 3.0)
}

pub fn ms_ssim(a: &RadianceImage, b: &RadianceImage) -> Result<f64> {
    ms_ssim_with(a, b, SsimParams::default())
}

/// Multi-scale SSIM. Images below 176 px on the short side use fewer scales
/// (with renormalised exponents) and log a warning.
pub fn ms_ssim_with(a: &RadianceImage, b: &RadianceImage, p: SsimParams) -> Result<f64> {
    check_dims(a.dims(), b.dims())?;
    let scales = ms_ssim_scales(a.width(), a.height());
    if scales == 0 {
        return Err(MetricError::TooSmall(a.dims(), WINDOW));
    }
    let mut weights = MS_SSIM_WEIGHTS[..scales].to_vec();
    if scales < MS_SSIM_WEIGHTS.len() {
        log::warn!(
            "{}x{} image supports only {scales} MS-SSIM scales",
            a.width(),
            a.height()
        );
        let s: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= s);
    }
    let k = gaussian_kernel();
    let mut total = 0.0;
    for c in 0..3 {
        let mut x = Grid::channel(a, c);
        let mut y = Grid::channel(b, c);
        let mut value = 1.0;
        for (j, w) in weights.iter().enumerate() {
            let (s, cs) = ssim_terms(&x, &y, &k, p.peak);
            if j + 1 == scales {
                value *= s.max(0.0).powf(*w);
            } else {
                value *= cs.max(0.0).powf(*w);
                x = x.halve();
                y = y.halve();
            }
        }
        total += value;
    }
    Ok(total / 3.0)
}

/// Both terms of the reflectance-field photometric loss, aggregated as means
/// over the set's images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhotometricLoss {
    pub mse: f64,
    /// Mean MS-SSIM similarity over images.
    pub ms_ssim: f64,
    /// `1 − ms_ssim`, the loss form of the similarity term.
    pub ms_ssim_loss: f64,
    /// `mse + ms_ssim_loss`, unweighted.
    pub total: f64,
}

pub fn photometric_loss(pred: &OlatSet, gt: &OlatSet) -> Result<PhotometricLoss> {
    if pred.len() != gt.len() {
        return Err(MetricError::SetMismatch(pred.len(), gt.len()));
    }
    check_dims(pred.dims(), gt.dims())?;
    let terms = pred
        .images()
        .par_iter()
        .zip(gt.images().par_iter())
        .map(|(p, g)| Ok((mse(p, g)?, ms_ssim(p, g)?)))
        .collect::<Result<Vec<_>>>()?;
    let n = terms.len() as f64;
    let mse = terms.iter().map(|t| t.0).sum::<f64>() / n;
    let sim = terms.iter().map(|t| t.1).sum::<f64>() / n;
    Ok(PhotometricLoss {
        mse,
        ms_ssim: sim,
        ms_ssim_loss: 1.0 - sim,
        total: mse + (1.0 - sim),
    })
}

/// Mean per-pixel cosine distance `1 − n̂_pred · n̂_gt`. Both maps are
/// renormalised; pixels where either vector is zero are skipped.
pub fn normal_angular_error(pred: &NormalMap, gt: &NormalMap) -> Result<f64> {
    check_dims((pred.width, pred.height), (gt.width, gt.height))?;
    let unit = |v: [f32; 3]| {
        let v = v.map(f64::from);
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        (n > 0.0 && n.is_finite()).then(|| v.map(|c| c / n))
    };
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.data.iter().zip(&gt.data) {
        if let (Some(p), Some(g)) = (unit(*p), unit(*g)) {
            let cos = (p[0] * g[0] + p[1] * g[1] + p[2] * g[2]).clamp(-1.0, 1.0);
            sum += 1.0 - cos;
            count += 1;
        }
    }
    if count == 0 {
        return Err(MetricError::AllMasked);
    }
    Ok(sum / count as f64)
}

/// Scores of one frame pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameMetrics {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: f64,
    pub mae: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    fn of(values: impl Iterator<Item = f64> + Clone) -> Self {
        let n = values.clone().count() as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = if mean.is_finite() {
            values.map(|v| (v - mean).powi(2)).sum::<f64>() / n
        } else {
            0.0
        };
        Summary {
            mean,
            std: var.sqrt(),
        }
    }

    fn cell(&self, decimals: usize) -> String {
        if self.mean.is_infinite() {
            "inf".to_string()
        } else {
            format!("{:.*}±{:.*}", decimals, self.mean, decimals, self.std)
        }
    }
}

/// Per-frame scores with mean ± std summaries.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub frames: Vec<FrameMetrics>,
    pub psnr: Summary,
    pub ssim: Summary,
    pub ms_ssim: Summary,
    pub mae: Summary,
}

impl MetricReport {
    /// Scores `(name, prediction, reference)` triples. Frames are scored in
    /// parallel and aggregated in input order.
    pub fn evaluate(
        pairs: &[(String, RadianceImage, RadianceImage)],
        peak: f64,
    ) -> Result<MetricReport> {
        if pairs.is_empty() {
            return Err(MetricError::NoFrames);
        }
        let frames = pairs
            .par_iter()
            .map(|(name, pred, gt)| {
                Ok(FrameMetrics {
                    name: name.clone(),
                    psnr: psnr(pred, gt, peak)?,
                    ssim: ssim_with(pred, gt, SsimParams { peak })?,
                    ms_ssim: ms_ssim_with(pred, gt, SsimParams { peak })?,
                    mae: mae(pred, gt)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(MetricReport {
            psnr: Summary::of(frames.iter().map(|f| f.psnr)),
            ssim: Summary::of(frames.iter().map(|f| f.ssim)),
            ms_ssim: Summary::of(frames.iter().map(|f| f.ms_ssim)),
            mae: Summary::of(frames.iter().map(|f| f.mae)),
            frames,
        })
    }

    /// Plain-text table: one summary row of `mean±std`, then one row per frame.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<24} {:>16} {:>16} {:>16} {:>16}",
            "", "PSNR(dB)↑", "SSIM↑", "MS-SSIM↑", "MAE↓"
        );
        let _ = writeln!(
            s,
            "{:<24} {:>16} {:>16} {:>16} {:>16}",
            format!("mean±std (n={})", self.frames.len()),
            self.psnr.cell(3),
            self.ssim.cell(3),
            self.ms_ssim.cell(3),
            self.mae.cell(3)
        );
        for f in &self.frames {
            let _ = writeln!(
                s,
                "{:<24} {:>16.3} {:>16.4} {:>16.4} {:>16.4}",
                f.name, f.psnr, f.ssim, f.ms_ssim, f.mae
            );
        }
        s
    }
}
