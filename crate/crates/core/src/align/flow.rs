//! Dense optical flow: coarse-to-fine iterative Lucas–Kanade with warping.
//!
//! Flow is *backward*: for `f = compute_flow(src, dst)`, `dst(p) ≈ src(p + f(p))`,
//! so `warp(src, &f)` resamples `src` into the geometry of `dst`.

use rayon::prelude::*;

use super::{AlignError, Result};
use crate::imageio::{bilinear_taps, lerp, Plane, RadianceImage};

/// Per-pixel displacement `(u, v)` in pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<[f32; 2]>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![[0.0; 2]; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 2]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
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

    pub fn data(&self) -> &[[f32; 2]] {
        &self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f32; 2] {
        self.data[y * self.width + x]
    }

    /// Bilinear sample, edge-clamped.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> [f32; 2] {
        let (x0, x1, fx) = bilinear_taps(x, self.width);
        let (y0, y1, fy) = bilinear_taps(y, self.height);
        let at = |xx: usize, yy: usize| self.data[yy * self.width + xx];
        let mut out = [0.0; 2];
        for (c, o) in out.iter_mut().enumerate() {
            let top = lerp(at(x0, y0)[c], at(x1, y0)[c], fx);
            let bot = lerp(at(x0, y1)[c], at(x1, y1)[c], fx);
            *o = lerp(top, bot, fy);
        }
        out
    }

    /// `self(p) + next(p + self(p))`: follows `self`, then `next` from where it landed.
    pub fn compose(&self, next: &FlowField) -> FlowField {
        assert_eq!(self.dims(), next.dims());
        let w = self.width;
        let mut data = self.data.clone();
        data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, g) in row.iter_mut().enumerate() {
                let h = next.sample(x as f32 + g[0], y as f32 + g[1]);
                g[0] += h[0];
                g[1] += h[1];
            }
        });
        FlowField {
            width: w,
            height: self.height,
            data,
        }
    }

    /// `(1 − t)·a + t·b`.
    pub fn lerp(a: &FlowField, b: &FlowField, t: f32) -> FlowField {
        assert_eq!(a.dims(), b.dims());
        FlowField {
            width: a.width,
            height: a.height,
            data: a
                .data
                .iter()
                .zip(&b.data)
                .map(|(p, q)| [lerp(p[0], q[0], t), lerp(p[1], q[1], t)])
                .collect(),
        }
    }

    /// Mean endpoint error against `other`, ignoring a `margin`-pixel border.
    pub fn endpoint_error(&self, other: &FlowField, margin: usize) -> f64 {
        assert_eq!(self.dims(), other.dims());
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in margin..self.height.saturating_sub(margin) {
            for x in margin..self.width.saturating_sub(margin) {
                let a = self.at(x, y);
                let b = other.at(x, y);
                sum += f64::from(a[0] - b[0]).hypot(f64::from(a[1] - b[1]));
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    pub fn max_magnitude(&self) -> f32 {
        self.data
            .iter()
            .map(|v| v[0].hypot(v[1]))
            .fold(0.0, f32::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    /// Pyramid levels including full resolution; reduced for small images.
    pub levels: usize,
    /// Size ratio between consecutive levels.
    pub scale: f32,
    /// Warping iterations per level.
    pub iterations: usize,
    /// Half-size of the square aggregation window.
    pub window_radius: usize,
    /// Tikhonov term added to the structure tensor, per window pixel.
    pub regularization: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self {
            levels: 4,
            scale: 0.5,
            iterations: 8,
            window_radius: 6,
            regularization: 1e-6,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AlignError::BadParams(m.to_string()));
        if self.levels == 0 {
            return bad("levels must be at least 1");
        }
        if !(self.scale > 0.0 && self.scale < 1.0) {
            return bad("scale must lie in (0, 1)");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if !(self.regularization > 0.0 && self.regularization.is_finite()) {
            return bad("regularization must be positive");
        }
        Ok(())
    }
}

/// Smallest pyramid side kept; coarser levels are dropped.
const MIN_LEVEL_SIDE: usize = 16;
/// Largest update per iteration, in level pixels.
const MAX_STEP: f32 = 1.0;

fn gaussian_blur(p: &Plane, sigma: f32) -> Plane {
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f32> = (-r..=r)
        .map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = k.iter().sum();
    let k: Vec<f32> = k.into_iter().map(|v| v / s).collect();
    let (w, h) = (p.width, p.height);
    let mut tmp = Plane::new(w, h);
    tmp.data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * p.at_clamped(x as isize + i as isize - r, y as isize))
                .sum();
        }
    });
    let mut out = Plane::new(w, h);
    out.data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp.at_clamped(x as isize, y as isize + i as isize - r))
                .sum();
        }
    });
    out
}

fn downsample(p: &Plane, scale: f32) -> Plane {
    let sigma = 0.5 / scale;
    let blurred = gaussian_blur(p, sigma);
    let w = ((p.width as f32 * scale).round() as usize).max(1);
    let h = ((p.height as f32 * scale).round() as usize).max(1);
    let sx = p.width as f32 / w as f32;
    let sy = p.height as f32 / h as f32;
    let mut out = Plane::new(w, h);
    out.data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        let fy = (y as f32 + 0.5) * sy - 0.5;
        for (x, o) in row.iter_mut().enumerate() {
            *o = blurred.sample((x as f32 + 0.5) * sx - 0.5, fy);
        }
    });
    out
}

fn upsample_flow(f: &FlowField, width: usize, height: usize) -> FlowField {
    let sx = f.width as f32 / width as f32;
    let sy = f.height as f32 / height as f32;
    let mut data = vec![[0.0f32; 2]; width * height];
    data.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let fy = (y as f32 + 0.5) * sy - 0.5;
        for (x, o) in row.iter_mut().enumerate() {
            let v = f.sample((x as f32 + 0.5) * sx - 0.5, fy);
            *o = [v[0] / sx, v[1] / sy];
        }
    });
    FlowField {
        width,
        height,
        data,
    }
}

/// `out(p) = src(p + flow(p))` for one plane.
pub(crate) fn warp_plane(src: &Plane, flow: &FlowField) -> Plane {
    let w = src.width;
    let mut out = Plane::new(w, src.height);
    out.data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            let f = flow.at(x, y);
            *o = src.sample(x as f32 + f[0], y as f32 + f[1]);
        }
    });
    out
}

/// Backward-warps every channel: `out(p) = src(p + flow(p))`, bilinear with
/// edge clamping. A zero flow reproduces `src` exactly.
pub fn warp(src: &RadianceImage, flow: &FlowField) -> Result<RadianceImage> {
    if src.dims() != flow.dims() {
        return Err(AlignError::DimensionMismatch(src.dims(), flow.dims()));
    }
    let w = src.width();
    let d = src.data();
    let mut out = vec![0f32; d.len()];
    out.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let f = flow.at(x, y);
            let (x0, x1, fx) = bilinear_taps(x as f32 + f[0], w);
            let (y0, y1, fy) = bilinear_taps(y as f32 + f[1], src.height());
            for c in 0..3 {
                let at = |xx: usize, yy: usize| d[(yy * w + xx) * 3 + c];
                let top = lerp(at(x0, y0), at(x1, y0), fx);
                let bot = lerp(at(x0, y1), at(x1, y1), fx);
                row[x * 3 + c] = lerp(top, bot, fy);
            }
        }
    });
    Ok(RadianceImage::from_vec_unchecked(w, src.height(), out))
}

/// Box sums of a row-major grid over a `(2r+1)²` window, clipped at the border.
fn box_sum(v: &[f64], w: usize, h: usize, r: usize) -> Vec<f64> {
    let mut rows = vec![0f64; w * h];
    rows.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let src = &v[y * w..(y + 1) * w];
        let mut prefix = vec![0f64; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + src[x];
        }
        for (x, o) in out.iter_mut().enumerate() {
            *o = prefix[(x + r + 1).min(w)] - prefix[x.saturating_sub(r)];
        }
    });
    let mut out = vec![0f64; w * h];
    // column pass via a running sum per column
    let mut acc = vec![0f64; w];
    for row in rows.chunks_exact(w).take(r.min(h)) {
        acc.iter_mut().zip(row).for_each(|(a, v)| *a += v);
    }
    for y in 0..h {
        if y + r < h {
            let add = &rows[(y + r) * w..(y + r + 1) * w];
            acc.iter_mut().zip(add).for_each(|(a, v)| *a += v);
        }
        if y > r {
            let sub = &rows[(y - r - 1) * w..(y - r) * w];
            acc.iter_mut().zip(sub).for_each(|(a, v)| *a -= v);
        }
        out[y * w..(y + 1) * w].copy_from_slice(&acc);
    }
    out
}

/// One level of warping iterations. Each pixel's residual is linearised around
/// its own flow, and neighbours are brought to that flow through their
/// structure tensors, so the update is a tensor-weighted average of the window
/// rather than an independent correction per pixel.
fn refine_level(src: &Plane, dst: &Plane, flow: &mut FlowField, p: &FlowParams) {
    let (w, h) = (dst.width, dst.height);
    let r = p.window_radius;
    let lambda = p.regularization * ((2 * r + 1) * (2 * r + 1)) as f64;
    for _ in 0..p.iterations {
        let warped = warp_plane(src, flow);
        let n = w * h;
        let mut terms = vec![[0f64; 7]; n];
        terms.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let yi = y as isize;
            let mean = |x: isize, y: isize| {
                0.5 * (f64::from(warped.at_clamped(x, y)) + f64::from(dst.at_clamped(x, y)))
            };
            for (x, t) in row.iter_mut().enumerate() {
                let f = flow.at(x, y);
                let (sx, sy) = (x as f32 + f[0], y as f32 + f[1]);
                // samples taken from outside the source carry no information
                if sx < 0.0 || sy < 0.0 || sx > (w - 1) as f32 || sy > (h - 1) as f32 {
                    continue;
                }
                let xi = x as isize;
                let gx = 0.5 * (mean(xi + 1, yi) - mean(xi - 1, yi));
                let gy = 0.5 * (mean(xi, yi + 1) - mean(xi, yi - 1));
                let it = f64::from(warped.at(x, y)) - f64::from(dst.at(x, y));
                let (u, v) = (f64::from(f[0]), f64::from(f[1]));
                let (xx, xy, yy) = (gx * gx, gx * gy, gy * gy);
                *t = [
                    xx,
                    xy,
                    yy,
                    gx * it,
                    gy * it,
                    xx * u + xy * v,
                    xy * u + yy * v,
                ];
            }
        });
        let sums: Vec<Vec<f64>> = (0..7)
            .into_par_iter()
            .map(|k| {
                let comp: Vec<f64> = terms.iter().map(|t| t[k]).collect();
                box_sum(&comp, w, h, r)
            })
            .collect();
        flow.data.par_iter_mut().enumerate().for_each(|(i, f)| {
            let a = sums[0][i] + lambda;
            let b = sums[1][i];
            let c = sums[2][i] + lambda;
            let (u, v) = (f64::from(f[0]), f64::from(f[1]));
            let rx = lambda * u - sums[3][i] + sums[5][i];
            let ry = lambda * v - sums[4][i] + sums[6][i];
            let det = a * c - b * b;
            let du = (c * rx - b * ry) / det - u;
            let dv = (a * ry - b * rx) / det - v;
            let m = du.hypot(dv);
            let s = if m > f64::from(MAX_STEP) {
                f64::from(MAX_STEP) / m
            } else {
                1.0
            };
            f[0] += (du * s) as f32;
            f[1] += (dv * s) as f32;
        });
    }
}

/// Estimates `f` with `dst(p) ≈ src(p + f(p))` from the luminance of both images.
/// Identical inputs give an exactly zero field.
pub fn compute_flow(src: &RadianceImage, dst: &RadianceImage, p: &FlowParams) -> Result<FlowField> {
    if src.dims() != dst.dims() {
        return Err(AlignError::DimensionMismatch(src.dims(), dst.dims()));
    }
    p.validate()?;
    compute_flow_planes(&src.luminance(), &dst.luminance(), p)
}

pub(crate) fn compute_flow_planes(src: &Plane, dst: &Plane, p: &FlowParams) -> Result<FlowField> {
    let mut pyr = vec![(src.clone(), dst.clone())];
    while pyr.len() < p.levels {
        let (s, d) = pyr.last().expect("non-empty");
        let next_w = (s.width as f32 * p.scale).round() as usize;
        let next_h = (s.height as f32 * p.scale).round() as usize;
        if next_w.min(next_h) < MIN_LEVEL_SIDE {
            break;
        }
        let level = (downsample(s, p.scale), downsample(d, p.scale));
        pyr.push(level);
    }
    let coarse = &pyr.last().expect("non-empty").1;
    let mut flow = FlowField::zeros(coarse.width, coarse.height);
    for (s, d) in pyr.iter().rev() {
        if flow.dims() != (d.width, d.height) {
            flow = upsample_flow(&flow, d.width, d.height);
        }
        refine_level(s, d, &mut flow, p);
    }
    if flow
        .data
        .iter()
        .any(|v| !v[0].is_finite() || !v[1].is_finite())
    {
        return Err(AlignError::NonFiniteFlow);
    }
    Ok(flow)
}
