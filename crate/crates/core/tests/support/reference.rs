//! Direct restatements of the measured quantities, written for clarity over
//! speed: full 2-D windows, two-pass moments, no separable filtering.

use olatkit::{EnvironmentMap, RadianceImage};

/// Channel `c` as a row-major grid of `f64`.
fn grid(img: &RadianceImage, c: usize) -> (usize, usize, Vec<f64>) {
    let v = (0..img.width() * img.height())
        .map(|i| f64::from(img.pixel(i % img.width(), i / img.width())[c]))
        .collect();
    (img.width(), img.height(), v)
}

fn window() -> Vec<Vec<f64>> {
    let mut w = vec![vec![0.0; 11]; 11];
    let mut total = 0.0;
    for (i, row) in w.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    for row in &mut w {
        for v in row {
            *v /= total;
        }
    }
    w
}

/// Mean SSIM and mean contrast-structure over every full window position.
fn scale_terms(w: usize, h: usize, x: &[f64], y: &[f64]) -> (f64, f64) {
    let g = window();
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let (mut ssim, mut cs, mut n) = (0.0, 0.0, 0.0);
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let at = |v: &[f64], i: usize, j: usize| v[(oy + i) * w + ox + j];
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    mx += g[i][j] * at(x, i, j);
                    my += g[i][j] * at(y, i, j);
                }
            }
            let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let (a, b) = (at(x, i, j) - mx, at(y, i, j) - my);
                    vx += g[i][j] * a * a;
                    vy += g[i][j] * b * b;
                    cov += g[i][j] * a * b;
                }
            }
            let l = (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
            let c = (2.0 * cov + c2) / (vx + vy + c2);
            ssim += l * c;
            cs += c;
            n += 1.0;
        }
    }
    (ssim / n, cs / n)
}

/// 2×2 block means; a trailing odd row or column pairs with itself.
fn pool(w: usize, h: usize, v: &[f64]) -> (usize, usize, Vec<f64>) {
    let (nw, nh) = ((w + 1) / 2, (h + 1) / 2);
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        for x in 0..nw {
            let mut s = 0.0;
            for (dy, dx) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
                let yy = (2 * y + dy).min(h - 1);
                let xx = (2 * x + dx).min(w - 1);
                s += v[yy * w + xx];
            }
            out.push(s / 4.0);
        }
    }
    (nw, nh, out)
}

/// Five-scale MS-SSIM with peak 1, channel-averaged; fewer scales (with
/// renormalised exponents) when the short side is below 11·2^(M−1).
pub fn ms_ssim(a: &RadianceImage, b: &RadianceImage) -> f64 {
    let exps = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
    let side = a.width().min(a.height());
    let m = (1..=5)
        .filter(|k| side >= 11 * (1 << (k - 1)))
        .max()
        .expect("image too small");
    // the standard exponents sum to 1.0001 and are used as published
    let norm: f64 = if m == 5 { 1.0 } else { exps[..m].iter().sum() };
    let mut total = 0.0;
    for c in 0..3 {
        let (mut w, mut h, mut x) = grid(a, c);
        let (_, _, mut y) = grid(b, c);
        let mut value = 1.0;
        for k in 0..m {
            let e = exps[k] / norm;
            let (s, cs) = scale_terms(w, h, &x, &y);
            if k == m - 1 {
                value *= s.max(0.0).powf(e);
            } else {
                value *= cs.max(0.0).powf(e);
                let px = pool(w, h, &x);
                y = pool(w, h, &y).2;
                (w, h, x) = px;
            }
        }
        total += value;
    }
    total / 3.0
}

/// `∫ L dω` per channel by midpoint quadrature over the latitude-longitude grid.
pub fn env_integral(env: &EnvironmentMap) -> [f64; 3] {
    let img = env.image();
    let (w, h) = (img.width() as f64, img.height() as f64);
    let mut acc = [0.0; 3];
    for row in 0..img.height() {
        let theta = (row as f64 + 0.5) * std::f64::consts::PI / h;
        let d_omega = theta.sin() * (std::f64::consts::PI / h) * (2.0 * std::f64::consts::PI / w);
        for col in 0..img.width() {
            let px = img.pixel(col, row);
            for c in 0..3 {
                acc[c] += f64::from(px[c]) * d_omega;
            }
        }
    }
    acc
}

/// PSNR with peak 1 over the pixels where `mask` is set.
pub fn masked_psnr(a: &RadianceImage, b: &RadianceImage, mask: &[bool]) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for (i, keep) in mask.iter().enumerate() {
        if !keep {
            continue;
        }
        let (p, q) = (
            a.pixel(i % a.width(), i / a.width()),
            b.pixel(i % a.width(), i / a.width()),
        );
        for c in 0..3 {
            se += (f64::from(p[c]) - f64::from(q[c])).powi(2);
            n += 1.0;
        }
    }
    10.0 * (1.0 / (se / n)).log10()
}

/// Mean Rec. 709 luminance over the masked pixels.
pub fn masked_luminance(img: &RadianceImage, mask: &[bool]) -> f64 {
    let (mut s, mut n) = (0.0, 0.0);
    for (i, keep) in mask.iter().enumerate() {
        if *keep {
            let p = img.pixel(i % img.width(), i / img.width());
            s += 0.2126 * f64::from(p[0]) + 0.7152 * f64::from(p[1]) + 0.0722 * f64::from(p[2]);
            n += 1.0;
        }
    }
    s / n
}

/// Variance of the 4-neighbour Laplacian of the luminance, interior only.
pub fn laplacian_variance(img: &RadianceImage) -> f64 {
    let (w, h) = img.dims();
    let lum = |x: usize, y: usize| {
        let p = img.pixel(x, y);
        0.2126 * f64::from(p[0]) + 0.7152 * f64::from(p[1]) + 0.0722 * f64::from(p[2])
    };
    let mut vals = Vec::new();
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            vals.push(
                lum(x - 1, y) + lum(x + 1, y) + lum(x, y - 1) + lum(x, y + 1) - 4.0 * lum(x, y),
            );
        }
    }
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64
}
