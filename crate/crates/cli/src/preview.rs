//! Tone-mapped previews and contact sheets.

use olatkit::RadianceImage;

/// Exposure that maps the 99th percentile sample of `images` to 1.
pub fn auto_exposure<'a>(images: impl IntoIterator<Item = &'a RadianceImage>) -> f32 {
    let mut samples: Vec<f32> = images
        .into_iter()
        .flat_map(|img| img.data().iter().copied())
        .filter(|v| *v > 0.0)
        .collect();
    if samples.is_empty() {
        return 1.0;
    }
    let k = (samples.len() - 1) * 99 / 100;
    let (_, p99, _) = samples.select_nth_unstable_by(k, f32::total_cmp);
    if *p99 > 0.0 {
        1.0 / *p99
    } else {
        1.0
    }
}

pub fn exposed(img: &RadianceImage, exposure: f32) -> RadianceImage {
    let data = img.data().iter().map(|v| v * exposure).collect();
    RadianceImage::from_vec(img.width(), img.height(), data).expect("finite scaled image")
}

/// Box-filter downscale by an integer factor (edge blocks are partial).
fn shrink(img: &RadianceImage, f: usize) -> RadianceImage {
    if f <= 1 {
        return img.clone();
    }
    let (w, h) = (img.width().div_ceil(f), img.height().div_ceil(f));
    RadianceImage::from_fn(w, h, |x, y| {
        let mut acc = [0f32; 3];
        let mut n = 0.0;
        for yy in y * f..((y + 1) * f).min(img.height()) {
            for xx in x * f..((x + 1) * f).min(img.width()) {
                let p = img.pixel(xx, yy);
                for c in 0..3 {
                    acc[c] += p[c];
                }
                n += 1.0;
            }
        }
        acc.map(|v| v / n)
    })
}

/// Grid of tiles at most `tile` pixels wide, two-pixel black gutters, one
/// common exposure so relative brightness is preserved.
pub fn contact_sheet(images: &[RadianceImage], tile: usize) -> RadianceImage {
    assert!(!images.is_empty());
    let exposure = auto_exposure(images);
    let factor = images[0].width().div_ceil(tile.max(1)).max(1);
    let tiles: Vec<RadianceImage> = images
        .iter()
        .map(|i| shrink(&exposed(i, exposure), factor))
        .collect();
    let cols = (images.len() as f64).sqrt().ceil() as usize;
    let rows = images.len().div_ceil(cols);
    let (tw, th) = tiles[0].dims();
    let gap = 2;
    let w = cols * (tw + gap) + gap;
    let h = rows * (th + gap) + gap;
    RadianceImage::from_fn(w, h, |x, y| {
        let (cx, cy) = (x.checked_sub(gap), y.checked_sub(gap));
        let (Some(cx), Some(cy)) = (cx, cy) else {
            return [0.0; 3];
        };
        let (col, ox) = (cx / (tw + gap), cx % (tw + gap));
        let (row, oy) = (cy / (th + gap), cy % (th + gap));
        match tiles.get(row * cols + col) {
            Some(t) if ox < tw && oy < th && t.dims() == (tw, th) => t.pixel(ox, oy),
            _ => [0.0; 3],
        }
    })
}
