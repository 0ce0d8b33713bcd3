use std::str::FromStr;

use rayon::prelude::*;

use super::{ImageError, RadianceImage, Result};

/// Colour layout of the top-left 2×2 cell of a mosaic.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BayerPattern {
    Rggb,
    Bggr,
    Grbg,
    Gbrg,
}

const R: u8 = 0;
const G: u8 = 1;
const B: u8 = 2;

impl BayerPattern {
    fn cell(self) -> [[u8; 2]; 2] {
        match self {
            BayerPattern::Rggb => [[R, G], [G, B]],
            BayerPattern::Bggr => [[B, G], [G, R]],
            BayerPattern::Grbg => [[G, R], [B, G]],
            BayerPattern::Gbrg => [[G, B], [R, G]],
        }
    }

    /// Channel sampled at `(x, y)`: 0 = red, 1 = green, 2 = blue.
    #[inline]
    pub fn channel_at(self, x: usize, y: usize) -> usize {
        self.cell()[y & 1][x & 1] as usize
    }

    /// Label of the same sensor after a left-right flip of an even-width frame.
    pub fn mirrored_horizontal(self) -> Self {
        match self {
            BayerPattern::Rggb => BayerPattern::Grbg,
            BayerPattern::Grbg => BayerPattern::Rggb,
            BayerPattern::Bggr => BayerPattern::Gbrg,
            BayerPattern::Gbrg => BayerPattern::Bggr,
        }
    }
}

impl FromStr for BayerPattern {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "rggb" => Ok(BayerPattern::Rggb),
            "bggr" => Ok(BayerPattern::Bggr),
            "grbg" => Ok(BayerPattern::Grbg),
            "gbrg" => Ok(BayerPattern::Gbrg),
            _ => Err(format!("unknown bayer pattern {s:?}")),
        }
    }
}

/// Raw 8-bit colour-filter-array frame.
#[derive(Clone, Debug, PartialEq)]
pub struct BayerFrame {
    width: usize,
    height: usize,
    data: Vec<u8>,
    pattern: BayerPattern,
}

impl BayerFrame {
    pub fn new(width: usize, height: usize, data: Vec<u8>, pattern: BayerPattern) -> Result<Self> {
        if !width.is_multiple_of(2) || !height.is_multiple_of(2) || width == 0 || height == 0 {
            return Err(ImageError::OddDimensions(width, height));
        }
        if width.checked_mul(height) != Some(data.len()) {
            return Err(ImageError::LengthMismatch {
                width,
                height,
                channels: 1,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
            pattern,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pattern(&self) -> BayerPattern {
        self.pattern
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn mirrored_horizontal(&self) -> BayerFrame {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        BayerFrame {
            width: self.width,
            height: self.height,
            data,
            pattern: self.pattern.mirrored_horizontal(),
        }
    }
}

/// Reflect-101 index: -1 -> 1, len -> len - 2. Keeps the CFA parity of the
/// mirrored sample equal to that of the virtual one.
#[inline]
fn reflect(i: isize, len: usize) -> usize {
    let n = len as isize;
    let r = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    r as usize
}

/// Bilinear demosaic. Each missing channel is the mean of the same-colour
/// samples in the 3×3 neighbourhood, which for a Bayer layout is the usual
/// 2- or 4-tap bilinear stencil. Output is `code / 255` (assumed linear).
pub fn demosaic(frame: &BayerFrame) -> RadianceImage {
    let (w, h) = (frame.width, frame.height);
    let pat = frame.pattern;
    let mut out = vec![0f32; w * h * 3];
    out.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let own = pat.channel_at(x, y);
            // integer sums keep the result independent of summation order
            let mut sum = [0u32; 3];
            let mut cnt = [0u32; 3];
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let sx = reflect(x as isize + dx, w);
                    let sy = reflect(y as isize + dy, h);
                    // parity of the virtual tap decides its colour
                    let c = pat.channel_at(
                        (x as isize + dx).rem_euclid(2) as usize,
                        (y as isize + dy).rem_euclid(2) as usize,
                    );
                    sum[c] += u32::from(frame.data[sy * w + sx]);
                    cnt[c] += 1;
                }
            }
            for c in 0..3 {
                let v = if c == own {
                    f32::from(frame.data[y * w + x]) / 255.0
                } else {
                    (sum[c] as f32) / (cnt[c] as f32 * 255.0)
                };
                row[x * 3 + c] = v;
            }
        }
    });
    RadianceImage::from_vec_unchecked(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pattern() -> impl Strategy<Value = BayerPattern> {
        prop_oneof![
            Just(BayerPattern::Rggb),
            Just(BayerPattern::Bggr),
            Just(BayerPattern::Grbg),
            Just(BayerPattern::Gbrg),
        ]
    }

    #[test]
    fn uniform_white_mosaic_is_white() {
        let f = BayerFrame::new(8, 6, vec![255; 48], BayerPattern::Rggb).unwrap();
        let img = demosaic(&f);
        assert!(img.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn odd_dimensions_are_rejected() {
        assert!(matches!(
            BayerFrame::new(7, 6, vec![0; 42], BayerPattern::Rggb),
            Err(ImageError::OddDimensions(7, 6))
        ));
    }

    #[test]
    fn green_impulse_matches_hand_stencil() {
        // RGGB: (odd x, even y) is a green site on a red row.
        let (w, h) = (12, 12);
        let (ix, iy) = (5, 4);
        let mut data = vec![0u8; w * h];
        data[iy * w + ix] = 255;
        let img = demosaic(&BayerFrame::new(w, h, data, BayerPattern::Rggb).unwrap());
        for y in 0..h {
            for x in 0..w {
                let [r, g, b] = img.pixel(x, y);
                assert_eq!(r, 0.0);
                assert_eq!(b, 0.0);
                let dx = x as isize - ix as isize;
                let dy = y as isize - iy as isize;
                let expected = match (dx.abs(), dy.abs()) {
                    (0, 0) => 1.0,
                    // red and blue sites average their four green neighbours
                    (1, 0) | (0, 1) => 0.25,
                    _ => 0.0,
                };
                assert_eq!(g, expected, "at ({x}, {y})");
            }
        }
    }

    #[test]
    fn capture_resolution_is_preserved() {
        let f = BayerFrame::new(2048, 1440, vec![17; 2048 * 1440], BayerPattern::Gbrg).unwrap();
        let img = demosaic(&f);
        assert_eq!(img.dims(), (2048, 1440));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn demosaic_commutes_with_mirroring(
            pat in pattern(),
            (w, h, data) in (1usize..6, 1usize..6).prop_flat_map(|(hw, hh)| {
                let (w, h) = (hw * 2, hh * 2);
                (Just(w), Just(h), proptest::collection::vec(any::<u8>(), w * h))
            })
        ) {
            let f = BayerFrame::new(w, h, data, pat).unwrap();
            let a = demosaic(&f).mirrored_horizontal();
            let b = demosaic(&f.mirrored_horizontal());
            prop_assert_eq!(a, b);
        }

        #[test]
        fn output_stays_in_unit_range(
            pat in pattern(),
            data in proptest::collection::vec(any::<u8>(), 64),
        ) {
            let img = demosaic(&BayerFrame::new(8, 8, data, pat).unwrap());
            prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
