//! Image-based relighting from an OLAT reflectance field, plus compositing.
//!
//! A relit pixel is `Σ_i w_i ⊙ O_i(p)` over the LED images `O_i`. The sum is
//! accumulated in `f64` in LED order and rounded to `f32` once, so the result
//! does not depend on how the work is split across threads.

use rayon::prelude::*;
use thiserror::Error;

use crate::imageio::{AlphaMatte, RadianceImage};
use crate::rig::LightWeights;

#[derive(Debug, Error, PartialEq)]
pub enum RelightError {
    #[error("olat set is empty")]
    EmptySet,
    #[error("led images differ in size: {0:?} vs {1:?}")]
    MixedDimensions((usize, usize), (usize, usize)),
    #[error("{what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite weight on led {0}")]
    NonFiniteWeight(usize),
    #[error("image size mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
}

pub type Result<T, E = RelightError> = std::result::Result<T, E>;

/// One reflectance field: an image per LED, all at the same pose.
#[derive(Clone, Debug, PartialEq)]
pub struct OlatSet {
    images: Vec<RadianceImage>,
    rig_name: String,
    anchor_ts: u64,
    sources: Vec<u64>,
}

impl OlatSet {
    /// `images[i]` is the subject lit by LED `i` alone.
    pub fn new(images: Vec<RadianceImage>, rig_name: String, anchor_ts: u64) -> Result<Self> {
        let first = images.first().ok_or(RelightError::EmptySet)?.dims();
        if let Some(bad) = images.iter().find(|i| i.dims() != first) {
            return Err(RelightError::MixedDimensions(first, bad.dims()));
        }
        let sources = vec![anchor_ts; images.len()];
        Ok(Self {
            images,
            rig_name,
            anchor_ts,
            sources,
        })
    }

    /// Records the capture timestamp each LED image was taken from.
    pub fn with_sources(mut self, sources: Vec<u64>) -> Result<Self> {
        if sources.len() != self.images.len() {
            return Err(RelightError::LengthMismatch {
                what: "sources",
                expected: self.images.len(),
                got: sources.len(),
            });
        }
        self.sources = sources;
        Ok(self)
    }

    pub fn images(&self) -> &[RadianceImage] {
        &self.images
    }

    pub fn into_images(self) -> Vec<RadianceImage> {
        self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.images[0].dims()
    }

    pub fn rig_name(&self) -> &str {
        &self.rig_name
    }

    pub fn anchor_ts(&self) -> u64 {
        self.anchor_ts
    }

    pub fn sources(&self) -> &[u64] {
        &self.sources
    }

    /// Same set with LEDs reordered so that new LED `k` is old LED `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            images: perm.iter().map(|&i| self.images[i].clone()).collect(),
            rig_name: self.rig_name.clone(),
            anchor_ts: self.anchor_ts,
            sources: perm.iter().map(|&i| self.sources[i]).collect(),
        }
    }
}

/// Weighted sum of the set's LED images. HDR: nothing is clamped.
pub fn relight(set: &OlatSet, weights: &LightWeights) -> Result<RadianceImage> {
    if weights.len() != set.len() {
        return Err(RelightError::LengthMismatch {
            what: "weights",
            expected: set.len(),
            got: weights.len(),
        });
    }
    let w = weights.as_slice();
    if let Some(i) = w.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
        return Err(RelightError::NonFiniteWeight(i));
    }
    // zero-weight LEDs contribute nothing; skipping them keeps the order fixed
    let active: Vec<usize> = (0..w.len()).filter(|&i| w[i] != [0.0; 3]).collect();
    let (width, height) = set.dims();
    let mut out = vec![0f32; width * height * 3];
    out.par_chunks_mut(width * 3)
        .enumerate()
        .for_each(|(y, row)| {
            let base = y * width * 3;
            let mut acc = vec![0f64; width * 3];
            for &i in &active {
                let src = &set.images[i].data()[base..base + width * 3];
                let wi = w[i];
                for (k, (a, s)) in acc.iter_mut().zip(src).enumerate() {
                    *a += wi[k % 3] * f64::from(*s);
                }
            }
            for (o, a) in row.iter_mut().zip(&acc) {
                *o = *a as f32;
            }
        });
    Ok(RadianceImage::from_vec_unchecked(width, height, out))
}

/// Relights each set. A single weights entry is broadcast to every set.
pub fn relight_sequence(
    sets: &[OlatSet],
    weights_track: &[LightWeights],
) -> Result<Vec<RadianceImage>> {
    if weights_track.len() != 1 && weights_track.len() != sets.len() {
        return Err(RelightError::LengthMismatch {
            what: "weights track",
            expected: sets.len(),
            got: weights_track.len(),
        });
    }
    sets.par_iter()
        .enumerate()
        .map(|(i, set)| {
            let w = if weights_track.len() == 1 {
                &weights_track[0]
            } else {
                &weights_track[i]
            };
            relight(set, w)
        })
        .collect()
}

/// `α·fg + (1−α)·bg` per pixel and channel.
pub fn composite(
    fg: &RadianceImage,
    alpha: &AlphaMatte,
    bg: &RadianceImage,
) -> Result<RadianceImage> {
    if fg.dims() != bg.dims() {
        return Err(RelightError::DimensionMismatch(fg.dims(), bg.dims()));
    }
    if fg.dims() != alpha.dims() {
        return Err(RelightError::DimensionMismatch(fg.dims(), alpha.dims()));
    }
    let data = fg
        .data()
        .par_chunks(3)
        .zip(bg.data().par_chunks(3))
        .zip(alpha.data().par_iter())
        .flat_map_iter(|((f, b), &a)| {
            let a = f64::from(a);
            (0..3).map(move |c| (a * f64::from(f[c]) + (1.0 - a) * f64::from(b[c])) as f32)
        })
        .collect();
    Ok(RadianceImage::from_vec_unchecked(
        fg.width(),
        fg.height(),
        data,
    ))
}

/// Component-wise sum of a base lighting and a rim pass.
pub fn add_rim(base: &LightWeights, rim: &LightWeights) -> Result<LightWeights> {
    if base.len() != rim.len() {
        return Err(RelightError::LengthMismatch {
            what: "rim weights",
            expected: base.len(),
            got: rim.len(),
        });
    }
    let sum = base
        .as_slice()
        .iter()
        .zip(rim.as_slice())
        .map(|(a, b)| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
        .collect();
    // sums of valid weights are valid unless they overflow
    LightWeights::new(sum).map_err(|_| RelightError::NonFiniteWeight(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(n: usize, w: usize, h: usize, seed: u64) -> OlatSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = (0..n)
            .map(|_| {
                let data = (0..w * h * 3).map(|_| rng.gen_range(0.0f32..2.0)).collect();
                RadianceImage::from_vec(w, h, data).unwrap()
            })
            .collect();
        OlatSet::new(images, "test".into(), 0).unwrap()
    }

    fn random_weights(n: usize, rng: &mut ChaCha8Rng) -> LightWeights {
        LightWeights::new(
            (0..n)
                .map(|_| [0, 1, 2].map(|_| rng.gen_range(0.0..1.5)))
                .collect(),
        )
        .unwrap()
    }

    fn max_rel(a: &RadianceImage, b: &RadianceImage) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| {
                let (x, y) = (f64::from(*x), f64::from(*y));
                let m = x.abs().max(y.abs());
                if m == 0.0 {
                    0.0
                } else {
                    (x - y).abs() / m
                }
            })
            .fold(0.0, f64::max)
    }

    fn add(a: &RadianceImage, b: &RadianceImage) -> RadianceImage {
        let d = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        RadianceImage::from_vec(a.width(), a.height(), d).unwrap()
    }

    #[test]
    fn one_hot_weight_selects_the_led_image() {
        let set = random_set(5, 7, 4, 1);
        for k in 0..5 {
            let out = relight(&set, &LightWeights::one_hot(5, k, [1.0; 3]).unwrap()).unwrap();
            assert_eq!(&out, &set.images()[k]);
        }
    }

    #[test]
    fn zero_weights_give_black() {
        let set = random_set(3, 4, 4, 2);
        let out = relight(&set, &LightWeights::zeros(3)).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let set = random_set(3, 2, 2, 3);
        assert!(matches!(
            relight(&set, &LightWeights::zeros(2)),
            Err(RelightError::LengthMismatch {
                expected: 3,
                got: 2,
                ..
            })
        ));
        assert_eq!(
            OlatSet::new(vec![], "x".into(), 0).unwrap_err(),
            RelightError::EmptySet
        );
        let mixed = vec![RadianceImage::new(2, 2), RadianceImage::new(3, 2)];
        assert!(matches!(
            OlatSet::new(mixed, "x".into(), 0),
            Err(RelightError::MixedDimensions(..))
        ));
    }

    #[test]
    fn sequence_broadcasts_a_single_entry() {
        let set = random_set(4, 3, 3, 4);
        let sets = vec![set.clone(), set.clone(), set];
        let w = LightWeights::uniform(4, [0.3, 0.2, 0.1]).unwrap();
        let out = relight_sequence(&sets, std::slice::from_ref(&w)).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|f| f == &out[0]));
        assert!(relight_sequence(&sets, &[w.clone(), w]).is_err());
    }

    #[test]
    fn sequence_matches_independent_calls() {
        let sets: Vec<_> = (0..3).map(|s| random_set(4, 5, 3, 10 + s)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let track: Vec<_> = (0..3).map(|_| random_weights(4, &mut rng)).collect();
        let out = relight_sequence(&sets, &track).unwrap();
        for i in 0..3 {
            assert_eq!(out[i], relight(&sets[i], &track[i]).unwrap());
        }
    }

    #[test]
    fn composite_cases() {
        let fg = RadianceImage::filled(3, 2, [1.0; 3]);
        let bg = RadianceImage::new(3, 2);
        assert_eq!(
            composite(&fg, &AlphaMatte::filled(3, 2, 1.0), &bg).unwrap(),
            fg
        );
        assert_eq!(
            composite(&fg, &AlphaMatte::filled(3, 2, 0.0), &bg).unwrap(),
            bg
        );
        let half = composite(&fg, &AlphaMatte::filled(3, 2, 0.5), &bg).unwrap();
        assert!(half.data().iter().all(|&v| v == 0.5));
        assert!(composite(&fg, &AlphaMatte::filled(2, 2, 0.5), &bg).is_err());
        assert!(composite(
            &fg,
            &AlphaMatte::filled(3, 2, 0.5),
            &RadianceImage::new(2, 3)
        )
        .is_err());
    }

    #[test]
    fn add_rim_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = random_weights(6, &mut rng);
        let rim = random_weights(6, &mut rng);
        assert_eq!(add_rim(&base, &LightWeights::zeros(6)).unwrap(), base);
        let set = random_set(6, 4, 4, 6);
        let pure = relight(&set, &add_rim(&LightWeights::zeros(6), &rim).unwrap()).unwrap();
        assert_eq!(pure, relight(&set, &rim).unwrap());
        let both = relight(&set, &add_rim(&base, &rim).unwrap()).unwrap();
        let sum = add(
            &relight(&set, &base).unwrap(),
            &relight(&set, &rim).unwrap(),
        );
        assert!(max_rel(&both, &sum) < 1e-5);
        assert!(add_rim(&base, &LightWeights::zeros(5)).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn superposition_and_scaling(seed in any::<u64>(), s in 0.0f64..10.0) {
            let set = random_set(8, 6, 5, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let a = random_weights(8, &mut rng);
            let b = random_weights(8, &mut rng);
            let ab = add_rim(&a, &b).unwrap();
            let lhs = relight(&set, &ab).unwrap();
            let rhs = add(&relight(&set, &a).unwrap(), &relight(&set, &b).unwrap());
            prop_assert!(max_rel(&lhs, &rhs) < 1e-5);

            let scaled = relight(&set, &a.scaled(s).unwrap()).unwrap();
            let base = relight(&set, &a).unwrap();
            for (x, y) in scaled.data().iter().zip(base.data()) {
                let expect = s * f64::from(*y);
                prop_assert!((f64::from(*x) - expect).abs() <= 1e-6 * expect.abs().max(1e-6));
            }
        }

        #[test]
        fn permutation_consistency(seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let set = random_set(10, 4, 3, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_weights(10, &mut rng);
            let mut perm: Vec<usize> = (0..10).collect();
            perm.shuffle(&mut rng);
            let a = relight(&set, &w).unwrap();
            let b = relight(&set.permuted(&perm), &w.permuted(&perm)).unwrap();
            prop_assert!(max_rel(&a, &b) < 1e-6);
        }

        #[test]
        fn composite_stays_in_convex_hull(
            f in proptest::collection::vec(0f32..100.0, 12),
            b in proptest::collection::vec(0f32..100.0, 12),
            a in proptest::collection::vec(0f32..=1.0, 4),
        ) {
            let fg = RadianceImage::from_vec(2, 2, f).unwrap();
            let bg = RadianceImage::from_vec(2, 2, b).unwrap();
            let out = composite(&fg, &AlphaMatte::new(2, 2, a).unwrap(), &bg).unwrap();
            for i in 0..12 {
                let (lo, hi) = (fg.data()[i].min(bg.data()[i]), fg.data()[i].max(bg.data()[i]));
                prop_assert!(out.data()[i] >= lo && out.data()[i] <= hi);
            }
        }
    }
}
