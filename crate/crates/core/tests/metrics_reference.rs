mod support;

use olatkit::metrics::{ms_ssim, psnr, ssim};
use olatkit::synth::smooth_texture;
use olatkit::RadianceImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use support::reference;

fn perturbed(img: &RadianceImage, seed: u64, amount: f32) -> RadianceImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = img
        .data()
        .iter()
        .map(|v| (v + rng.gen_range(-amount..amount)).clamp(0.0, 1.0))
        .collect();
    RadianceImage::from_vec(img.width(), img.height(), d).unwrap()
}

#[test]
fn ms_ssim_agrees_with_direct_definition() {
    // five scales, four scales, and an odd size that exercises the pooling edge
    for (i, (w, h)) in [(180, 176), (96, 120), (67, 45)].into_iter().enumerate() {
        let a = smooth_texture(w, h, i as u64);
        let b = perturbed(&a, 10 + i as u64, 0.08);
        let got = ms_ssim(&a, &b).unwrap();
        let want = reference::ms_ssim(&a, &b);
        assert!((got - want).abs() < 1e-6, "{w}x{h}: {got} vs {want}");
    }
}

#[test]
fn unrelated_images_score_lower_than_related() {
    let a = smooth_texture(64, 64, 1);
    let b = smooth_texture(64, 64, 2);
    let near = perturbed(&a, 3, 0.02);
    assert!(ssim(&a, &b).unwrap() < ssim(&a, &near).unwrap());
    assert!(ms_ssim(&a, &b).unwrap() < ms_ssim(&a, &near).unwrap());
    assert!(psnr(&a, &b, 1.0).unwrap() < psnr(&a, &near, 1.0).unwrap());
}
