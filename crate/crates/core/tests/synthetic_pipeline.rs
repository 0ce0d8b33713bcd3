mod support;

use olatkit::align::{assemble_sets, compute_flow, AlignMode, CaptureSchedule, FlowParams};
use olatkit::relight::{add_rim, relight, relight_sequence};
use olatkit::rig::{env_to_weights, rim_preset};
use olatkit::synth::{
    ground_truth_flow, render_capture_stream, render_env_direct, render_olat, smooth_random_env,
    valid_mask, MotionTrack, Pose, SyntheticScene,
};
use olatkit::{LightRig, LightWeights};
use support::reference;

#[test]
fn env_relighting_matches_direct_render() {
    let scene = SyntheticScene::new(128, 128, 40.0, 11).unwrap();
    let rig = LightRig::default_dome();
    let set = render_olat(&scene, &rig);
    for seed in 0..2 {
        let env = smooth_random_env(64, 32, seed);
        let w = env_to_weights(&env, &rig);
        let sums = w.channel_sums();
        let integral = reference::env_integral(&env);
        for c in 0..3 {
            assert!((sums[c] - integral[c]).abs() <= 1e-9 * integral[c]);
        }
        let relit = relight(&set, &w).unwrap();
        let direct = render_env_direct(&scene, &env);
        let mask = vec![true; 128 * 128];
        let p = reference::masked_psnr(&relit, &direct, &mask);
        assert!(p >= 30.0, "seed {seed}: {p:.2} dB");
    }
}

#[test]
fn flow_recovers_shifts_of_the_synthetic_scene() {
    let scene = SyntheticScene::new(128, 128, 36.0, 5).unwrap();
    let rig = LightRig::default_dome();
    let full = LightWeights::uniform(rig.len(), [1.0; 3]).unwrap();
    for (shift, bound) in [((3.0, -2.0), 0.25), ((0.5, 0.0), 0.5)] {
        let track =
            MotionTrack::new(vec![Pose::IDENTITY, Pose::translation(shift.0, shift.1)]).unwrap();
        let src = scene
            .surface(track.pose(0))
            .render_weighted(&rig, &full)
            .unwrap();
        let dst = scene
            .surface(track.pose(1))
            .render_weighted(&rig, &full)
            .unwrap();
        let f = compute_flow(&src, &dst, &FlowParams::default()).unwrap();
        let truth = ground_truth_flow(&scene, &track, 0, 1);
        let epe = f.endpoint_error(&truth, 16);
        assert!(epe < bound, "{shift:?}: {epe}");
    }
}

fn moving_capture(
    size: usize,
    n_leds: usize,
    frames: usize,
) -> (
    SyntheticScene,
    LightRig,
    CaptureSchedule,
    olatkit::synth::CaptureStream,
) {
    let scene = SyntheticScene::new(size, size, size as f64 * 0.18, 21).unwrap();
    let rig = LightRig::fibonacci("dome", n_leds, 1.3).unwrap();
    let schedule = CaptureSchedule {
        output_stride: 20,
        ..CaptureSchedule::new(n_leds)
    };
    let track =
        MotionTrack::constant_velocity(frames, (1.0, 0.0), 0.0, frames as f64 / 2.0).unwrap();
    let stream = render_capture_stream(&scene, &rig, &schedule, &track, frames).unwrap();
    (scene, rig, schedule, stream)
}

#[test]
fn alignment_restores_the_anchor_pose() {
    let (scene, rig, schedule, stream) = moving_capture(128, 24, 60);
    let full = LightWeights::uniform(rig.len(), [1.0; 3]).unwrap();
    let aligned = assemble_sets(
        &stream,
        &schedule,
        &rig,
        FlowParams::default(),
        AlignMode::Flow,
    )
    .unwrap();
    let raw = assemble_sets(
        &stream,
        &schedule,
        &rig,
        FlowParams::default(),
        AlignMode::Raw,
    )
    .unwrap();
    assert_eq!(aligned.len(), 3);
    for (a, r) in aligned.iter().zip(&raw) {
        assert_eq!(a.sources(), r.sources());
        let truth = scene
            .surface(stream.track.pose(a.anchor_ts()))
            .render_weighted(&rig, &full)
            .unwrap();
        let mask = valid_mask(&scene, &stream.track, a.anchor_ts(), a.sources());
        let pa = reference::masked_psnr(&relight(a, &full).unwrap(), &truth, &mask);
        let pr = reference::masked_psnr(&relight(r, &full).unwrap(), &truth, &mask);
        assert!(
            pa >= 35.0 && pa > pr + 3.0,
            "anchor {}: aligned {pa:.2} raw {pr:.2}",
            a.anchor_ts()
        );
        let sharp_a = reference::laplacian_variance(&relight(a, &full).unwrap());
        let sharp_r = reference::laplacian_variance(&relight(r, &full).unwrap());
        assert!(sharp_a >= sharp_r, "{sharp_a} < {sharp_r}");
    }
}

#[test]
fn static_capture_relights_to_identical_frames() {
    let scene = SyntheticScene::new(48, 48, 14.0, 2).unwrap();
    let rig = LightRig::fibonacci("dome", 12, 1.3).unwrap();
    let schedule = CaptureSchedule {
        output_stride: 12,
        ..CaptureSchedule::new(12)
    };
    let stream =
        render_capture_stream(&scene, &rig, &schedule, &MotionTrack::stationary(72), 72).unwrap();
    let sets = assemble_sets(
        &stream,
        &schedule,
        &rig,
        FlowParams::default(),
        AlignMode::Flow,
    )
    .unwrap();
    assert!(sets.len() >= 4);
    let w = LightWeights::uniform(12, [0.3, 0.2, 0.1]).unwrap();
    let frames = relight_sequence(&sets, &[w]).unwrap();
    for f in &frames[1..] {
        assert_eq!(f, &frames[0]);
    }
}

#[test]
fn rim_light_brightens_the_silhouette_only() {
    let scene = SyntheticScene::new(128, 128, 40.0, 8).unwrap();
    let rig = LightRig::default_dome();
    let set = render_olat(&scene, &rig);
    let env = smooth_random_env(64, 32, 4);
    let base = env_to_weights(&env, &rig);
    let rim = rim_preset(&rig, 60f64.to_radians(), [0.5; 3]).unwrap();
    let lit = relight(&set, &base).unwrap();
    let rimmed = relight(&set, &add_rim(&base, &rim).unwrap()).unwrap();
    let band = scene.silhouette_band(Pose::IDENTITY, 3.0);
    let disc = scene.center_disc(Pose::IDENTITY, 0.25);
    let gain =
        reference::masked_luminance(&rimmed, &band) - reference::masked_luminance(&lit, &band);
    assert!(gain > 0.0, "{gain}");
    let (c0, c1) = (
        reference::masked_luminance(&lit, &disc),
        reference::masked_luminance(&rimmed, &disc),
    );
    assert!((c1 - c0).abs() <= 0.01 * c0, "{c0} {c1}");
}
