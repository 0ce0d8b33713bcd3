use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn olatkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_olatkit"))
        .env_remove("OLATKIT_THREADS")
        .env("RUST_LOG", "error")
        .args(args)
        .output()
        .unwrap()
}

fn error_line(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr);
    err.lines()
        .rfind(|l| l.starts_with("error: kind="))
        .unwrap_or_default()
        .to_string()
}

fn synth(dir: &Path) -> String {
    let out = dir.join("synth").to_string_lossy().into_owned();
    let o = olatkit(&[
        "synth",
        "--out",
        &out,
        "--width",
        "48",
        "--height",
        "48",
        "--radius",
        "10",
        "--frames",
        "0",
        "--reference-set",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = olatkit(&["relight", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage:"));
    assert!(error_line(&o).contains("kind=usage code=2"));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.pfm");
    let o = olatkit(&[
        "composite",
        "--fg",
        missing.to_str().unwrap(),
        "--matte",
        missing.to_str().unwrap(),
        "--bg",
        missing.to_str().unwrap(),
        "--out",
        dir.path().join("x.pfm").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(error_line(&o).lines().count(), 1);
}

#[test]
fn relight_writes_frame_and_preview() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path());
    let out = dir.path().join("out");
    let o = olatkit(&[
        "relight",
        "--env",
        &format!("{s}/env.pfm"),
        "--set",
        &format!("{s}/reference/set_000000"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("frame.pfm").is_file());
    assert!(out.join("frame.png").is_file());
}

#[test]
fn weight_count_mismatch_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path());
    let w = dir.path().join("short.weights");
    fs::write(&w, "0 1 1 1\n1 1 1 1\n").unwrap();
    let o = olatkit(&[
        "relight",
        "--weights",
        w.to_str().unwrap(),
        "--set",
        &format!("{s}/reference/set_000000"),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(
        o.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn inputs_are_left_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path());
    let before: Vec<Vec<u8>> = ["env.pfm", "full.weights", "matte.png"]
        .iter()
        .map(|f| fs::read(format!("{s}/{f}")).unwrap())
        .collect();
    let o = olatkit(&[
        "rim",
        "--base",
        &format!("{s}/full.weights"),
        "--out",
        &format!("{s}/full.weights"),
    ]);
    assert_eq!(o.status.code(), Some(4));
    let o = olatkit(&[
        "relight",
        "--env",
        &format!("{s}/env.pfm"),
        "--set",
        &format!("{s}/reference/set_000000"),
        "--rim-cone",
        "40",
        "--out",
        &format!("{s}/relit"),
    ]);
    assert!(o.status.success());
    let after: Vec<Vec<u8>> = ["env.pfm", "full.weights", "matte.png"]
        .iter()
        .map(|f| fs::read(format!("{s}/{f}")).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path());
    let cfg = dir.path().join("job.conf");
    let out = dir.path().join("rim.weights");
    fs::write(
        &cfg,
        format!("# rim job\ncone = 30\nout = {}\n", out.display()),
    )
    .unwrap();
    let o = olatkit(&[
        "--config",
        cfg.to_str().unwrap(),
        "rim",
        "--rig",
        &format!("{s}/rig.rig"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&out).unwrap().lines().count() >= 96);
}

#[test]
fn relight_composites_over_a_plate() {
    let dir = tempfile::tempdir().unwrap();
    let s = synth(dir.path());
    let out = dir.path().join("out");
    let o = olatkit(&[
        "relight",
        "--env",
        &format!("{s}/env.pfm"),
        "--rotate",
        "-90",
        "--set",
        &format!("{s}/reference/set_000000"),
        "--bg",
        &format!("{s}/albedo.pfm"),
        "--alpha",
        &format!("{s}/matte.png"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("frame.pfm").is_file());

    let o = olatkit(&[
        "relight",
        "--env",
        &format!("{s}/env.pfm"),
        "--set",
        &format!("{s}/reference/set_000000"),
        "--bg",
        &format!("{s}/albedo.pfm"),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}
