use std::borrow::Cow;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use olatkit::align::{
    assemble_sets, AlignError, AlignMode, CaptureSchedule, FlowParams, FrameSource,
};
use olatkit::imageio::{
    demosaic, read_image, read_matte, read_olat_set, write_atomic, write_image, write_matte,
    write_olat_set, BayerFrame, Encoding,
};
use olatkit::metrics::{normal_angular_error, MetricReport};
use olatkit::normalize::{estimate_stats, normalize_stream, ParamStream};
use olatkit::relight::{add_rim, composite, relight};
use olatkit::rig::{env_to_weights, load_rig, rim_preset};
use olatkit::synth::{
    render_capture_stream, render_env_direct, render_olat, smooth_random_env, MotionTrack, Pose,
    SyntheticScene,
};
use olatkit::{EnvironmentMap, LightRig, LightWeights, NormalMap, OlatSet, RadianceImage};

use crate::error::{invalid, CliError, Result};
use crate::preview::{auto_exposure, contact_sheet, exposed};
use crate::*;

/// Largest tile edge in contact sheets.
const TILE: usize = 128;

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Align(a) => align(a),
        Command::Relight(a) => relight_cmd(a),
        Command::Rim(a) => rim(a),
        Command::Composite(a) => composite_cmd(a),
        Command::Normalize(a) => normalize(a),
        Command::Metrics(a) => metrics(a),
        Command::Ingest(a) => ingest(a),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn require_exists(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.exists() {
            return Err(CliError::Io(format!(
                "{}: no such file or directory",
                p.display()
            )));
        }
    }
    Ok(())
}

/// Refuses outputs that would overwrite (or live inside) an input.
fn ensure_outside_inputs(out: &Path, inputs: &[&Path]) -> Result<()> {
    let out_abs = std::path::absolute(out).map_err(|e| io_err(out, e))?;
    for i in inputs {
        let abs = fs::canonicalize(i).map_err(|e| io_err(i, e))?;
        let out_canon = fs::canonicalize(&out_abs).unwrap_or(out_abs.clone());
        if out_canon == abs || (abs.is_dir() && out_canon.starts_with(&abs)) {
            return Err(invalid(format!(
                "output {} would modify input {}",
                out.display(),
                i.display()
            )));
        }
    }
    Ok(())
}

fn rig_or_default(path: Option<&Path>) -> Result<LightRig> {
    match path {
        Some(p) => Ok(load_rig(p)?),
        None => Ok(LightRig::default_dome()),
    }
}

fn schedule_for(rig: &LightRig, s: &ScheduleArgs) -> Result<CaptureSchedule> {
    let mut sched = CaptureSchedule::new(rig.len());
    sched.cycle = s.cycle;
    sched.output_stride = s.stride;
    sched.capture_fps = s.fps;
    if s.cycle >= 2 {
        sched.window_groups = s.window_groups.unwrap_or(rig.len().div_ceil(s.cycle - 1));
    }
    sched.validate()?;
    Ok(sched)
}

fn schedule_text(s: &CaptureSchedule) -> String {
    format!(
        "cycle = {}\nstride = {}\nwindow-groups = {}\nfps = {}\n",
        s.cycle, s.output_stride, s.window_groups, s.capture_fps
    )
}

fn write_preview(path: &Path, img: &RadianceImage, exposure: Option<f32>) -> Result<()> {
    let e = exposure.unwrap_or_else(|| auto_exposure([img]));
    Ok(write_image(path, &exposed(img, e), Encoding::Png8)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    if let Some(t) = &a.track {
        require_exists(&[t])?;
    }
    if let Some(r) = &a.rig {
        require_exists(&[r])?;
    }
    let rig = rig_or_default(a.rig.as_deref())?;
    let schedule = schedule_for(&rig, &a.schedule)?;
    let scene = SyntheticScene::new(a.width, a.height, a.radius, a.seed)?;
    let track = match &a.track {
        Some(p) => MotionTrack::load(p)?,
        None => {
            MotionTrack::constant_velocity(a.frames, a.velocity, a.omega, (a.frames / 2) as f64)?
        }
    };
    create_dir(&a.out)?;

    write_text(&a.out.join("rig.rig"), &rig.to_text())?;
    write_text(&a.out.join("schedule.conf"), &schedule_text(&schedule))?;
    write_text(&a.out.join("track.txt"), &track.to_text())?;
    let full = LightWeights::uniform(rig.len(), [1.0; 3])?;
    write_text(&a.out.join("full.weights"), &full.to_text())?;

    let surface = scene.surface(Pose::IDENTITY);
    surface.normal_map().write_pfm(&a.out.join("normals.pfm"))?;
    write_image(
        &a.out.join("albedo.pfm"),
        &surface.albedo_image(),
        Encoding::Float,
    )?;
    write_matte(&a.out.join("matte.png"), &scene.matte(Pose::IDENTITY))?;

    let (ew, eh) = a.env_size;
    let env = smooth_random_env(ew.max(2), eh.max(2), a.seed);
    write_image(&a.out.join("env.pfm"), env.image(), Encoding::Float)?;
    write_image(
        &a.out.join("env_direct.pfm"),
        &render_env_direct(&scene, &env),
        Encoding::Float,
    )?;

    if a.reference_set {
        let set = render_olat(&scene, &rig);
        write_olat_set(&a.out.join("reference"), &set)?;
    }

    if a.frames > 0 {
        let stream = render_capture_stream(&scene, &rig, &schedule, &track, a.frames)?;
        let frames_dir = a.out.join("frames");
        create_dir(&frames_dir)?;
        stream
            .frames
            .par_iter()
            .enumerate()
            .try_for_each(|(ts, img)| {
                write_image(
                    &frames_dir.join(format!("frame_{ts:06}.pfm")),
                    img,
                    Encoding::Float,
                )
            })?;
        let labels: String = stream
            .labels
            .iter()
            .enumerate()
            .map(|(ts, l)| match l {
                olatkit::align::FrameLabel::Tracking => format!("{ts} tracking\n"),
                olatkit::align::FrameLabel::Olat(i) => format!("{ts} olat {i}\n"),
            })
            .collect();
        write_text(&a.out.join("labels.txt"), &labels)?;

        // full-lit renders at each set anchor, the reference for aligned sets
        let truth_dir = a.out.join("truth");
        create_dir(&truth_dir)?;
        schedule
            .anchor_timestamps(a.frames)
            .par_iter()
            .try_for_each(|&ts| -> Result<()> {
                let img = scene.surface(track.pose(ts)).render_weighted(&rig, &full)?;
                write_image(
                    &truth_dir.join(format!("frame_{ts:06}.pfm")),
                    &img,
                    Encoding::Float,
                )?;
                Ok(())
            })?;
        info!("rendered {} frames", a.frames);
    }
    Ok(())
}

/// Frames of a directory, loaded on demand.
struct DirFrames {
    paths: Vec<PathBuf>,
}

impl DirFrames {
    fn open(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension()
                        .and_then(|e| e.to_str())
                        .map(str::to_ascii_lowercase)
                        .as_deref(),
                    Some("pfm" | "png")
                )
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(invalid(format!(
                "{}: no .pfm or .png frames",
                dir.display()
            )));
        }
        Ok(Self { paths })
    }
}

impl FrameSource for DirFrames {
    fn frame_count(&self) -> usize {
        self.paths.len()
    }

    fn load(&self, ts: u64) -> std::result::Result<Cow<'_, RadianceImage>, AlignError> {
        let path = self.paths.get(ts as usize).ok_or(AlignError::Frame {
            ts,
            msg: "beyond end of stream".into(),
        })?;
        let (img, clamped) = read_image(path).map_err(|e| AlignError::Frame {
            ts,
            msg: e.to_string(),
        })?;
        if clamped > 0 {
            warn!("{}: clamped {clamped} negative samples", path.display());
        }
        Ok(Cow::Owned(img))
    }
}

fn align(a: AlignArgs) -> Result<()> {
    require_exists(&[&a.frames])?;
    if let Some(r) = &a.rig {
        require_exists(&[r])?;
    }
    ensure_outside_inputs(&a.out, &[&a.frames])?;
    let rig = rig_or_default(a.rig.as_deref())?;
    let schedule = schedule_for(&rig, &a.schedule)?;
    let params = FlowParams {
        levels: a.levels,
        iterations: a.iterations,
        window_radius: a.window_radius,
        ..FlowParams::default()
    };
    let frames = DirFrames::open(&a.frames)?;
    let mode = if a.raw {
        AlignMode::Raw
    } else {
        AlignMode::Flow
    };
    let sets = assemble_sets(&frames, &schedule, &rig, params, mode)?;
    create_dir(&a.out)?;
    for set in &sets {
        write_olat_set(&a.out, set)?;
    }
    write_image(
        &a.out.join("contact.png"),
        &contact_sheet(sets[0].images(), TILE),
        Encoding::Png8,
    )?;
    println!("{} sets from {} frames", sets.len(), frames.frame_count());
    Ok(())
}

fn set_dirs(a: &RelightArgs) -> Result<Vec<PathBuf>> {
    let mut dirs = a.set.clone();
    if let Some(parent) = &a.sets {
        require_exists(&[parent])?;
        let mut found: Vec<PathBuf> = fs::read_dir(parent)
            .map_err(|e| io_err(parent, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_dir()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("set_"))
            })
            .collect();
        found.sort();
        if found.is_empty() {
            return Err(invalid(format!(
                "{}: no set_* directories",
                parent.display()
            )));
        }
        dirs.extend(found);
    }
    Ok(dirs)
}

fn relight_cmd(a: RelightArgs) -> Result<()> {
    let dirs = set_dirs(&a)?;
    let mut inputs: Vec<&Path> = dirs.iter().map(PathBuf::as_path).collect();
    inputs.extend(a.env.as_deref());
    inputs.extend(a.weights.as_deref());
    inputs.extend(a.rig.as_deref());
    inputs.extend(a.bg.as_deref());
    inputs.extend(a.alpha.as_deref());
    require_exists(&inputs)?;
    ensure_outside_inputs(&a.out, &inputs)?;

    let rig = rig_or_default(a.rig.as_deref())?;
    let plate = match (&a.bg, &a.alpha) {
        (Some(bg), Some(alpha)) => Some((read_image(bg)?.0, read_matte(alpha)?)),
        _ => None,
    };
    let mut weights = match (&a.env, &a.weights) {
        (Some(env), _) => {
            let (img, clamped) = read_image(env)?;
            if clamped > 0 {
                warn!("{}: clamped {clamped} negative samples", env.display());
            }
            env_to_weights(&EnvironmentMap::new(img, a.rotate.to_radians())?, &rig)
        }
        (None, Some(w)) => LightWeights::parse(&read_text(w)?)?,
        (None, None) => unreachable!("clap requires one of --env/--weights"),
    };
    if let Some(cone) = a.rim_cone {
        let rim = rim_preset(&rig, cone.to_radians(), a.rim_rgb)?;
        weights = add_rim(&weights, &rim)?;
    }

    let sets: Vec<OlatSet> = dirs
        .par_iter()
        .map(|d| read_olat_set(d).map_err(CliError::from))
        .collect::<Result<_>>()?;
    for (d, s) in dirs.iter().zip(&sets) {
        if s.len() != rig.len() {
            return Err(invalid(format!(
                "{}: {} images but rig {} has {} LEDs",
                d.display(),
                s.len(),
                rig.name(),
                rig.len()
            )));
        }
        if s.rig_name() != rig.name() {
            warn!(
                "{}: captured with rig {}, relit with {}",
                d.display(),
                s.rig_name(),
                rig.name()
            );
        }
    }
    let frames: Vec<RadianceImage> = sets
        .iter()
        .map(|s| {
            let lit = relight(s, &weights)?;
            Ok(match &plate {
                Some((bg, alpha)) => composite(&lit, alpha, bg)?,
                None => lit,
            })
        })
        .collect::<Result<_>>()?;

    create_dir(&a.out)?;
    if let [frame] = frames.as_slice() {
        write_image(&a.out.join("frame.pfm"), frame, Encoding::Float)?;
        write_preview(&a.out.join("frame.png"), frame, a.exposure)?;
        return Ok(());
    }
    let exposure = a.exposure.unwrap_or_else(|| auto_exposure(&frames));
    frames
        .par_iter()
        .zip(&sets)
        .try_for_each(|(f, s)| -> Result<()> {
            let stem = format!("frame_{:06}", s.anchor_ts());
            write_image(&a.out.join(format!("{stem}.pfm")), f, Encoding::Float)?;
            write_preview(&a.out.join(format!("{stem}.png")), f, Some(exposure))?;
            Ok(())
        })?;
    write_image(
        &a.out.join("contact.png"),
        &contact_sheet(&frames, TILE),
        Encoding::Png8,
    )?;
    Ok(())
}

fn rim(a: RimArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = Vec::new();
    inputs.extend(a.rig.as_deref());
    inputs.extend(a.base.as_deref());
    require_exists(&inputs)?;
    ensure_outside_inputs(&a.out, &inputs)?;
    let rig = rig_or_default(a.rig.as_deref())?;
    let rim = rim_preset(&rig, a.cone.to_radians(), a.intensity)?;
    let out = match &a.base {
        Some(b) => add_rim(&LightWeights::parse(&read_text(b)?)?, &rim)?,
        None => rim,
    };
    let lit = out.as_slice().iter().filter(|w| **w != [0.0; 3]).count();
    info!("{lit} of {} LEDs lit", rig.len());
    write_text(&a.out, &out.to_text())
}

fn composite_cmd(a: CompositeArgs) -> Result<()> {
    require_exists(&[&a.fg, &a.matte, &a.bg])?;
    ensure_outside_inputs(&a.out, &[&a.fg, &a.matte, &a.bg])?;
    let (fg, _) = read_image(&a.fg)?;
    let matte = read_matte(&a.matte)?;
    let (bg, _) = read_image(&a.bg)?;
    let out = composite(&fg, &matte, &bg)?;
    let enc = match a.out.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => Encoding::Png16,
        _ => Encoding::Float,
    };
    Ok(write_image(&a.out, &out, enc)?)
}

fn normalize(a: NormalizeArgs) -> Result<()> {
    require_exists(&[&a.src, &a.tgt])?;
    ensure_outside_inputs(&a.out, &[&a.src, &a.tgt])?;
    let src = ParamStream::parse(&read_text(&a.src)?)?;
    let tgt = ParamStream::parse(&read_text(&a.tgt)?)?;
    if src.tag() != tgt.tag() {
        return Err(invalid(format!(
            "source is {} but target is {}",
            src.tag(),
            tgt.tag()
        )));
    }
    let s = estimate_stats(&src)?;
    let t = estimate_stats(&tgt)?;
    let out = normalize_stream(&src, &s, &t)?;
    write_text(&a.out, &out.to_text())?;
    let stats = format!("{}{}", s.to_text("source"), t.to_text("target"));
    print!("{stats}");
    if let Some(p) = &a.stats_out {
        write_text(p, &stats)?;
    }
    Ok(())
}

fn image_files(dir: &Path) -> Result<Vec<String>> {
    let mut names: Vec<String> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| {
            let l = n.to_ascii_lowercase();
            l.ends_with(".pfm") || l.ends_with(".png")
        })
        .collect();
    names.sort();
    Ok(names)
}

fn metrics(a: MetricsArgs) -> Result<()> {
    require_exists(&[&a.pred, &a.gt])?;
    let pairs: Vec<(String, PathBuf, PathBuf)> = if a.pred.is_dir() {
        if !a.gt.is_dir() {
            return Err(invalid("--pred is a directory but --gt is not"));
        }
        let names = image_files(&a.pred)?;
        if names.is_empty() {
            return Err(invalid(format!("{}: no images", a.pred.display())));
        }
        let mut pairs = Vec::new();
        for n in names {
            let g = a.gt.join(&n);
            if g.is_file() {
                pairs.push((n.clone(), a.pred.join(&n), g));
            } else {
                warn!("{n}: no reference in {}, skipped", a.gt.display());
            }
        }
        if pairs.is_empty() {
            return Err(invalid(format!(
                "no file names shared by {} and {}",
                a.pred.display(),
                a.gt.display()
            )));
        }
        pairs
    } else {
        let name = a
            .pred
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        vec![(name, a.pred.clone(), a.gt.clone())]
    };
    let loaded = pairs
        .par_iter()
        .map(|(n, p, g)| Ok((n.clone(), read_image(p)?.0, read_image(g)?.0)))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricReport::evaluate(&loaded, a.peak)?;
    let mut text = report.to_table();
    match (&a.normals_pred, &a.normals_gt) {
        (Some(p), Some(g)) => {
            require_exists(&[p, g])?;
            let e = normal_angular_error(&NormalMap::read_pfm(p)?, &NormalMap::read_pfm(g)?)?;
            text.push_str(&format!("normal cosine distance {e:.6}\n"));
        }
        (None, None) => {}
        _ => {
            return Err(CliError::Usage(
                "--normals-pred and --normals-gt go together".into(),
            ))
        }
    }
    print!("{text}");
    if let Some(out) = &a.out {
        write_text(out, &text)?;
    }
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    require_exists(&[&a.input])?;
    ensure_outside_inputs(&a.out, &[&a.input])?;
    let files: Vec<PathBuf> = if a.input.is_dir() {
        let mut v: Vec<PathBuf> = fs::read_dir(&a.input)
            .map_err(|e| io_err(&a.input, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("raw"))
            .collect();
        v.sort();
        v
    } else {
        vec![a.input.clone()]
    };
    if files.is_empty() {
        return Err(invalid(format!("{}: no .raw files", a.input.display())));
    }
    create_dir(&a.out)?;
    files.par_iter().try_for_each(|f| -> Result<()> {
        let bytes = fs::read(f).map_err(|e| io_err(f, e))?;
        let mut frame = BayerFrame::new(a.width, a.height, bytes, a.pattern)?;
        if a.mirror {
            frame = frame.mirrored_horizontal();
        }
        let stem = f
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        write_image(
            &a.out.join(format!("{stem}.pfm")),
            &demosaic(&frame),
            Encoding::Float,
        )?;
        Ok(())
    })?;
    println!("demosaiced {} frames", files.len());
    Ok(())
}
