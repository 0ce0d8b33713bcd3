//! `olatkit`: synthetic capture, OLAT set assembly, relighting, compositing,
//! parameter normalisation and evaluation from the command line.

mod commands;
mod error;
mod preview;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, Result};

#[derive(Parser, Debug)]
#[command(
    name = "olatkit",
    version,
    about = "Light-stage OLAT alignment, relighting and evaluation"
)]
#[command(args_override_self = true)]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "OLATKIT_THREADS", default_value_t = 0)]
    threads: usize,
    /// Read `key = value` defaults for the subcommand's flags from a file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic scene, capture stream and ground truth.
    Synth(SynthArgs),
    /// Assemble motion-compensated OLAT sets from a capture stream.
    Align(AlignArgs),
    /// Relight OLAT sets under an environment map or a weights file.
    Relight(RelightArgs),
    /// Write rim-light weights for the LEDs behind the subject.
    Rim(RimArgs),
    /// Alpha-composite a foreground over a background.
    Composite(CompositeArgs),
    /// Map a parameter stream onto a target actor's statistics.
    Normalize(NormalizeArgs),
    /// Compare predictions against references.
    Metrics(MetricsArgs),
    /// Demosaic raw 8-bit Bayer frames.
    Ingest(IngestArgs),
}

/// Capture schedule flags shared by `synth` and `align`.
#[derive(Args, Debug, Clone)]
pub struct ScheduleArgs {
    /// Frames per cycle; the last one is the tracking frame.
    #[arg(long, default_value_t = 6)]
    pub cycle: usize,
    /// Capture frames per output set.
    #[arg(long, default_value_t = 40)]
    pub stride: usize,
    /// Assembly window in cycles [default: just enough to cover every LED].
    #[arg(long)]
    pub window_groups: Option<usize>,
    #[arg(long, default_value_t = 1000.0)]
    pub fps: f64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
    /// Sphere radius in pixels.
    #[arg(long, default_value_t = 48.0)]
    pub radius: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Rig file [default: built-in 96-LED dome].
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Stream length; 0 renders only the static scene.
    #[arg(long, default_value_t = 130)]
    pub frames: usize,
    /// Translation per frame in pixels, `dx,dy`.
    #[arg(long, default_value = "1,0", value_parser = parse_pair)]
    pub velocity: (f64, f64),
    /// Rotation per frame in radians.
    #[arg(long, default_value_t = 0.0)]
    pub omega: f64,
    /// Motion track file (`frame tx ty rot`), replacing velocity and omega.
    #[arg(long)]
    pub track: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Environment map size `WxH` for the env.pfm / env_direct.pfm pair.
    #[arg(long, default_value = "64x32", value_parser = parse_size)]
    pub env_size: (usize, usize),
    /// Also write the OLAT set of the static scene.
    #[arg(long)]
    pub reference_set: bool,
}

#[derive(Args, Debug)]
pub struct AlignArgs {
    /// Directory of frames (`.pfm` or `.png`) in capture order by file name.
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub rig: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleArgs,
    /// Skip motion compensation.
    #[arg(long)]
    pub raw: bool,
    #[arg(long = "pyramid-levels", visible_alias = "levels", default_value_t = 4)]
    pub levels: usize,
    #[arg(long, default_value_t = 8)]
    pub iterations: usize,
    #[arg(long, default_value_t = 6)]
    pub window_radius: usize,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("lighting").required(true).args(["env", "weights"])))]
#[command(group(clap::ArgGroup::new("input").required(true).multiple(true).args(["set", "sets"])))]
pub struct RelightArgs {
    /// OLAT set directory; repeat for a sequence.
    #[arg(long)]
    pub set: Vec<PathBuf>,
    /// Directory whose `set_*` children form the sequence.
    #[arg(long)]
    pub sets: Option<PathBuf>,
    /// Equirectangular environment map.
    #[arg(long)]
    pub env: Option<PathBuf>,
    /// Azimuthal rotation of the environment, degrees.
    #[arg(long = "rotate", default_value_t = 0.0, allow_negative_numbers = true)]
    pub rotate: f64,
    /// Per-LED weights file.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Add a rim light of this cone half-angle (degrees) behind the subject.
    #[arg(long)]
    pub rim_cone: Option<f64>,
    #[arg(long = "rim-rgb", default_value = "1,1,1", value_parser = parse_rgb)]
    pub rim_rgb: [f64; 3],
    /// Background plate to composite the relit frames over.
    #[arg(long, requires = "alpha")]
    pub bg: Option<PathBuf>,
    /// Foreground matte for `--bg`.
    #[arg(long, requires = "bg")]
    pub alpha: Option<PathBuf>,
    /// Preview exposure multiplier [default: automatic].
    #[arg(long)]
    pub exposure: Option<f32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RimArgs {
    #[arg(long)]
    pub rig: Option<PathBuf>,
    /// Cone half-angle around the axis pointing away from the camera, degrees.
    #[arg(long, default_value_t = 45.0)]
    pub cone: f64,
    #[arg(long, default_value = "1,1,1", value_parser = parse_rgb)]
    pub intensity: [f64; 3],
    /// Weights to add the rim to.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompositeArgs {
    #[arg(long)]
    pub fg: PathBuf,
    #[arg(long)]
    pub matte: PathBuf,
    #[arg(long)]
    pub bg: PathBuf,
    /// Output image; `.pfm` keeps HDR, `.png` writes a 16-bit preview.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct NormalizeArgs {
    #[arg(long)]
    pub src: PathBuf,
    /// Stream whose statistics are the target.
    #[arg(long)]
    pub tgt: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write both streams' mean and std.
    #[arg(long)]
    pub stats_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct MetricsArgs {
    /// Prediction image or directory.
    #[arg(long)]
    pub pred: PathBuf,
    /// Reference image or directory; files are paired by name.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    #[arg(long)]
    pub normals_pred: Option<PathBuf>,
    #[arg(long)]
    pub normals_gt: Option<PathBuf>,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Headerless 8-bit Bayer file, or a directory of `.raw` files.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub width: usize,
    #[arg(long)]
    pub height: usize,
    #[arg(long, default_value = "rggb")]
    pub pattern: olatkit::imageio::BayerPattern,
    /// Flip frames left-right (mirror-mounted camera).
    #[arg(long)]
    pub mirror: bool,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_numbers<const N: usize>(s: &str) -> std::result::Result<[f64; N], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    let arr: [f64; N] = v
        .try_into()
        .map_err(|_| format!("expected {N} comma-separated numbers"))?;
    if arr.iter().any(|x| !x.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(arr)
}

fn parse_pair(s: &str) -> std::result::Result<(f64, f64), String> {
    parse_numbers::<2>(s).map(|[a, b]| (a, b))
}

fn parse_rgb(s: &str) -> std::result::Result<[f64; 3], String> {
    parse_numbers::<3>(s)
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WxH")?;
    let p = |t: &str| t.trim().parse::<usize>().map_err(|e| e.to_string());
    Ok((p(w)?, p(h)?))
}

const SUBCOMMANDS: [&str; 8] = [
    "synth",
    "align",
    "relight",
    "rim",
    "composite",
    "normalize",
    "metrics",
    "ingest",
];

/// Splices `key = value` lines from `--config` in front of the explicit
/// subcommand arguments, so that explicit flags win.
fn expand_config(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy().into_owned();
        if a == "--config" {
            let v = args
                .get(i + 1)
                .ok_or_else(|| CliError::Usage("--config needs a file".into()))?
                .clone();
            path = Some(PathBuf::from(v));
            args.drain(i..i + 2);
            continue;
        }
        if let Some(v) = a.strip_prefix("--config=") {
            path = Some(PathBuf::from(v));
            args.remove(i);
            continue;
        }
        i += 1;
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let mut injected = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                no + 1
            ))
        })?;
        let (k, v) = (k.trim(), v.trim());
        match v {
            "true" => injected.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => injected.push(OsString::from(format!("--{k}={v}"))),
        }
    }
    let pos = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
        .ok_or_else(|| CliError::Usage("missing subcommand".into()))?;
    args.splice(pos + 1..pos + 1, injected);
    Ok(args)
}

fn run(args: Vec<OsString>) -> Result<()> {
    let args = expand_config(args)?;
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return Ok(());
            }
            let _ = e.print();
            let first = e.to_string().lines().next().unwrap_or_default().to_string();
            return Err(CliError::Usage(
                first.trim_start_matches("error: ").to_string(),
            ));
        }
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .map_err(|e| CliError::Validation(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(cli.command))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
