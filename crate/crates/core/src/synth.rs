//! Synthetic Lambertian ground truth: a textured sphere in front of a textured
//! backdrop, lit by directional lights, moving rigidly in the image plane.
//!
//! Pixel centres sit at integer coordinates. The backdrop faces the camera, so
//! it is shaded like a surface with normal `+Z`. Under a [`Pose`] the whole
//! picture is translated and rotated about the sphere centre; the backdrop
//! moves with the sphere, which keeps the ground-truth flow analytic.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::align::{AlignError, CaptureSchedule, FlowField, FrameLabel, FrameSource};
use crate::geom::Vec3;
use crate::imageio::{AlphaMatte, NormalMap, Plane, RadianceImage};
use crate::relight::OlatSet;
use crate::rig::{EnvironmentMap, LightRig, LightWeights};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scene: {0}")]
    BadScene(String),
    #[error("invalid motion track: {0}")]
    BadTrack(String),
    #[error("track covers {have} frames, stream needs {need}")]
    TrackTooShort { need: usize, have: usize },
    #[error("rig has {rig} LEDs but weights have {weights}")]
    WeightCount { rig: usize, weights: usize },
    #[error("track line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Align(#[from] AlignError),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;

/// Rigid in-plane motion relative to the scene's reference placement.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Pose {
    pub tx: f64,
    pub ty: f64,
    /// Counter-clockwise on screen, radians, about the sphere centre.
    pub rot: f64,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        tx: 0.0,
        ty: 0.0,
        rot: 0.0,
    };

    pub fn translation(tx: f64, ty: f64) -> Pose {
        Pose { tx, ty, rot: 0.0 }
    }
}

/// Textured sphere (orthographic) over a textured backdrop.
#[derive(Clone, Debug)]
pub struct SyntheticScene {
    width: usize,
    height: usize,
    center: (f64, f64),
    radius: f64,
    /// Covers the frame plus a margin so that moved frames stay textured.
    albedo_map: RadianceImage,
    /// Map coordinates of frame pixel (0, 0) in the reference pose.
    origin: (f64, f64),
    background: [f64; 3],
}

/// Smooth random RGB texture in `[0.1, 0.9]`: a sum of a few plane waves per
/// channel with wavelengths between 8 and 48 px.
pub fn smooth_texture(width: usize, height: usize, seed: u64) -> RadianceImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let waves: Vec<Vec<(f64, f64, f64, f64)>> = (0..3)
        .map(|_| {
            (0..6)
                .map(|_| {
                    let wavelength = rng.gen_range(8.0..48.0);
                    let angle = rng.gen_range(0.0..PI);
                    let k = 2.0 * PI / wavelength;
                    (
                        k * angle.cos(),
                        k * angle.sin(),
                        rng.gen_range(0.0..2.0 * PI),
                        rng.gen_range(0.5..1.0),
                    )
                })
                .collect()
        })
        .collect();
    RadianceImage::from_fn(width, height, |x, y| {
        let mut px = [0f32; 3];
        for (c, ws) in waves.iter().enumerate() {
            let norm: f64 = ws.iter().map(|w| w.3).sum();
            let s: f64 = ws
                .iter()
                .map(|(kx, ky, ph, a)| a * (kx * x as f64 + ky * y as f64 + ph).sin())
                .sum();
            px[c] = (0.5 + 0.4 * s / norm) as f32;
        }
        px
    })
}

impl SyntheticScene {
    /// Sphere of `radius` px centred in a `width × height` frame, random smooth
    /// albedo from `seed`, grey-brown backdrop tint, texture margin of half the
    /// larger frame side.
    pub fn new(width: usize, height: usize, radius: f64, seed: u64) -> Result<Self> {
        let margin = width.max(height) / 2;
        let map = smooth_texture(width + 2 * margin, height + 2 * margin, seed);
        Self::from_parts(
            width,
            height,
            ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0),
            radius,
            map,
            (margin as f64, margin as f64),
            [0.6, 0.55, 0.5],
        )
    }

    pub fn from_parts(
        width: usize,
        height: usize,
        center: (f64, f64),
        radius: f64,
        albedo_map: RadianceImage,
        origin: (f64, f64),
        background: [f64; 3],
    ) -> Result<Self> {
        let bad = |m: String| Err(SynthError::BadScene(m));
        if width < 2 || height < 2 {
            return bad(format!("frame {width}x{height} is too small"));
        }
        if !(radius > 0.0)
            || center.0 - radius < 0.0
            || center.1 - radius < 0.0
            || center.0 + radius > (width - 1) as f64
            || center.1 + radius > (height - 1) as f64
        {
            return bad(format!(
                "sphere at {center:?} radius {radius} leaves the frame"
            ));
        }
        if albedo_map.data().iter().any(|v| *v > 1.0) {
            return bad("albedo exceeds 1".into());
        }
        if background.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("background outside [0, 1]".into());
        }
        Ok(Self {
            width,
            height,
            center,
            radius,
            albedo_map,
            origin,
            background,
        })
    }

    pub fn with_center(mut self, center: (f64, f64)) -> Result<Self> {
        self.center = center;
        Self::from_parts(
            self.width,
            self.height,
            center,
            self.radius,
            self.albedo_map,
            self.origin,
            self.background,
        )
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

    pub fn center(&self) -> (f64, f64) {
        self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn background(&self) -> [f64; 3] {
        self.background
    }

    /// Sphere centre on screen under `pose`.
    pub fn center_at(&self, pose: Pose) -> (f64, f64) {
        (self.center.0 + pose.tx, self.center.1 + pose.ty)
    }

    /// Reference-pose position of the material seen at pixel `(x, y)` under `pose`.
    fn material_point(&self, pose: Pose, x: f64, y: f64) -> (f64, f64) {
        let (cx, cy) = self.center_at(pose);
        let (dx, dy) = (x - cx, y - cy);
        // screen y points down, so a counter-clockwise turn is negative in pixel axes
        let (s, c) = (-pose.rot).sin_cos();
        let (rx, ry) = (c * dx + s * dy, -s * dx + c * dy);
        (self.center.0 + rx, self.center.1 + ry)
    }

    /// Per-pixel albedo and unit normal under `pose`.
    pub fn surface(&self, pose: Pose) -> Surface {
        let (w, h) = self.dims();
        let (cx, cy) = self.center_at(pose);
        let r = self.radius;
        let planes: Vec<Plane> = (0..3).map(|c| self.albedo_map.channel(c)).collect();
        let mut albedo = vec![[0f64; 3]; w * h];
        let mut normal = vec![Vec3::Z; w * h];
        let mut inside = vec![false; w * h];
        albedo
            .par_chunks_mut(w)
            .zip(normal.par_chunks_mut(w))
            .zip(inside.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, ((arow, nrow), irow))| {
                for x in 0..w {
                    let (mx, my) = self.material_point(pose, x as f64, y as f64);
                    let (u, v) = ((mx + self.origin.0) as f32, (my + self.origin.1) as f32);
                    let a = [0, 1, 2].map(|c| f64::from(planes[c].sample(u, v)));
                    let (dx, dy) = ((x as f64 - cx) / r, -(y as f64 - cy) / r);
                    let q = dx * dx + dy * dy;
                    if q < 1.0 {
                        irow[x] = true;
                        arow[x] = a;
                        nrow[x] = Vec3::new(dx, dy, (1.0 - q).sqrt())
                            .normalized()
                            .expect("unit sphere point");
                    } else {
                        arow[x] = [0, 1, 2].map(|c| a[c] * self.background[c]);
                    }
                }
            });
        Surface {
            width: w,
            height: h,
            albedo,
            normal,
            inside,
        }
    }

    /// Sphere coverage with 4×4 supersampling.
    pub fn matte(&self, pose: Pose) -> AlphaMatte {
        let (cx, cy) = self.center_at(pose);
        let r2 = self.radius * self.radius;
        let mut data = vec![0f32; self.width * self.height];
        data.par_chunks_mut(self.width)
            .enumerate()
            .for_each(|(y, row)| {
                for (x, o) in row.iter_mut().enumerate() {
                    let mut hits = 0;
                    for sy in 0..4 {
                        for sx in 0..4 {
                            let px = x as f64 - 0.375 + 0.25 * sx as f64 - cx;
                            let py = y as f64 - 0.375 + 0.25 * sy as f64 - cy;
                            if px * px + py * py < r2 {
                                hits += 1;
                            }
                        }
                    }
                    *o = hits as f32 / 16.0;
                }
            });
        AlphaMatte::new(self.width, self.height, data).expect("coverage in [0, 1]")
    }

    /// Sphere pixels within `band_px` of the silhouette.
    pub fn silhouette_band(&self, pose: Pose, band_px: f64) -> Vec<bool> {
        let (cx, cy) = self.center_at(pose);
        self.pixel_mask(|x, y| {
            let d = (x - cx).hypot(y - cy);
            d < self.radius && d >= self.radius - band_px
        })
    }

    /// Sphere pixels within `fraction·radius` of the centre.
    pub fn center_disc(&self, pose: Pose, fraction: f64) -> Vec<bool> {
        let (cx, cy) = self.center_at(pose);
        self.pixel_mask(|x, y| (x - cx).hypot(y - cy) < fraction * self.radius)
    }

    fn pixel_mask(&self, f: impl Fn(f64, f64) -> bool) -> Vec<bool> {
        (0..self.width * self.height)
            .map(|i| f((i % self.width) as f64, (i / self.width) as f64))
            .collect()
    }
}

/// Albedo and normals of every pixel for one pose.
#[derive(Clone, Debug)]
pub struct Surface {
    width: usize,
    height: usize,
    albedo: Vec<[f64; 3]>,
    normal: Vec<Vec3>,
    inside: Vec<bool>,
}

impl Surface {
    /// `out = albedo ⊙ shading(normal)`, rows in parallel.
    fn shade(&self, shading: impl Fn(Vec3) -> [f64; 3] + Sync) -> RadianceImage {
        let w = self.width;
        let mut out = vec![0f32; w * self.height * 3];
        out.par_chunks_mut(w * 3).enumerate().for_each(|(y, row)| {
            for x in 0..w {
                let i = y * w + x;
                let s = shading(self.normal[i]);
                for c in 0..3 {
                    row[x * 3 + c] = (self.albedo[i][c] * s[c]) as f32;
                }
            }
        });
        RadianceImage::from_vec_unchecked(w, self.height, out)
    }

    pub fn normal_map(&self) -> NormalMap {
        let mut m = NormalMap::new(self.width, self.height);
        for (o, n) in m.data.iter_mut().zip(&self.normal) {
            *o = [n.x as f32, n.y as f32, n.z as f32];
        }
        m
    }

    pub fn albedo_image(&self) -> RadianceImage {
        let data = self
            .albedo
            .iter()
            .flat_map(|a| a.map(|v| v as f32))
            .collect();
        RadianceImage::from_vec_unchecked(self.width, self.height, data)
    }

    pub fn sphere_mask(&self) -> &[bool] {
        &self.inside
    }

    /// One directional light along `d` with unit RGB intensity.
    pub fn render_light(&self, d: Vec3) -> RadianceImage {
        self.shade(|n| [n.dot(d).max(0.0); 3])
    }

    pub fn render_weighted(&self, rig: &LightRig, weights: &LightWeights) -> Result<RadianceImage> {
        if rig.len() != weights.len() {
            return Err(SynthError::WeightCount {
                rig: rig.len(),
                weights: weights.len(),
            });
        }
        let lights: Vec<(Vec3, [f64; 3])> = rig
            .directions()
            .iter()
            .copied()
            .zip(weights.as_slice().iter().copied())
            .filter(|(_, w)| *w != [0.0; 3])
            .collect();
        Ok(self.shade(|n| {
            let mut s = [0.0; 3];
            for (d, w) in &lights {
                let c = n.dot(*d).max(0.0);
                for k in 0..3 {
                    s[k] += w[k] * c;
                }
            }
            s
        }))
    }

    /// Brute-force `albedo ⊙ Σ L(ω)·max(0, n·ω)·ΔΩ` over every texel of `env`.
    pub fn render_env(&self, env: &EnvironmentMap) -> RadianceImage {
        let img = env.image();
        let mut texels = Vec::with_capacity(img.width() * img.height());
        for row in 0..img.height() {
            let dw = env.texel_solid_angle(row);
            for col in 0..img.width() {
                let px = img.pixel(col, row);
                if px != [0.0; 3] {
                    texels.push((env.texel_direction(row, col), px.map(|v| f64::from(v) * dw)));
                }
            }
        }
        let irradiance = |n: Vec3| {
            let mut s = [0.0; 3];
            for (d, l) in &texels {
                let c = n.dot(*d).max(0.0);
                if c > 0.0 {
                    for k in 0..3 {
                        s[k] += l[k] * c;
                    }
                }
            }
            s
        };
        // every backdrop pixel faces +Z
        let backdrop = irradiance(Vec3::Z);
        self.shade(|n| {
            if n == Vec3::Z {
                backdrop
            } else {
                irradiance(n)
            }
        })
    }
}

/// OLAT set of the scene at the reference pose.
pub fn render_olat(scene: &SyntheticScene, rig: &LightRig) -> OlatSet {
    render_olat_at(scene, rig, Pose::IDENTITY, 0)
}

/// OLAT set of the scene under `pose`, stamped with `anchor_ts`.
pub fn render_olat_at(
    scene: &SyntheticScene,
    rig: &LightRig,
    pose: Pose,
    anchor_ts: u64,
) -> OlatSet {
    let surface = scene.surface(pose);
    let images = rig
        .directions()
        .par_iter()
        .map(|d| surface.render_light(*d))
        .collect();
    OlatSet::new(images, rig.name().to_string(), anchor_ts).expect("non-empty rig, equal sizes")
}

/// Direct render under an environment map at the reference pose.
pub fn render_env_direct(scene: &SyntheticScene, env: &EnvironmentMap) -> RadianceImage {
    scene.surface(Pose::IDENTITY).render_env(env)
}

/// Smooth random environment: a coloured ambient term plus 2–4 broad lobes
/// `a·exp(κ(ω·μ − 1))` with `κ ∈ [1, 6]`.
pub fn smooth_random_env(width: usize, height: usize, seed: u64) -> EnvironmentMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ambient: [f64; 3] = [0, 1, 2].map(|_| rng.gen_range(0.02..0.1));
    let lobes: Vec<(Vec3, f64, [f64; 3])> = (0..rng.gen_range(2..=4))
        .map(|_| {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let phi: f64 = rng.gen_range(0.0..2.0 * PI);
            let s = (1.0 - z * z).sqrt();
            let mu = Vec3::new(s * phi.cos(), s * phi.sin(), z);
            let kappa = rng.gen_range(1.0..6.0);
            let rgb = [0, 1, 2].map(|_| rng.gen_range(0.2..1.0));
            (mu, kappa, rgb)
        })
        .collect();
    let probe = EnvironmentMap::new(RadianceImage::new(width, height), 0.0)
        .expect("size checked by caller");
    let image = RadianceImage::from_fn(width, height, |col, row| {
        let d = probe.texel_direction(row, col);
        let mut px = ambient;
        for (mu, kappa, rgb) in &lobes {
            let f = (kappa * (d.dot(*mu) - 1.0)).exp();
            for c in 0..3 {
                px[c] += rgb[c] * f;
            }
        }
        px.map(|v| v as f32)
    });
    EnvironmentMap::new(image, 0.0).expect("valid size")
}

/// Per-frame poses.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionTrack {
    poses: Vec<Pose>,
}

impl MotionTrack {
    pub fn new(poses: Vec<Pose>) -> Result<Self> {
        if let Some(i) = poses
            .iter()
            .position(|p| !(p.tx.is_finite() && p.ty.is_finite() && p.rot.is_finite()))
        {
            return Err(SynthError::BadTrack(format!("frame {i} is not finite")));
        }
        Ok(Self { poses })
    }

    pub fn stationary(n: usize) -> Self {
        Self {
            poses: vec![Pose::IDENTITY; n],
        }
    }

    /// `translation(ts) = v·(ts − ts_ref)`, `rot(ts) = ω·(ts − ts_ref)`.
    pub fn constant_velocity(n: usize, v: (f64, f64), omega: f64, ts_ref: f64) -> Result<Self> {
        Self::new(
            (0..n)
                .map(|t| {
                    let dt = t as f64 - ts_ref;
                    Pose {
                        tx: v.0 * dt,
                        ty: v.1 * dt,
                        rot: omega * dt,
                    }
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn poses(&self) -> &[Pose] {
        &self.poses
    }

    pub fn pose(&self, ts: u64) -> Pose {
        self.poses[ts as usize]
    }

    /// Rejects steps of a quarter of the frame diagonal or more.
    pub fn validate_for(&self, scene: &SyntheticScene) -> Result<()> {
        let limit = (scene.width as f64).hypot(scene.height as f64) / 4.0;
        for (i, w) in self.poses.windows(2).enumerate() {
            let step = (w[1].tx - w[0].tx).hypot(w[1].ty - w[0].ty);
            if step >= limit {
                return Err(SynthError::BadTrack(format!(
                    "frame {} moves {step:.1} px, limit {limit:.1}",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    /// `frame tx ty rot` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# frame tx ty rot\n");
        for (i, p) in self.poses.iter().enumerate() {
            let _ = writeln!(s, "{i} {:?} {:?} {:?}", p.tx, p.ty, p.rot);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut poses = Vec::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| SynthError::Parse {
                line: no + 1,
                msg: msg.to_string(),
            };
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok.len() != 4 {
                return Err(err("expected `frame tx ty rot`"));
            }
            let frame: usize = tok[0].parse().map_err(|_| err("bad frame index"))?;
            if frame != poses.len() {
                return Err(err("frames must be consecutive from 0"));
            }
            let v: Vec<f64> = tok[1..]
                .iter()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err("bad number"))?;
            poses.push(Pose {
                tx: v[0],
                ty: v[1],
                rot: v[2],
            });
        }
        Self::new(poses)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }
}

/// Flow `F` with `frame_dst(p) = frame_src(p + F(p))` for the rigid motion of
/// the scene between the two frames.
pub fn ground_truth_flow(
    scene: &SyntheticScene,
    track: &MotionTrack,
    src_ts: u64,
    dst_ts: u64,
) -> FlowField {
    let (ps, pd) = (track.pose(src_ts), track.pose(dst_ts));
    let (csx, csy) = scene.center_at(ps);
    let (s, c) = ps.rot.sin_cos();
    FlowField::from_fn(scene.width, scene.height, |x, y| {
        let (mx, my) = scene.material_point(pd, x as f64, y as f64);
        let (dx, dy) = (mx - scene.center.0, my - scene.center.1);
        // forward of material_point under the source pose
        let sx = csx + c * dx + s * dy;
        let sy = csy - s * dx + c * dy;
        [(sx - x as f64) as f32, (sy - y as f64) as f32]
    })
}

/// Pixels of the anchor frame whose content is inside the frame in every
/// source frame.
pub fn valid_mask(
    scene: &SyntheticScene,
    track: &MotionTrack,
    anchor: u64,
    sources: &[u64],
) -> Vec<bool> {
    let (w, h) = scene.dims();
    let mut mask = vec![true; w * h];
    let mut seen = sources.to_vec();
    seen.sort_unstable();
    seen.dedup();
    for &ts in &seen {
        let f = ground_truth_flow(scene, track, ts, anchor);
        for (i, m) in mask.iter_mut().enumerate() {
            let d = f.data()[i];
            let (x, y) = ((i % w) as f32 + d[0], (i / w) as f32 + d[1]);
            if x < 0.0 || y < 0.0 || x > (w - 1) as f32 || y > (h - 1) as f32 {
                *m = false;
            }
        }
    }
    mask
}

/// Rendered capture with its labels and the motion that produced it.
#[derive(Clone, Debug)]
pub struct CaptureStream {
    pub frames: Vec<RadianceImage>,
    pub labels: Vec<FrameLabel>,
    pub track: MotionTrack,
}

impl FrameSource for CaptureStream {
    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn load(&self, ts: u64) -> Result<Cow<'_, RadianceImage>, AlignError> {
        self.frames[..].load(ts)
    }
}

/// Renders `n_frames` of an interleaved capture: OLAT frames lit by their LED
/// at unit intensity, tracking frames by every LED at unit intensity.
pub fn render_capture_stream(
    scene: &SyntheticScene,
    rig: &LightRig,
    schedule: &CaptureSchedule,
    track: &MotionTrack,
    n_frames: usize,
) -> Result<CaptureStream> {
    schedule.validate()?;
    if track.len() < n_frames {
        return Err(SynthError::TrackTooShort {
            need: n_frames,
            have: track.len(),
        });
    }
    if rig.len() != schedule.n_leds() {
        return Err(AlignError::LedCountMismatch {
            rig: rig.len(),
            schedule: schedule.n_leds(),
        }
        .into());
    }
    track.validate_for(scene)?;
    let full = LightWeights::uniform(rig.len(), [1.0; 3]).expect("finite");
    let labels = schedule.labels(n_frames);
    let frames = labels
        .par_iter()
        .enumerate()
        .map(|(ts, label)| {
            let surface = scene.surface(track.pose(ts as u64));
            match label {
                FrameLabel::Tracking => surface.render_weighted(rig, &full),
                FrameLabel::Olat(i) => Ok(surface.render_light(rig.directions()[*i])),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CaptureStream {
        frames,
        labels,
        track: track.clone(),
    })
}
