//! Light-stage geometry and conversion of target illumination into per-LED
//! weights.
//!
//! Environment maps are equirectangular: row 0 is the +Z zenith of the rig
//! frame, column 0 starts at azimuth 0 (the +X axis) and azimuth grows with the
//! column index. Each texel stands for the patch around its centre, whose polar
//! angle is `θ = (row + ½)·π/H` and solid angle `(2π/W)·(π/H)·sin θ`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::geom::Vec3;
use crate::imageio::RadianceImage;

#[derive(Debug, Error)]
pub enum RigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("led {0}: zero-length direction")]
    ZeroDirection(usize),
    #[error("duplicate led index {0}")]
    DuplicateIndex(usize),
    #[error("led indices are not dense: {0} missing")]
    MissingIndex(usize),
    #[error("leds {0} and {1} share a direction")]
    DuplicateDirection(usize, usize),
    #[error("rig has no leds")]
    Empty,
    #[error("missing `radius` header")]
    MissingRadius,
    #[error("environment map must be at least 2x2, got {0}x{1}")]
    EnvTooSmall(usize, usize),
    #[error("cone half-angle {0} rad outside (0, pi/2)")]
    ConeOutOfRange(f64),
    #[error("weights: {0}")]
    InvalidWeights(String),
}

pub type Result<T, E = RigError> = std::result::Result<T, E>;

/// Minimum angular separation, in radians, between two LEDs of one rig.
const MIN_SEPARATION: f64 = 1e-6;

/// The light dome: one unit direction per LED, pointing from the subject
/// toward the light.
#[derive(Clone, Debug, PartialEq)]
pub struct LightRig {
    name: String,
    radius: f64,
    leds: Vec<Vec3>,
}

impl LightRig {
    /// Validates and normalises `directions`; index `i` of the slice is LED `i`.
    pub fn new(name: impl Into<String>, radius: f64, directions: Vec<Vec3>) -> Result<Self> {
        if directions.is_empty() {
            return Err(RigError::Empty);
        }
        let leds = directions
            .into_iter()
            .enumerate()
            .map(|(i, d)| d.normalized().ok_or(RigError::ZeroDirection(i)))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..leds.len() {
            for j in i + 1..leds.len() {
                if leds[i].angle_to(leds[j]) < MIN_SEPARATION {
                    return Err(RigError::DuplicateDirection(i, j));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            radius,
            leds,
        })
    }

    /// `n` directions on a Fibonacci spiral: the shipped stand-in for an evenly
    /// populated dome when no measured layout is available.
    pub fn fibonacci(name: impl Into<String>, n: usize, radius: f64) -> Result<Self> {
        let golden = PI * (3.0 - 5f64.sqrt());
        let dirs = (0..n)
            .map(|i| {
                let z = 1.0 - (2.0 * i as f64 + 1.0) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                Vec3::new(r * phi.cos(), r * phi.sin(), z)
            })
            .collect();
        Self::new(name, radius, dirs)
    }

    /// 96 LEDs on a 1.3 m dome.
    pub fn default_dome() -> Self {
        Self::fibonacci("dome96", 96, 1.3).expect("fibonacci lattice is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.leds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leds.is_empty()
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.leds
    }

    /// Index of the LED with the smallest angular distance to `dir` (lowest
    /// index on ties).
    pub fn nearest(&self, dir: Vec3) -> usize {
        let mut best = 0;
        let mut best_dot = f64::NEG_INFINITY;
        for (i, d) in self.leds.iter().enumerate() {
            let c = d.dot(dir);
            if c > best_dot {
                best_dot = c;
                best = i;
            }
        }
        best
    }

    /// Same rig with LEDs reordered so that new LED `k` is old LED `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            radius: self.radius,
            leds: perm.iter().map(|&i| self.leds[i]).collect(),
        }
    }

    pub fn parse(default_name: &str, text: &str) -> Result<Self> {
        let mut radius = None;
        let mut name = default_name.to_string();
        let mut entries: Vec<(usize, Vec3)> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let tok: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: &str| RigError::Parse {
                line: line_no,
                msg: msg.to_string(),
            };
            match tok[0] {
                "radius" => {
                    let r: f64 = tok
                        .get(1)
                        .and_then(|t| t.parse().ok())
                        .filter(|r: &f64| r.is_finite() && *r > 0.0)
                        .ok_or_else(|| err("radius must be a positive number"))?;
                    radius = Some(r);
                }
                "name" => {
                    name = tok.get(1).ok_or_else(|| err("missing name"))?.to_string();
                }
                _ => {
                    if tok.len() != 4 {
                        return Err(err("expected `index x y z`"));
                    }
                    let idx: usize = tok[0].parse().map_err(|_| err("bad led index"))?;
                    let mut v = [0f64; 3];
                    for (k, t) in tok[1..].iter().enumerate() {
                        v[k] = t
                            .parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| err("bad coordinate"))?;
                    }
                    entries.push((idx, Vec3::new(v[0], v[1], v[2])));
                }
            }
        }
        let radius = radius.ok_or(RigError::MissingRadius)?;
        if entries.is_empty() {
            return Err(RigError::Empty);
        }
        let mut by_index = std::collections::BTreeMap::new();
        for (idx, d) in entries {
            if by_index.insert(idx, d).is_some() {
                return Err(RigError::DuplicateIndex(idx));
            }
        }
        if let Some(missing) = (0..by_index.len()).find(|i| !by_index.contains_key(i)) {
            return Err(RigError::MissingIndex(missing));
        }
        let dirs = by_index.into_values().collect();
        Self::new(name, radius, dirs)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("# light rig\nname {}\nradius {}\n", self.name, self.radius);
        for (i, d) in self.leds.iter().enumerate() {
            let _ = writeln!(s, "{i} {:.17} {:.17} {:.17}", d.x, d.y, d.z);
        }
        s
    }
}

/// Loads a rig file: a `radius <m>` header, optional `name <id>`, then one
/// `index x y z` line per LED. `#` starts a comment. Directions are
/// re-normalised. The rig name defaults to the file stem.
pub fn load_rig(path: &Path) -> Result<LightRig> {
    let text = fs::read_to_string(path).map_err(|e| RigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("rig");
    LightRig::parse(stem, &text)
}

/// Equirectangular radiance with an azimuthal rotation.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentMap {
    image: RadianceImage,
    rotation: f64,
}

impl EnvironmentMap {
    pub fn new(image: RadianceImage, rotation: f64) -> Result<Self> {
        if image.width() < 2 || image.height() < 2 {
            return Err(RigError::EnvTooSmall(image.width(), image.height()));
        }
        if !rotation.is_finite() {
            return Err(RigError::InvalidWeights("rotation must be finite".into()));
        }
        Ok(Self { image, rotation })
    }

    pub fn image(&self) -> &RadianceImage {
        &self.image
    }

    pub fn rotation(&self) -> f64 {
        self.rotation
    }

    pub fn with_rotation(mut self, rotation: f64) -> Self {
        self.rotation = rotation;
        self
    }

    /// Polar angle of the centre of `row`.
    #[inline]
    pub fn texel_theta(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * PI / self.image.height() as f64
    }

    /// Solid angle covered by any texel of `row`.
    #[inline]
    pub fn texel_solid_angle(&self, row: usize) -> f64 {
        let (w, h) = (self.image.width() as f64, self.image.height() as f64);
        (2.0 * PI / w) * (PI / h) * self.texel_theta(row).sin()
    }

    /// World direction of the centre of texel `(row, col)` after rotation.
    #[inline]
    pub fn texel_direction(&self, row: usize, col: usize) -> Vec3 {
        let w = self.image.width() as f64;
        let phi = (col as f64 + 0.5) * 2.0 * PI / w + self.rotation.rem_euclid(2.0 * PI);
        Vec3::from_spherical(self.texel_theta(row), phi)
    }

    /// Per-channel ∫ L dω over the sphere, as the texel sum used for binning.
    pub fn integral(&self) -> [f64; 3] {
        let mut acc = [0f64; 3];
        for row in 0..self.image.height() {
            let dw = self.texel_solid_angle(row);
            for col in 0..self.image.width() {
                let px = self.image.pixel(col, row);
                for c in 0..3 {
                    acc[c] += f64::from(px[c]) * dw;
                }
            }
        }
        acc
    }
}

/// Per-LED RGB coefficients (radiance × solid angle). Non-negative and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct LightWeights {
    weights: Vec<[f64; 3]>,
}

impl LightWeights {
    pub fn new(weights: Vec<[f64; 3]>) -> Result<Self> {
        for (i, w) in weights.iter().enumerate() {
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(RigError::InvalidWeights(format!(
                    "led {i} has invalid weight {w:?}"
                )));
            }
        }
        Ok(Self { weights })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            weights: vec![[0.0; 3]; n],
        }
    }

    /// Every LED at `rgb`.
    pub fn uniform(n: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(vec![rgb; n])
    }

    /// `rgb` on LED `k`, zero elsewhere.
    pub fn one_hot(n: usize, k: usize, rgb: [f64; 3]) -> Result<Self> {
        let mut w = vec![[0.0; 3]; n];
        w[k] = rgb;
        Self::new(w)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[[f64; 3]] {
        &self.weights
    }

    pub fn channel_sums(&self) -> [f64; 3] {
        let mut s = [0.0; 3];
        for w in &self.weights {
            for c in 0..3 {
                s[c] += w[c];
            }
        }
        s
    }

    /// `s · self`, for `s ≥ 0`.
    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::new(
            self.weights
                .iter()
                .map(|w| [w[0] * s, w[1] * s, w[2] * s])
                .collect(),
        )
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            weights: perm.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    /// Text form: `leds <n>` then `index r g b` per line; `#` comments.
    pub fn to_text(&self) -> String {
        let mut s = format!("leds {}\n", self.weights.len());
        for (i, w) in self.weights.iter().enumerate() {
            let _ = writeln!(s, "{i} {:e} {:e} {:e}", w[0], w[1], w[2]);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut n = None;
        let mut w: Vec<Option<[f64; 3]>> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| RigError::Parse {
                line: ln + 1,
                msg: msg.into(),
            };
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok[0] == "leds" {
                let count: usize = tok
                    .get(1)
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err("bad led count"))?;
                n = Some(count);
                w = vec![None; count];
                continue;
            }
            if n.is_none() {
                return Err(err("`leds <n>` header must come first"));
            }
            if tok.len() != 4 {
                return Err(err("expected `index r g b`"));
            }
            let idx: usize = tok[0].parse().map_err(|_| err("bad index"))?;
            let mut rgb = [0.0; 3];
            for c in 0..3 {
                rgb[c] = tok[c + 1].parse().map_err(|_| err("bad weight"))?;
            }
            let slot = w.get_mut(idx).ok_or_else(|| err("index out of range"))?;
            if slot.replace(rgb).is_some() {
                return Err(RigError::DuplicateIndex(idx));
            }
        }
        if n.is_none() {
            return Err(RigError::Empty);
        }
        // unlisted LEDs are off
        Self::new(w.into_iter().map(|v| v.unwrap_or([0.0; 3])).collect())
    }
}

/// Projects `env` onto the rig by nearest-LED binning: every texel's
/// radiance × solid angle is added to the LED angularly closest to the texel
/// direction. The per-channel sum of the result equals [`EnvironmentMap::integral`].
pub fn env_to_weights(env: &EnvironmentMap, rig: &LightRig) -> LightWeights {
    let mut acc = vec![[0f64; 3]; rig.len()];
    let img = env.image();
    for row in 0..img.height() {
        let dw = env.texel_solid_angle(row);
        for col in 0..img.width() {
            let px = img.pixel(col, row);
            if px == [0.0; 3] {
                continue;
            }
            let k = rig.nearest(env.texel_direction(row, col));
            for c in 0..3 {
                acc[k][c] += f64::from(px[c]) * dw;
            }
        }
    }
    LightWeights { weights: acc }
}

/// LEDs within `half_angle` of the −Z axis, i.e. behind the subject as seen
/// from the camera.
pub fn rear_cone_leds(rig: &LightRig, half_angle: f64) -> Result<Vec<usize>> {
    if !(half_angle > 0.0 && half_angle < PI / 2.0) {
        return Err(RigError::ConeOutOfRange(half_angle));
    }
    let cos = half_angle.cos();
    Ok(rig
        .directions()
        .iter()
        .enumerate()
        .filter(|(_, d)| d.dot(-Vec3::Z) > cos)
        .map(|(i, _)| i)
        .collect())
}

/// Rim-light preset: `intensity` on every LED of the rear cone, zero elsewhere.
/// Logs a warning if the cone selects no LED.
pub fn rim_preset(rig: &LightRig, half_angle: f64, intensity: [f64; 3]) -> Result<LightWeights> {
    let selected = rear_cone_leds(rig, half_angle)?;
    if selected.is_empty() {
        log::warn!(
            "rim cone of {:.2} deg selects no led of rig {}",
            half_angle.to_degrees(),
            rig.name()
        );
    }
    let mut w = vec![[0.0; 3]; rig.len()];
    for i in selected {
        w[i] = intensity;
    }
    LightWeights::new(w)
}

/// `intensity` on every LED within `half_angle` of `axis`. Building block for
/// the editable studio presets.
pub fn spot_preset(
    rig: &LightRig,
    axis: Vec3,
    half_angle: f64,
    intensity: [f64; 3],
) -> Result<LightWeights> {
    let axis = axis.normalized().ok_or(RigError::ZeroDirection(0))?;
    let cos = half_angle.cos();
    LightWeights::new(
        rig.directions()
            .iter()
            .map(|d| {
                if d.dot(axis) > cos {
                    intensity
                } else {
                    [0.0; 3]
                }
            })
            .collect(),
    )
}
