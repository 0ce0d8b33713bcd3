//! Per-dimension distribution matching of parameter streams.
//!
//! A source stream with statistics `(μ_s, σ_s)` is mapped onto target
//! statistics `(μ_t, σ_t)` by
//!
//! ```text
//! x̂ = (σ_t ⊘ σ_s) ∘ (x − μ_s) + μ_t
//! ```
//!
//! with `⊘`/`∘` element-wise. Standard deviations are population (divide by
//! `n`) and floored at [`STD_FLOOR`], so a frozen dimension maps onto the
//! target mean instead of failing.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum NormalizeError {
    #[error("parameter stream is empty")]
    Empty,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value at frame {frame}, dimension {dim}")]
    NonFinite { frame: usize, dim: usize },
    #[error("statistics contain a non-finite or non-positive entry")]
    BadStats,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

pub type Result<T, E = NormalizeError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamTag {
    Pose,
    Expression,
}

impl fmt::Display for ParamTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamTag::Pose => "pose",
            ParamTag::Expression => "expression",
        })
    }
}

impl FromStr for ParamTag {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "pose" => Ok(ParamTag::Pose),
            "expression" => Ok(ParamTag::Expression),
            _ => Err(format!("unknown tag {s:?}")),
        }
    }
}

/// Time-ordered `D`-dimensional parameter vectors of one family.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStream {
    vectors: Vec<Vec<f64>>,
    dim: usize,
    tag: ParamTag,
}

impl ParamStream {
    pub fn new(dim: usize, tag: ParamTag, vectors: Vec<Vec<f64>>) -> Result<Self> {
        for (frame, v) in vectors.iter().enumerate() {
            if v.len() != dim {
                return Err(NormalizeError::DimensionMismatch {
                    expected: dim,
                    got: v.len(),
                });
            }
            if let Some(d) = v.iter().position(|x| !x.is_finite()) {
                return Err(NormalizeError::NonFinite { frame, dim: d });
            }
        }
        Ok(Self { vectors, dim, tag })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tag(&self) -> ParamTag {
        self.tag
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    /// Text form: header `dim <D> tag <pose|expression>`, then one frame per line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<(usize, ParamTag)> = None;
        let mut vectors = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| NormalizeError::Parse { line: ln + 1, msg };
            let tok: Vec<&str> = line.split_whitespace().collect();
            match header {
                None => {
                    if tok.len() != 4 || tok[0] != "dim" || tok[2] != "tag" {
                        return Err(err("expected `dim <D> tag <pose|expression>`".into()));
                    }
                    let d = tok[1].parse().map_err(|_| err("bad dim".into()))?;
                    let tag = tok[3].parse().map_err(err)?;
                    header = Some((d, tag));
                }
                Some((d, _)) => {
                    let v = tok
                        .iter()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| err("bad number".into()))?;
                    if v.len() != d {
                        return Err(err(format!("expected {d} values, got {}", v.len())));
                    }
                    vectors.push(v);
                }
            }
        }
        let (dim, tag) = header.ok_or(NormalizeError::Parse {
            line: 0,
            msg: "missing header".into(),
        })?;
        Self::new(dim, tag, vectors)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("dim {} tag {}\n", self.dim, self.tag);
        for v in &self.vectors {
            let row: Vec<String> = v.iter().map(|x| format!("{x:e}")).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
        s
    }
}

/// Per-dimension population mean and (floored) standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct StreamStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub count: usize,
}

impl StreamStats {
    fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(NormalizeError::DimensionMismatch {
                expected: self.mean.len(),
                got: self.std.len(),
            });
        }
        if self.mean.iter().any(|m| !m.is_finite())
            || self.std.iter().any(|s| !s.is_finite() || *s <= 0.0)
        {
            return Err(NormalizeError::BadStats);
        }
        Ok(())
    }

    /// Labelled text block: `count`, `mean`, `std` lines.
    pub fn to_text(&self, label: &str) -> String {
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:e}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        format!(
            "[{label}]\ncount {}\nmean {}\nstd {}\n",
            self.count,
            fmt(&self.mean),
            fmt(&self.std)
        )
    }
}

/// Arithmetic mean vector of the stream.
pub fn mean_param(stream: &ParamStream) -> Result<Vec<f64>> {
    if stream.is_empty() {
        return Err(NormalizeError::Empty);
    }
    let mut sum = vec![0f64; stream.dim];
    for v in &stream.vectors {
        for (s, x) in sum.iter_mut().zip(v) {
            *s += x;
        }
    }
    let n = stream.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

/// Two-pass population statistics.
pub fn estimate_stats(stream: &ParamStream) -> Result<StreamStats> {
    let mean = mean_param(stream)?;
    let mut var = vec![0f64; stream.dim];
    for v in &stream.vectors {
        for ((acc, x), m) in var.iter_mut().zip(v).zip(&mean) {
            let d = x - m;
            *acc += d * d;
        }
    }
    let n = stream.len() as f64;
    let std = var
        .into_iter()
        .map(|s| (s / n).sqrt().max(STD_FLOOR))
        .collect();
    Ok(StreamStats {
        mean,
        std,
        count: stream.len(),
    })
}

/// Maps `src` from `src_stats` onto `tgt_stats`.
pub fn normalize_stream(
    src: &ParamStream,
    src_stats: &StreamStats,
    tgt_stats: &StreamStats,
) -> Result<ParamStream> {
    src_stats.validate()?;
    tgt_stats.validate()?;
    for stats in [src_stats, tgt_stats] {
        if stats.mean.len() != src.dim {
            return Err(NormalizeError::DimensionMismatch {
                expected: src.dim,
                got: stats.mean.len(),
            });
        }
    }
    let gain: Vec<f64> = tgt_stats
        .std
        .iter()
        .zip(&src_stats.std)
        .map(|(t, s)| t / s)
        .collect();
    let vectors = src
        .vectors
        .iter()
        .map(|v| {
            (0..src.dim)
                .map(|d| gain[d] * (v[d] - src_stats.mean[d]) + tgt_stats.mean[d])
                .collect()
        })
        .collect();
    ParamStream::new(src.dim, src.tag, vectors)
}
