//! On-disk layout of one reflectance field:
//!
//! ```text
//! set_000123/
//!   manifest.txt     rig <name> / anchor <ts> / leds <n> / order <i...> / sources <ts...>
//!   led_000.pfm
//!   led_001.pfm
//!   ...
//! ```
//!
//! `order` lists the LED index stored at each position of the set and must be a
//! permutation of `0..n`. `sources` is optional and records which capture frame
//! each LED image came from.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{read_image, write_atomic, write_image, Encoding, ImageError, Result};
use crate::relight::OlatSet;

pub const MANIFEST: &str = "manifest.txt";

pub fn set_dir_name(anchor_ts: u64) -> String {
    format!("set_{anchor_ts:06}")
}

pub fn led_file_name(index: usize) -> String {
    format!("led_{index:03}.pfm")
}

/// Writes `set` below `root` and returns the created set directory.
pub fn write_olat_set(root: &Path, set: &OlatSet) -> Result<PathBuf> {
    let dir = root.join(set_dir_name(set.anchor_ts()));
    fs::create_dir_all(&dir).map_err(|e| ImageError::io(&dir, e))?;
    set.images()
        .par_iter()
        .enumerate()
        .try_for_each(|(i, img)| write_image(&dir.join(led_file_name(i)), img, Encoding::Float))?;

    let n = set.len();
    let join = |it: &mut dyn Iterator<Item = String>| it.collect::<Vec<_>>().join(" ");
    let manifest = format!(
        "rig {}\nanchor {}\nleds {}\norder {}\nsources {}\n",
        set.rig_name(),
        set.anchor_ts(),
        n,
        join(&mut (0..n).map(|i| i.to_string())),
        join(&mut set.sources().iter().map(|t| t.to_string())),
    );
    write_atomic(&dir.join(MANIFEST), manifest.as_bytes())?;
    Ok(dir)
}

struct Manifest {
    rig: String,
    anchor: u64,
    order: Vec<usize>,
    sources: Option<Vec<u64>>,
}

fn parse_manifest(path: &Path, text: &str) -> Result<Manifest> {
    let bad = |msg: &str| ImageError::malformed(path, msg);
    let mut rig = None;
    let mut anchor = None;
    let mut leds = None;
    let mut order = None;
    let mut sources = None;
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        let mut tok = line.split_whitespace();
        let Some(key) = tok.next() else { continue };
        let rest: Vec<&str> = tok.collect();
        match key {
            "rig" => rig = Some(rest.join(" ")),
            "anchor" => {
                anchor = Some(
                    rest.first()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad("bad anchor"))?,
                )
            }
            "leds" => {
                leds = Some(
                    rest.first()
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| bad("bad led count"))?,
                )
            }
            "order" => {
                order = Some(
                    rest.iter()
                        .map(|t| t.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("bad order entry"))?,
                )
            }
            "sources" => {
                sources = Some(
                    rest.iter()
                        .map(|t| t.parse::<u64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| bad("bad sources entry"))?,
                )
            }
            other => return Err(bad(&format!("unknown manifest key {other:?}"))),
        }
    }
    let leds = leds.ok_or_else(|| bad("missing leds"))?;
    let order = order.unwrap_or_else(|| (0..leds).collect());
    if order.len() != leds {
        return Err(bad("order length differs from led count"));
    }
    let mut seen = vec![false; leds];
    for &i in &order {
        if i >= leds || std::mem::replace(&mut seen[i], true) {
            return Err(bad("order is not a permutation of 0..leds"));
        }
    }
    if let Some(s) = &sources {
        if s.len() != leds {
            return Err(bad("sources length differs from led count"));
        }
    }
    Ok(Manifest {
        rig: rig.ok_or_else(|| bad("missing rig"))?,
        anchor: anchor.ok_or_else(|| bad("missing anchor"))?,
        order,
        sources,
    })
}

/// Reads a set directory written by [`write_olat_set`]. Images are returned in
/// LED index order regardless of the manifest's `order` line.
pub fn read_olat_set(dir: &Path) -> Result<OlatSet> {
    let mpath = dir.join(MANIFEST);
    let text = fs::read_to_string(&mpath).map_err(|e| ImageError::io(&mpath, e))?;
    let m = parse_manifest(&mpath, &text)?;
    let loaded = m
        .order
        .par_iter()
        .map(|&led| read_image(&dir.join(led_file_name(led))).map(|(img, _)| (led, img)))
        .collect::<Result<Vec<_>>>()?;
    let mut images = vec![None; loaded.len()];
    for (led, img) in loaded {
        images[led] = Some(img);
    }
    let images: Vec<_> = images
        .into_iter()
        .map(|i| i.expect("permutation"))
        .collect();
    let mut set = OlatSet::new(images, m.rig, m.anchor)
        .map_err(|e| ImageError::malformed(dir, e.to_string()))?;
    if let Some(src) = m.sources {
        set = set
            .with_sources(src)
            .map_err(|e| ImageError::malformed(dir, e.to_string()))?;
    }
    Ok(set)
}
