//! Motion-compensated assembly of OLAT sets from an interleaved capture stream.
//!
//! The stream repeats a cycle of `cycle − 1` single-LED frames followed by one
//! fully lit tracking frame. Flow is measured only between tracking frames,
//! chained back to the set's anchor, and interpolated linearly in time for the
//! OLAT frames in between. Frame timestamps are frame indices.

pub mod flow;

use std::borrow::Cow;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use thiserror::Error;

pub use flow::{compute_flow, warp, FlowField, FlowParams};

use crate::imageio::RadianceImage;
use crate::relight::{OlatSet, RelightError};
use crate::rig::LightRig;

#[derive(Debug, Error, PartialEq)]
pub enum AlignError {
    #[error("invalid capture schedule: {0}")]
    BadSchedule(String),
    #[error("invalid flow parameters: {0}")]
    BadParams(String),
    #[error("size mismatch: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("flow estimate diverged")]
    NonFiniteFlow,
    #[error("frame {0} is not a tracking frame")]
    NotTracking(u64),
    #[error("frame {ts} is outside the tracked range {first}..={last}")]
    OutOfRange { ts: u64, first: u64, last: u64 },
    #[error("stream of {0} frames has fewer than two tracking frames")]
    TooShort(usize),
    #[error("set at frame {anchor} has no frame for LEDs {missing:?}")]
    MissingLeds { anchor: u64, missing: Vec<usize> },
    #[error("rig has {rig} LEDs but the schedule cycles through {schedule}")]
    LedCountMismatch { rig: usize, schedule: usize },
    #[error("frame {ts}: {msg}")]
    Frame { ts: u64, msg: String },
    #[error(transparent)]
    Relight(#[from] RelightError),
}

pub type Result<T, E = AlignError> = std::result::Result<T, E>;

/// What a stream frame shows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrameLabel {
    Tracking,
    Olat(usize),
}

/// Frame interleaving and output cadence of a capture.
#[derive(Clone, Debug, PartialEq)]
pub struct CaptureSchedule {
    /// Frames per cycle; the last frame of every cycle is a tracking frame.
    pub cycle: usize,
    /// LED index of each successive OLAT frame, repeating.
    pub led_order: Vec<usize>,
    pub capture_fps: f64,
    /// Capture frames per output set.
    pub output_stride: usize,
    /// Assembly window length in cycles.
    pub window_groups: usize,
}

impl CaptureSchedule {
    /// 1000 fps, one tracking frame per 6, LEDs in index order, 25 sets per second,
    /// and a window just long enough to contain every LED.
    pub fn new(n_leds: usize) -> Self {
        let cycle = 6;
        Self {
            cycle,
            led_order: (0..n_leds).collect(),
            capture_fps: 1000.0,
            output_stride: 40,
            window_groups: n_leds.div_ceil(cycle - 1).max(1),
        }
    }

    pub fn n_leds(&self) -> usize {
        self.led_order.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AlignError::BadSchedule(m.to_string()));
        if self.cycle < 2 {
            return bad("cycle must be at least 2");
        }
        if self.led_order.is_empty() {
            return bad("led order is empty");
        }
        let mut seen = vec![false; self.led_order.len()];
        for &i in &self.led_order {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return bad("led order is not a permutation");
            }
        }
        if self.output_stride == 0 || self.window_groups == 0 {
            return bad("stride and window must be positive");
        }
        if !(self.capture_fps > 0.0 && self.capture_fps.is_finite()) {
            return bad("capture rate must be positive");
        }
        Ok(())
    }

    pub fn is_tracking(&self, ts: u64) -> bool {
        (ts + 1).is_multiple_of(self.cycle as u64)
    }

    pub fn label(&self, ts: u64) -> FrameLabel {
        let c = self.cycle as u64;
        if self.is_tracking(ts) {
            return FrameLabel::Tracking;
        }
        // OLAT frames preceding ts: (c−1) per completed cycle plus the offset in this one
        let k = ts / c * (c - 1) + ts % c;
        FrameLabel::Olat(self.led_order[(k % self.led_order.len() as u64) as usize])
    }

    pub fn labels(&self, n_frames: usize) -> Vec<FrameLabel> {
        (0..n_frames as u64).map(|t| self.label(t)).collect()
    }

    pub fn first_tracking(&self) -> u64 {
        self.cycle as u64 - 1
    }

    /// Last tracking frame of an `n_frames` stream, if any.
    pub fn last_tracking(&self, n_frames: usize) -> Option<u64> {
        let c = self.cycle as u64;
        let n = n_frames as u64;
        (n >= c).then(|| n / c * c - 1)
    }

    /// Latest tracking frame at or before `ts`.
    pub fn tracking_at_or_before(&self, ts: u64) -> Option<u64> {
        let c = self.cycle as u64;
        ((ts + 1) / c).checked_sub(1).map(|k| k * c + c - 1)
    }

    /// Set anchors: one per `output_stride` frames, each at the tracking frame
    /// nearest the middle of its stride (earlier on ties).
    pub fn anchor_timestamps(&self, n_frames: usize) -> Vec<u64> {
        let Some(last) = self.last_tracking(n_frames) else {
            return Vec::new();
        };
        let first = self.first_tracking();
        let c = self.cycle as u64;
        let stride = self.output_stride as u64;
        let mut out: Vec<u64> = Vec::new();
        for k in 0..n_frames as u64 / stride {
            let target = k * stride + stride / 2;
            let snapped = match self.tracking_at_or_before(target) {
                Some(before) if target - before <= before + c - target => before,
                Some(before) => before + c,
                None => first,
            };
            let a = snapped.clamp(first, last);
            if out.last() != Some(&a) {
                out.push(a);
            }
        }
        out
    }

    /// Inclusive frame range searched for the set anchored at `anchor`:
    /// `window_groups` cycles centred on the anchor, shifted to stay between the
    /// first and last tracking frames so every OLAT frame in it is bracketed.
    pub fn window(&self, anchor: u64, n_frames: usize) -> Result<(u64, u64)> {
        let first = self.first_tracking();
        let last = self
            .last_tracking(n_frames)
            .filter(|&l| l > first)
            .ok_or(AlignError::TooShort(n_frames))?;
        let len = (self.window_groups * self.cycle) as u64;
        let mut lo = anchor.saturating_sub(len / 2).max(first);
        let mut hi = lo + len;
        if hi > last {
            hi = last;
            lo = last.saturating_sub(len).max(first);
        }
        Ok((lo, hi))
    }
}

/// Random access to stream frames by timestamp.
pub trait FrameSource: Sync {
    fn frame_count(&self) -> usize;
    fn load(&self, ts: u64) -> Result<Cow<'_, RadianceImage>>;
}

impl FrameSource for [RadianceImage] {
    fn frame_count(&self) -> usize {
        self.len()
    }

    fn load(&self, ts: u64) -> Result<Cow<'_, RadianceImage>> {
        self.get(ts as usize)
            .map(Cow::Borrowed)
            .ok_or_else(|| AlignError::Frame {
                ts,
                msg: "beyond end of stream".into(),
            })
    }
}

/// Flows from an anchor to the tracking frames around it.
pub struct AnchorFlows {
    anchor: u64,
    cycle: u64,
    first: u64,
    last: u64,
    /// Indexed by `(t − first) / cycle`.
    flows: Vec<FlowField>,
}

impl AnchorFlows {
    pub fn anchor(&self) -> u64 {
        self.anchor
    }

    /// Flow `F` with `anchor(p) ≈ frame_ts(p + F(p))`.
    pub fn at(&self, ts: u64) -> Result<FlowField> {
        if ts < self.first || ts > self.last {
            return Err(AlignError::OutOfRange {
                ts,
                first: self.first,
                last: self.last,
            });
        }
        let k = ((ts - self.first) / self.cycle) as usize;
        let ta = self.first + k as u64 * self.cycle;
        if ts == ta {
            return Ok(self.flows[k].clone());
        }
        let alpha = (ts - ta) as f32 / self.cycle as f32;
        Ok(FlowField::lerp(&self.flows[k], &self.flows[k + 1], alpha))
    }
}

/// Caches flows between consecutive tracking frames of one stream.
pub struct Aligner<'a, S: FrameSource + ?Sized> {
    frames: &'a S,
    schedule: &'a CaptureSchedule,
    params: FlowParams,
    hops: Mutex<HashMap<(u64, u64), Arc<FlowField>>>,
}

impl<'a, S: FrameSource + ?Sized> Aligner<'a, S> {
    pub fn new(frames: &'a S, schedule: &'a CaptureSchedule, params: FlowParams) -> Result<Self> {
        schedule.validate()?;
        params.validate()?;
        Ok(Self {
            frames,
            schedule,
            params,
            hops: Mutex::new(HashMap::new()),
        })
    }

    fn cached(&self, key: (u64, u64)) -> Option<Arc<FlowField>> {
        self.hops.lock().expect("hop cache").get(&key).cloned()
    }

    /// Flow `f` with `frame dst (p) ≈ frame src (p + f(p))`, cached.
    fn hop(&self, dst: u64, src: u64) -> Result<Arc<FlowField>> {
        if let Some(f) = self.cached((dst, src)) {
            return Ok(f);
        }
        let d = self.frames.load(dst)?;
        let s = self.frames.load(src)?;
        let f = Arc::new(compute_flow(&s, &d, &self.params)?);
        self.hops
            .lock()
            .expect("hop cache")
            .insert((dst, src), Arc::clone(&f));
        Ok(f)
    }

    /// Drops cached hops whose frames all precede `ts`.
    pub fn evict_before(&self, ts: u64) {
        self.hops
            .lock()
            .expect("hop cache")
            .retain(|&(a, b), _| a.max(b) >= ts);
    }

    /// Flows from `anchor` to every tracking frame in `first..=last`, by
    /// composing hops outward from the anchor.
    pub fn anchor_flows(&self, anchor: u64, first: u64, last: u64) -> Result<AnchorFlows> {
        let s = self.schedule;
        let c = s.cycle as u64;
        if !s.is_tracking(anchor) {
            return Err(AlignError::NotTracking(anchor));
        }
        let n = self.frames.frame_count();
        let stream_last = s.last_tracking(n).ok_or(AlignError::TooShort(n))?;
        let out_of_range = |ts| AlignError::OutOfRange {
            ts,
            first: s.first_tracking(),
            last: stream_last,
        };
        // tracking frames bracketing first..=last
        let lo_t = s
            .tracking_at_or_before(first)
            .ok_or_else(|| out_of_range(first))?
            .min(anchor);
        let hi_t = ((last + 1).div_ceil(c) * c - 1).max(anchor);
        if hi_t > stream_last {
            return Err(out_of_range(last));
        }
        let pairs: Vec<(u64, u64)> = (0..(anchor - lo_t) / c)
            .map(|k| anchor - k * c)
            .map(|t| (t, t - c))
            .chain(
                (0..(hi_t - anchor) / c)
                    .map(|k| anchor + k * c)
                    .map(|t| (t, t + c)),
            )
            .collect();
        pairs
            .par_iter()
            .try_for_each(|&(d, src)| self.hop(d, src).map(drop))?;

        let count = ((hi_t - lo_t) / c + 1) as usize;
        let ia = ((anchor - lo_t) / c) as usize;
        let dims = self.frames.load(anchor)?.dims();
        let mut flows = vec![FlowField::zeros(dims.0, dims.1); count];
        for i in (0..ia).rev() {
            let t = lo_t + i as u64 * c;
            let h = self.hop(t + c, t)?;
            flows[i] = flows[i + 1].compose(&h);
        }
        for i in ia + 1..count {
            let t = lo_t + i as u64 * c;
            let h = self.hop(t - c, t)?;
            flows[i] = flows[i - 1].compose(&h);
        }
        Ok(AnchorFlows {
            anchor,
            cycle: c,
            first: lo_t,
            last: hi_t,
            flows,
        })
    }

    /// Flow `F` with `anchor(p) ≈ frame_ts(p + F(p))`.
    pub fn flow_to_anchor(&self, frame_ts: u64, anchor_ts: u64) -> Result<FlowField> {
        self.anchor_flows(anchor_ts, frame_ts.min(anchor_ts), frame_ts.max(anchor_ts))?
            .at(frame_ts)
    }
}

/// Whether OLAT frames are motion compensated when assembling sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AlignMode {
    #[default]
    Flow,
    /// Use raw frames as captured.
    Raw,
}

/// Frames chosen for one set: for every LED, the occurrence closest to the
/// anchor inside the window (earlier on ties).
pub fn select_sources(
    schedule: &CaptureSchedule,
    anchor: u64,
    n_frames: usize,
) -> Result<Vec<u64>> {
    let (lo, hi) = schedule.window(anchor, n_frames)?;
    let mut best: Vec<Option<u64>> = vec![None; schedule.n_leds()];
    for ts in lo..=hi {
        if let FrameLabel::Olat(led) = schedule.label(ts) {
            let closer = best[led].is_none_or(|b| ts.abs_diff(anchor) < b.abs_diff(anchor));
            if closer {
                best[led] = Some(ts);
            }
        }
    }
    let missing: Vec<usize> = (0..best.len()).filter(|&i| best[i].is_none()).collect();
    if !missing.is_empty() {
        return Err(AlignError::MissingLeds { anchor, missing });
    }
    Ok(best.into_iter().map(|b| b.expect("checked")).collect())
}

/// Assembles one OLAT set per anchor of the stream.
pub fn assemble_sets<S: FrameSource + ?Sized>(
    frames: &S,
    schedule: &CaptureSchedule,
    rig: &LightRig,
    params: FlowParams,
    mode: AlignMode,
) -> Result<Vec<OlatSet>> {
    let aligner = Aligner::new(frames, schedule, params)?;
    if rig.len() != schedule.n_leds() {
        return Err(AlignError::LedCountMismatch {
            rig: rig.len(),
            schedule: schedule.n_leds(),
        });
    }
    let n = frames.frame_count();
    let anchors = schedule.anchor_timestamps(n);
    if anchors.is_empty() {
        return Err(AlignError::TooShort(n));
    }
    let dims = frames.load(0)?.dims();
    let mut sets = Vec::with_capacity(anchors.len());
    for &anchor in &anchors {
        let sources = select_sources(schedule, anchor, n)?;
        let (lo, hi) = schedule.window(anchor, n)?;
        let flows = match mode {
            AlignMode::Flow => Some(aligner.anchor_flows(anchor, lo, hi)?),
            AlignMode::Raw => None,
        };
        let images = sources
            .par_iter()
            .map(|&ts| {
                let img = frames.load(ts)?;
                if img.dims() != dims {
                    return Err(AlignError::DimensionMismatch(dims, img.dims()));
                }
                match &flows {
                    Some(f) => warp(&img, &f.at(ts)?),
                    None => Ok(img.into_owned()),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        log::debug!("assembled set at frame {anchor} from frames {lo}..={hi}");
        sets.push(OlatSet::new(images, rig.name().to_string(), anchor)?.with_sources(sources)?);
        aligner.evict_before(lo);
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(x: f32, y: f32) -> f32 {
        0.5 + 0.15 * (0.21 * x + 0.05 * y).sin()
            + 0.12 * (0.07 * x - 0.17 * y + 1.0).sin()
            + 0.1 * (0.31 * x + 0.27 * y + 2.0).cos()
    }

    /// Every frame shows the texture moved by `v·ts`; OLAT frames are dimmed by LED.
    fn moving_stream(
        s: &CaptureSchedule,
        n: usize,
        v: [f32; 2],
        size: usize,
    ) -> Vec<RadianceImage> {
        (0..n as u64)
            .map(|ts| {
                let gain = match s.label(ts) {
                    FrameLabel::Tracking => 1.0,
                    FrameLabel::Olat(i) => 0.2 + 0.01 * i as f32,
                };
                let (dx, dy) = (v[0] * ts as f32, v[1] * ts as f32);
                RadianceImage::from_fn(size, size, |x, y| {
                    [gain * texture(x as f32 - dx, y as f32 - dy); 3]
                })
            })
            .collect()
    }

    fn small_schedule(n_leds: usize) -> CaptureSchedule {
        CaptureSchedule {
            output_stride: 12,
            ..CaptureSchedule::new(n_leds)
        }
    }

    #[test]
    fn labels_follow_the_cycle() {
        let s = CaptureSchedule {
            led_order: vec![2, 0, 1, 3, 4, 6, 5],
            ..CaptureSchedule::new(7)
        };
        let l = s.labels(14);
        use FrameLabel::*;
        assert_eq!(
            l,
            vec![
                Olat(2),
                Olat(0),
                Olat(1),
                Olat(3),
                Olat(4),
                Tracking,
                Olat(6),
                Olat(5),
                Olat(2),
                Olat(0),
                Olat(1),
                Tracking,
                Olat(3),
                Olat(4)
            ]
        );
        assert_eq!(s.first_tracking(), 5);
        assert_eq!(s.last_tracking(14), Some(11));
        assert_eq!(s.last_tracking(5), None);
        assert_eq!(s.tracking_at_or_before(10), Some(5));
        assert_eq!(s.tracking_at_or_before(11), Some(11));
        assert_eq!(s.tracking_at_or_before(4), None);
    }

    #[test]
    fn schedule_validation() {
        assert!(CaptureSchedule::new(96).validate().is_ok());
        let mut s = CaptureSchedule::new(4);
        s.led_order = vec![0, 1, 1, 3];
        assert!(s.validate().is_err());
        s.led_order = vec![0, 1, 2, 3];
        s.cycle = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn one_second_yields_twenty_five_sets() {
        let s = CaptureSchedule::new(96);
        let a = s.anchor_timestamps(1000);
        assert_eq!(a.len(), 25);
        assert!(a.iter().all(|&t| s.is_tracking(t)));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(a[0], 17);
        for &t in &a {
            let src = select_sources(&s, t, 1000).unwrap();
            let (lo, hi) = s.window(t, 1000).unwrap();
            assert!(lo >= s.first_tracking() && hi <= s.last_tracking(1000).unwrap());
            assert!(src.iter().all(|&f| f >= lo && f <= hi));
            for (led, &f) in src.iter().enumerate() {
                assert_eq!(s.label(f), FrameLabel::Olat(led));
            }
        }
    }

    #[test]
    fn overlapping_windows_share_source_frames() {
        let s = CaptureSchedule::new(96);
        let a = s.anchor_timestamps(1000);
        let s0 = select_sources(&s, a[5], 1000).unwrap();
        let s1 = select_sources(&s, a[6], 1000).unwrap();
        let shared = s0.iter().zip(&s1).filter(|(x, y)| x == y).count();
        assert!(shared > 0 && shared < 96, "{shared}");
    }

    #[test]
    fn undersized_window_reports_missing_leds() {
        let s = CaptureSchedule {
            window_groups: 2,
            ..CaptureSchedule::new(20)
        };
        match select_sources(&s, 59, 200) {
            Err(AlignError::MissingLeds {
                anchor: 59,
                missing,
            }) => assert_eq!(missing.len(), 10),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn static_stream_reproduces_raw_frames() {
        let s = small_schedule(8);
        let frames = moving_stream(&s, 60, [0.0, 0.0], 32);
        let rig = LightRig::fibonacci("t", 8, 1.0).unwrap();
        let sets = assemble_sets(
            &frames[..],
            &s,
            &rig,
            FlowParams::default(),
            AlignMode::Flow,
        )
        .unwrap();
        assert!(!sets.is_empty());
        for set in &sets {
            for (img, &src) in set.images().iter().zip(set.sources()) {
                assert_eq!(img, &frames[src as usize]);
            }
        }
    }

    #[test]
    fn single_hop_matches_direct_flow() {
        let s = small_schedule(8);
        let frames = moving_stream(&s, 40, [0.7, -0.3], 48);
        let al = Aligner::new(&frames[..], &s, FlowParams::default()).unwrap();
        let chained = al.flow_to_anchor(17, 11).unwrap();
        let direct = compute_flow(&frames[17], &frames[11], &FlowParams::default()).unwrap();
        assert_eq!(chained, direct);
        assert!(al
            .flow_to_anchor(11, 11)
            .unwrap()
            .data()
            .iter()
            .all(|v| *v == [0.0; 2]));
    }

    #[test]
    fn constant_velocity_is_recovered() {
        let s = small_schedule(8);
        let v = [0.5f32, 0.25];
        let frames = moving_stream(&s, 60, v, 96);
        let al = Aligner::new(&frames[..], &s, FlowParams::default()).unwrap();
        let anchor = 29;
        for ts in [5u64, 14, 23, 26, 33, 41, 50, 53] {
            let f = al.flow_to_anchor(ts, anchor).unwrap();
            let dt = ts as f32 - anchor as f32;
            let truth = FlowField::from_fn(96, 96, |_, _| [v[0] * dt, v[1] * dt]);
            let epe = f.endpoint_error(&truth, 24);
            assert!(epe < 0.5, "frame {ts}: epe {epe}");
        }
    }

    #[test]
    fn frames_outside_tracked_range_are_rejected() {
        let s = small_schedule(8);
        let frames = moving_stream(&s, 40, [0.0, 0.0], 24);
        let al = Aligner::new(&frames[..], &s, FlowParams::default()).unwrap();
        assert!(matches!(
            al.flow_to_anchor(2, 11),
            Err(AlignError::OutOfRange { ts: 2, .. })
        ));
        assert!(matches!(
            al.flow_to_anchor(37, 11),
            Err(AlignError::OutOfRange { .. })
        ));
        assert_eq!(al.flow_to_anchor(14, 12), Err(AlignError::NotTracking(12)));
    }

    #[test]
    fn rig_must_match_schedule() {
        let s = small_schedule(8);
        let frames = moving_stream(&s, 60, [0.0, 0.0], 16);
        let rig = LightRig::fibonacci("t", 9, 1.0).unwrap();
        assert!(matches!(
            assemble_sets(&frames[..], &s, &rig, FlowParams::default(), AlignMode::Raw),
            Err(AlignError::LedCountMismatch {
                rig: 9,
                schedule: 8
            })
        ));
    }
}
