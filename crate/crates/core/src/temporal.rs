//! Whole-video EF: volume curves, ED/ES peak detection, classifier
//! decoding, sliding-window and two-stage inference.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::method_of_disks_volume;
use crate::keypoints::KeypointSet;
use crate::model::{Mode, Model};
use crate::syndata::Video;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeCurve {
    volumes: Vec<f64>,
}

impl VolumeCurve {
    pub fn new(volumes: Vec<f64>) -> Result<Self> {
        if let Some(v) = volumes.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::DegenerateVolume(format!("volume {v} is not a finite nonnegative value")));
        }
        Ok(Self { volumes })
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}

/// Method-of-disks volume of every frame's contour.
pub fn volume_curve(frames: &[KeypointSet], n_disks: usize) -> Result<VolumeCurve> {
    let volumes = frames
        .iter()
        .enumerate()
        .map(|(frame, kp)| {
            method_of_disks_volume(kp, n_disks)
                .map(|v| v.volume)
                .map_err(|e| Error::FrameContour {
                    frame,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    VolumeCurve::new(volumes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CyclePair {
    pub ed_index: usize,
    pub es_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakConfig {
    /// Moving-average window (frames); 1 disables smoothing.
    pub smoothing: usize,
    /// Pairs with `es − ed` below this are dropped.
    pub min_separation: usize,
    /// Prominence threshold as a fraction of the smoothed curve's range.
    /// 0 keeps every strict extremum.
    #[serde(default = "default_prominence")]
    pub min_prominence: f64,
}

fn default_prominence() -> f64 {
    0.25
}

impl Default for PeakConfig {
    fn default() -> Self {
        Self {
            smoothing: 3,
            min_separation: 5,
            min_prominence: default_prominence(),
        }
    }
}

/// Centered moving average; the window shrinks at the ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window.max(1) / 2;
    let n = values.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half).min(n - 1);
            values[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Extremum {
    index: usize,
    is_max: bool,
}

/// Strict extrema of plateau-compressed runs, leftmost index of each run.
/// An end run counts when it is beyond its only neighbor.
fn extrema(s: &[f64]) -> Vec<Extremum> {
    let n = s.len();
    let mut out = Vec::new();
    let mut a = 0;
    while a < n {
        let mut b = a;
        while b + 1 < n && s[b + 1] == s[a] {
            b += 1;
        }
        if a > 0 || b + 1 < n {
            let left = (a > 0).then(|| s[a - 1]);
            let right = (b + 1 < n).then(|| s[b + 1]);
            let above = left.is_none_or(|l| l < s[a]) && right.is_none_or(|r| r < s[a]);
            let below = left.is_none_or(|l| l > s[a]) && right.is_none_or(|r| r > s[a]);
            if above || below {
                out.push(Extremum { index: a, is_max: above });
            }
        }
        a = b + 1;
    }
    out
}

/// Depth of the extremum at `p` on one side: how far the curve moves away
/// from it before passing beyond it again (or reaching the end). `sign` is
/// +1 for a maximum and −1 for a minimum. The flag tells whether the scan
/// ran into the end of the curve.
fn side_depth(s: &[f64], p: usize, sign: f64, leftward: bool) -> (f64, bool) {
    let peak = sign * s[p];
    let mut lowest = peak;
    let mut i = p;
    loop {
        let next = if leftward { i.checked_sub(1) } else { (i + 1 < s.len()).then_some(i + 1) };
        let Some(j) = next else { return (peak - lowest, true) };
        let v = sign * s[j];
        if v > peak {
            return (peak - lowest, false);
        }
        lowest = lowest.min(v);
        i = j;
    }
}

/// Topographic prominence. A side cut off by the end of the curve is
/// ignored unless both are.
fn prominence(s: &[f64], e: Extremum) -> f64 {
    let sign = if e.is_max { 1.0 } else { -1.0 };
    let (l, l_end) = side_depth(s, e.index, sign, true);
    let (r, r_end) = side_depth(s, e.index, sign, false);
    match (l_end, r_end) {
        (true, true) => l.max(r),
        (true, false) => r,
        (false, true) => l,
        (false, false) => l.min(r),
    }
}

/// ED candidates are volume maxima, ES candidates minima, after smoothing.
/// Extrema less prominent than `min_prominence` times the curve's range are
/// noise and are discarded; each remaining maximum pairs with the minimum
/// that follows it. A pair also needs a filling phase next to it, a
/// prominent rise into ED or out of ES, otherwise it is a stretch of a
/// monotone trend rather than a cycle. Returns pairs sorted by ED index;
/// empty when no cycle is found.
pub fn detect_peaks(curve: &[f64], config: PeakConfig) -> Vec<CyclePair> {
    if curve.len() < 3 {
        return Vec::new();
    }
    let s = smooth(curve, config.smoothing);
    let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !(hi > lo) {
        return Vec::new();
    }
    let threshold = config.min_prominence * (hi - lo);
    let ext: Vec<Extremum> = extrema(&s).into_iter().filter(|e| prominence(&s, *e) >= threshold).collect();
    ext.windows(2)
        .filter(|w| w[0].is_max && !w[1].is_max)
        .filter(|w| {
            let before = side_depth(&s, w[0].index, 1.0, true).0;
            let after = side_depth(&s, w[1].index, -1.0, false).0;
            let filling = before.max(after);
            filling > 0.0 && filling >= threshold
        })
        .map(|w| CyclePair {
            ed_index: w[0].index,
            es_index: w[1].index,
        })
        .filter(|p| p.es_index - p.ed_index >= config.min_separation)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeStatus {
    Ok,
    /// The ED argmax is not before the ES argmax.
    SwappedOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodedEdEs {
    pub ed_index: usize,
    pub es_index: usize,
    pub status: DecodeStatus,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Argmax of each likelihood array (first index on ties).
pub fn decode_edes_likelihoods(ed: &[f64], es: &[f64]) -> Result<DecodedEdEs> {
    if ed.len() != es.len() || ed.len() < 2 {
        return Err(Error::dim(format!(
            "likelihood arrays must have equal length ≥ 2, got {} and {}",
            ed.len(),
            es.len()
        )));
    }
    let (ed_index, es_index) = (argmax(ed), argmax(es));
    Ok(DecodedEdEs {
        ed_index,
        es_index,
        status: if ed_index < es_index {
            DecodeStatus::Ok
        } else {
            DecodeStatus::SwappedOrder
        },
    })
}

/// Nearest-frame uniform sampling of `start..=end` onto `len` frames; the
/// first index is `start` and the last is `end`.
pub fn resample_indices(start: usize, end: usize, len: usize) -> Vec<usize> {
    if len == 1 {
        return vec![start];
    }
    let span = end as f64 - start as f64;
    (0..len)
        .map(|i| (start as f64 + span * i as f64 / (len - 1) as f64).round() as usize)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub start: usize,
    pub ef_regressed: f64,
    pub ef_from_keypoints: Option<f64>,
    /// Decoded ED/ES positions as video frame indices.
    pub ed_index: usize,
    pub es_index: usize,
    pub status: DecodeStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlidingWindowResult {
    pub mean_ef: f64,
    pub windows: Vec<WindowResult>,
}

/// Window start frames: `0, stride, 2·stride, …` while the window fits.
pub fn window_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if len < window || stride == 0 {
        return Vec::new();
    }
    (0..=len - window).step_by(stride).collect()
}

fn frames_f32(video: &Video, indices: &[usize]) -> Vec<Vec<f32>> {
    indices.iter().map(|&i| video.frame_f32(i)).collect()
}

fn check_video(model: &Model, video: &Video) -> Result<()> {
    let c = model.config();
    if video.height() != c.image_height || video.width() != c.image_width {
        return Err(Error::dim(format!(
            "video frames are {}×{}, model expects {}×{}",
            video.height(),
            video.width(),
            c.image_height,
            c.image_width
        )));
    }
    Ok(())
}

/// Classifier-mode inference over windows of `window` frames every `stride`
/// frames; the video EF is the mean regressed EF over windows.
pub fn sliding_window_ef(model: &Model, video: &Video, window: usize, stride: usize, n_disks: usize) -> Result<SlidingWindowResult> {
    let cfg = model.config();
    if cfg.mode != Mode::MultiFrameClassifier {
        return Err(Error::Config(format!(
            "sliding-window inference needs a multi_frame_classifier model, got {}",
            cfg.mode.name()
        )));
    }
    if window != cfg.clip_len {
        return Err(Error::Config(format!("window {window} differs from the model clip length {}", cfg.clip_len)));
    }
    if stride == 0 {
        return Err(Error::Config("stride must be positive".into()));
    }
    if video.len() < window {
        return Err(Error::InputTooShort(format!("video has {} frames, window needs {window}", video.len())));
    }
    check_video(model, video)?;
    let windows = window_starts(video.len(), window, stride)
        .into_par_iter()
        .map(|start| {
            let idx: Vec<usize> = (start..start + window).collect();
            let frames = frames_f32(video, &idx);
            let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
            let p = model.predict_clip(&refs, n_disks)?;
            let d = decode_edes_likelihoods(
                p.ed_likelihood.as_deref().unwrap_or_default(),
                p.es_likelihood.as_deref().unwrap_or_default(),
            )?;
            Ok(WindowResult {
                start,
                ef_regressed: p.ef_regressed,
                ef_from_keypoints: p.ef_from_keypoints,
                ed_index: start + d.ed_index,
                es_index: start + d.es_index,
                status: d.status,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean_ef = windows.iter().map(|w| w.ef_regressed).sum::<f64>() / windows.len() as f64;
    Ok(SlidingWindowResult { mean_ef, windows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleResult {
    pub ed_index: usize,
    pub es_index: usize,
    pub ef_regressed: f64,
    pub ef_from_keypoints: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoStageStatus {
    Ok,
    /// The volume curve had no ED→ES pair; no EF is reported.
    NoCycleFound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageResult {
    pub status: TwoStageStatus,
    pub mean_ef: Option<f64>,
    pub cycles: Vec<CycleResult>,
    pub volumes: Vec<f64>,
}

/// Single-frame keypoints on every frame, volume curve, peak pairs, then the
/// known-ED/ES clip model on each pair's span resampled to the clip length.
pub fn two_stage_ef(
    single: &Model,
    multi: &Model,
    video: &Video,
    peaks: PeakConfig,
    n_disks: usize,
) -> Result<TwoStageResult> {
    if single.config().mode != Mode::SingleFrame {
        return Err(Error::Config("first stage needs a single_frame model".into()));
    }
    if multi.config().mode != Mode::MultiFrameKnown {
        return Err(Error::Config("second stage needs a multi_frame_known model".into()));
    }
    if video.is_empty() {
        return Err(Error::InputTooShort("video has no frames".into()));
    }
    check_video(single, video)?;
    check_video(multi, video)?;
    let keypoints = (0..video.len())
        .into_par_iter()
        .map(|t| single.predict_frame(&video.frame_f32(t)))
        .collect::<Result<Vec<_>>>()?;
    let curve = volume_curve(&keypoints, n_disks)?;
    let pairs = detect_peaks(curve.volumes(), peaks);
    if pairs.is_empty() {
        return Ok(TwoStageResult {
            status: TwoStageStatus::NoCycleFound,
            mean_ef: None,
            cycles: Vec::new(),
            volumes: curve.volumes,
        });
    }
    let clip_len = multi.config().clip_len;
    let cycles = pairs
        .par_iter()
        .map(|p| {
            let frames = frames_f32(video, &resample_indices(p.ed_index, p.es_index, clip_len));
            let refs: Vec<&[f32]> = frames.iter().map(Vec::as_slice).collect();
            let pred = multi.predict_clip(&refs, n_disks)?;
            Ok(CycleResult {
                ed_index: p.ed_index,
                es_index: p.es_index,
                ef_regressed: pred.ef_regressed,
                ef_from_keypoints: pred.ef_from_keypoints,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = cycles.iter().map(|c| c.ef_regressed).sum::<f64>() / cycles.len() as f64;
    Ok(TwoStageResult {
        status: TwoStageStatus::Ok,
        mean_ef: Some(mean),
        cycles,
        volumes: curve.volumes,
    })
}
