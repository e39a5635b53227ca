//! Labeled videos on disk and their conversion into training samples.
//!
//! A dataset directory holds `annotations.csv` and one `videos/<case_id>.egvd`
//! per case.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::keypoints::KeypointSet;
use crate::model::{Mode, ModelConfig, Sample};
use crate::syndata::{read_annotations, read_video, AnnotationRecord, Phase, Split, SyntheticCase, Video};
use crate::temporal::{resample_indices, window_starts};

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const VIDEO_DIR: &str = "videos";

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledVideo {
    pub id: String,
    pub video: Video,
    /// Annotated frames only.
    pub keypoints: BTreeMap<usize, KeypointSet>,
    /// (ED, ES) frame pairs.
    pub cycles: Vec<(usize, usize)>,
    pub ef: f64,
    pub split: Split,
}

impl LabeledVideo {
    pub fn from_case(case: &SyntheticCase, id: &str, split: Split) -> Self {
        Self {
            id: id.to_string(),
            video: case.video.clone(),
            keypoints: case.keypoints.iter().cloned().enumerate().collect(),
            cycles: case.cycles.clone(),
            ef: case.true_ef,
            split,
        }
    }

    fn keypoints_at(&self, frame: usize) -> Result<&KeypointSet> {
        self.keypoints
            .get(&frame)
            .ok_or_else(|| Error::Label(format!("case {} has no keypoints for frame {frame}", self.id)))
    }

    fn check_size(&self, cfg: &ModelConfig) -> Result<()> {
        if self.video.height() != cfg.image_height || self.video.width() != cfg.image_width {
            return Err(Error::dim(format!(
                "case {}: {}×{} frames, model expects {}×{}",
                self.id,
                self.video.height(),
                self.video.width(),
                cfg.image_height,
                cfg.image_width
            )));
        }
        Ok(())
    }

    /// One sample per annotated frame.
    pub fn single_frame_samples(&self, cfg: &ModelConfig) -> Result<Vec<Sample>> {
        self.check_size(cfg)?;
        Ok(self
            .keypoints
            .iter()
            .map(|(&t, kp)| Sample {
                frames: vec![self.video.frame(t).clone()],
                keypoints: kp.to_flat(),
                ef: None,
                edes: None,
            })
            .collect())
    }

    /// Each ED→ES span resampled to the clip length.
    pub fn known_clip_samples(&self, cfg: &ModelConfig) -> Result<Vec<Sample>> {
        self.check_size(cfg)?;
        self.cycles
            .iter()
            .map(|&(ed, es)| {
                let idx = resample_indices(ed, es, cfg.clip_len);
                let mut keypoints = self.keypoints_at(ed)?.to_flat();
                keypoints.extend(self.keypoints_at(es)?.to_flat());
                Ok(Sample {
                    frames: idx.iter().map(|&i| self.video.frame(i).clone()).collect(),
                    keypoints,
                    ef: Some(self.ef),
                    edes: Some((0, cfg.clip_len - 1)),
                })
            })
            .collect()
    }

    /// Sliding windows that contain an annotated ED and ES frame; targets
    /// are those two frames at their positions inside the window.
    pub fn window_samples(&self, cfg: &ModelConfig, stride: usize) -> Result<Vec<Sample>> {
        self.check_size(cfg)?;
        let f = cfg.clip_len;
        let eds: Vec<usize> = self.cycles.iter().map(|c| c.0).collect();
        let ess: Vec<usize> = self.cycles.iter().map(|c| c.1).collect();
        let mut out = Vec::new();
        for start in window_starts(self.video.len(), f, stride) {
            let inside = |t: &&usize| (start..start + f).contains(*t);
            let (Some(&ed), Some(&es)) = (eds.iter().find(inside), ess.iter().find(inside)) else {
                continue;
            };
            let mut keypoints = self.keypoints_at(ed)?.to_flat();
            keypoints.extend(self.keypoints_at(es)?.to_flat());
            out.push(Sample {
                frames: (start..start + f).map(|i| self.video.frame(i).clone()).collect(),
                keypoints,
                ef: Some(self.ef),
                edes: Some((ed - start, es - start)),
            });
        }
        Ok(out)
    }

    /// Samples in the layout `cfg.mode` trains on.
    pub fn samples(&self, cfg: &ModelConfig, stride: usize) -> Result<Vec<Sample>> {
        match cfg.mode {
            Mode::SingleFrame => self.single_frame_samples(cfg),
            Mode::MultiFrameKnown => self.known_clip_samples(cfg),
            Mode::MultiFrameClassifier => self.window_samples(cfg, stride),
        }
    }
}

pub fn video_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(VIDEO_DIR).join(format!("{id}.egvd"))
}

/// Groups annotation records by case, pairing each ED frame with the next
/// ES frame, and loads every referenced video.
pub fn load_dataset(dir: &Path) -> Result<Vec<LabeledVideo>> {
    let records = read_annotations(&dir.join(ANNOTATIONS_FILE))?;
    let mut by_case: BTreeMap<String, Vec<AnnotationRecord>> = BTreeMap::new();
    for r in records {
        by_case.entry(r.case_id.clone()).or_default().push(r);
    }
    by_case
        .into_par_iter()
        .map(|(id, mut recs)| {
            recs.sort_by_key(|r| r.frame_idx);
            let video = read_video(&video_path(dir, &id))?;
            let mut keypoints = BTreeMap::new();
            let mut cycles = Vec::new();
            let mut open_ed = None;
            for r in &recs {
                if r.frame_idx >= video.len() {
                    return Err(Error::Label(format!(
                        "case {id}: frame {} beyond video of {} frames",
                        r.frame_idx,
                        video.len()
                    )));
                }
                keypoints.insert(r.frame_idx, r.keypoints()?);
                match r.phase {
                    Phase::Ed => open_ed = Some(r.frame_idx),
                    Phase::Es => {
                        if let Some(ed) = open_ed.take() {
                            cycles.push((ed, r.frame_idx));
                        }
                    }
                    Phase::Other => {}
                }
            }
            Ok(LabeledVideo {
                ef: recs[0].ef,
                split: recs[0].split,
                id,
                video,
                keypoints,
                cycles,
            })
        })
        .collect()
}

pub fn samples_for(videos: &[LabeledVideo], split: Split, cfg: &ModelConfig, stride: usize) -> Result<Vec<Sample>> {
    let nested = videos
        .iter()
        .filter(|v| v.split == split)
        .map(|v| v.samples(cfg, stride))
        .collect::<Result<Vec<_>>>()?;
    Ok(nested.into_iter().flatten().collect())
}
