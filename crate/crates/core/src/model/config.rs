use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoints::{APEX_INDEX, BASAL_INDICES, N_KEYPOINTS};

/// The decoder always stacks this many spiral convolutions.
pub const SPIRAL_LAYERS: usize = 4;
/// Grayscale intensity plus normalized x and y coordinate planes.
pub const ENCODER_INPUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One image in, one contour out.
    SingleFrame,
    /// Clip whose first frame is ED and last frame is ES; predicts both
    /// contours and EF.
    MultiFrameKnown,
    /// Clip with unknown ED/ES; a classifier locates them first.
    MultiFrameClassifier,
}

impl Mode {
    pub fn code(self) -> u8 {
        match self {
            Mode::SingleFrame => 0,
            Mode::MultiFrameKnown => 1,
            Mode::MultiFrameClassifier => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Mode::SingleFrame),
            1 => Some(Mode::MultiFrameKnown),
            2 => Some(Mode::MultiFrameClassifier),
            _ => None,
        }
    }

    pub fn is_multi_frame(self) -> bool {
        self != Mode::SingleFrame
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::SingleFrame => "single_frame",
            Mode::MultiFrameKnown => "multi_frame_known",
            Mode::MultiFrameClassifier => "multi_frame_classifier",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "single_frame" | "single" => Ok(Mode::SingleFrame),
            "multi_frame_known" | "multi_known" | "known" => Ok(Mode::MultiFrameKnown),
            "multi_frame_classifier" | "classifier" => Ok(Mode::MultiFrameClassifier),
            other => Err(Error::Config(format!("unknown model mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: Mode,
    pub n_keypoints: usize,
    pub spiral_len: usize,
    /// Width of the encoder feature vector shared by all heads.
    pub feature_width: usize,
    /// Per-node feature width inside the graph decoder.
    pub decoder_width: usize,
    pub clip_len: usize,
    pub image_height: usize,
    pub image_width: usize,
    /// Output channels of the four conv blocks.
    pub encoder_channels: [usize; 4],
    pub ef_hidden: [usize; 3],
    pub classifier_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: Mode::SingleFrame,
            n_keypoints: N_KEYPOINTS,
            spiral_len: 5,
            feature_width: 128,
            decoder_width: 64,
            clip_len: 16,
            image_height: 112,
            image_width: 112,
            encoder_channels: [8, 16, 32, 32],
            ef_hidden: [64, 32, 16],
            classifier_hidden: 64,
        }
    }
}

impl ModelConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_keypoints < 3 {
            return bad(format!("n_keypoints must be ≥ 3, got {}", self.n_keypoints));
        }
        if self.spiral_len == 0 || self.spiral_len > self.n_keypoints {
            return bad(format!(
                "spiral_len must be in 1..={}, got {}",
                self.n_keypoints, self.spiral_len
            ));
        }
        if self.mode.is_multi_frame() && self.clip_len < 2 {
            return bad(format!("multi-frame modes need clip_len ≥ 2, got {}", self.clip_len));
        }
        if self.image_height % 16 != 0 || self.image_width % 16 != 0 || self.image_height == 0 || self.image_width == 0 {
            return bad(format!(
                "image size {}×{} must be a positive multiple of 16",
                self.image_height, self.image_width
            ));
        }
        let widths = [self.feature_width, self.decoder_width, self.classifier_hidden];
        if widths.iter().chain(&self.encoder_channels).chain(&self.ef_hidden).any(|&w| w == 0) {
            return bad("layer widths must be positive".into());
        }
        if self.n_keypoints > u16::MAX as usize || self.clip_len > u16::MAX as usize {
            return bad("n_keypoints and clip_len must fit in 16 bits".into());
        }
        Ok(())
    }

    /// Frames consumed per forward pass.
    pub fn frames_in(&self) -> usize {
        if self.mode.is_multi_frame() {
            self.clip_len
        } else {
            1
        }
    }

    /// Contours produced per forward pass (ED and ES for clips).
    pub fn frames_out(&self) -> usize {
        if self.mode.is_multi_frame() {
            2
        } else {
            1
        }
    }

    pub fn image_len(&self) -> usize {
        self.image_height * self.image_width
    }

    /// Spiral length seen by the decoder layers (one extra temporal tap in
    /// two-frame graphs).
    pub fn effective_spiral_len(&self) -> usize {
        self.spiral_len + usize::from(self.mode.is_multi_frame())
    }

    pub fn decoder_input_width(&self) -> usize {
        match self.mode {
            Mode::MultiFrameClassifier => self.feature_width + 2 * self.clip_len,
            _ => self.feature_width,
        }
    }

    pub fn landmark_indices(&self) -> (usize, [usize; 2]) {
        if self.n_keypoints == N_KEYPOINTS {
            (APEX_INDEX, BASAL_INDICES)
        } else {
            (self.n_keypoints / 2, [0, self.n_keypoints - 1])
        }
    }

    /// Closed-form trainable parameter count for this architecture.
    pub fn analytic_parameter_count(&self) -> usize {
        let dense = |i: usize, o: usize| i * o + o;
        let mut total = 0;

        let mut c_in = ENCODER_INPUT_CHANNELS;
        for &c in &self.encoder_channels {
            total += 9 * c_in * c + c;
            c_in = c;
        }
        total += dense(self.frames_in() * c_in, self.feature_width);

        let nodes = self.frames_out() * self.n_keypoints;
        let d = self.decoder_width;
        total += dense(self.decoder_input_width(), nodes * d);
        total += SPIRAL_LAYERS * (dense(self.effective_spiral_len() * d, d) + dense(d, d));
        total += dense(d, 2);

        if self.mode.is_multi_frame() {
            let [h1, h2, h3] = self.ef_hidden;
            total += dense(self.feature_width, h1) + dense(h1, h2) + dense(h2, h3) + dense(h3, 1);
        }
        if self.mode == Mode::MultiFrameClassifier {
            let h = self.classifier_hidden;
            total += dense(self.feature_width, h) + 2 * dense(h, h) + 3 * (2 * h);
            total += dense(h, 2 * self.clip_len);
        }
        total
    }
}
