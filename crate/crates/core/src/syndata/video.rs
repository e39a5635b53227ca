//! EGVD raw video files.
//!
//! ```text
//! magic   4 bytes "EGVD"
//! version u16 LE  1
//! height  u16 LE
//! width   u16 LE
//! frames  u32 LE
//! pixels  frames × height × width bytes, row-major, 8-bit grayscale
//! ```

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::io::{read_bytes, write_atomic};

pub const VIDEO_MAGIC: &[u8; 4] = b"EGVD";
pub const VIDEO_VERSION: u16 = 1;
const HEADER_LEN: usize = 14;

/// 8-bit grayscale frames; pixel `p` stands for intensity `p / 255`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Video {
    height: usize,
    width: usize,
    frames: Vec<Arc<[u8]>>,
}

impl Video {
    pub fn new(height: usize, width: usize, frames: Vec<Arc<[u8]>>) -> Result<Self> {
        if height == 0 || width == 0 || height > u16::MAX as usize || width > u16::MAX as usize {
            return Err(Error::Video(format!("unsupported frame size {height}×{width}")));
        }
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.len() != height * width) {
            return Err(Error::Video(format!("frame {i} has {} pixels, expected {}", f.len(), height * width)));
        }
        Ok(Self { height, width, frames })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> &Arc<[u8]> {
        &self.frames[i]
    }

    pub fn frames(&self) -> &[Arc<[u8]>] {
        &self.frames
    }

    /// Frame `i` as intensities in [0, 1].
    pub fn frame_f32(&self, i: usize) -> Vec<f32> {
        crate::model::train::to_unit(&self.frames[i])
    }
}

pub fn encode_video(video: &Video) -> Result<Vec<u8>> {
    let count = u32::try_from(video.len()).map_err(|_| Error::Video("too many frames".into()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + video.len() * video.height * video.width);
    out.extend_from_slice(VIDEO_MAGIC);
    out.extend_from_slice(&VIDEO_VERSION.to_le_bytes());
    out.extend_from_slice(&(video.height as u16).to_le_bytes());
    out.extend_from_slice(&(video.width as u16).to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for f in &video.frames {
        out.extend_from_slice(f);
    }
    Ok(out)
}

pub fn decode_video(bytes: &[u8]) -> Result<Video> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Video(format!("file of {} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != VIDEO_MAGIC {
        return Err(Error::Video("bad magic, not an EGVD video".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let version = u16_at(4);
    if version != VIDEO_VERSION {
        return Err(Error::Video(format!("unsupported version {version}")));
    }
    let (h, w) = (u16_at(6) as usize, u16_at(8) as usize);
    let count = u32::from_le_bytes(bytes[10..14].try_into().expect("4 bytes")) as usize;
    let frame_len = h * w;
    let expected = count
        .checked_mul(frame_len)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Video("frame count overflows".into()))?;
    if bytes.len() != expected {
        return Err(Error::Video(format!(
            "expected {expected} bytes for {count} frames of {h}×{w}, found {}",
            bytes.len()
        )));
    }
    let frames = bytes[HEADER_LEN..]
        .chunks_exact(frame_len.max(1))
        .take(count)
        .map(Arc::from)
        .collect();
    Video::new(h, w, frames)
}

pub fn write_video(video: &Video, path: &Path) -> Result<()> {
    write_atomic(path, &encode_video(video)?)
}

pub fn read_video(path: &Path) -> Result<Video> {
    decode_video(&read_bytes(path)?)
}
