//! Binary checkpoint format ("EGRF").
//!
//! All integers and values are little-endian.
//!
//! ```text
//! magic            4 bytes  "EGRF"
//! version          u16      1
//! mode             u8       0 single_frame, 1 multi_frame_known, 2 multi_frame_classifier
//! n_keypoints      u32
//! spiral_len       u32
//! feature_width    u32
//! decoder_width    u32
//! clip_len         u32
//! image_height     u32
//! image_width      u32
//! encoder_channels 4 × u32
//! ef_hidden        3 × u32
//! classifier_hidden u32
//! train_step       u64
//! tensor_count     u32
//! per tensor:
//!   name_len u16, name (UTF-8), ndim u8, dims ndim × u32, values product(dims) × f32
//! ```
//!
//! Tensors appear in the model's fixed visiting order and must match it
//! by name and shape on load.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{read_bytes, write_atomic};
use crate::layerkit::tensor::Params;
use crate::model::config::{Mode, ModelConfig};
use crate::model::network::Model;

pub const MAGIC: &[u8; 4] = b"EGRF";
pub const VERSION: u16 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} exceeds u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(model: &Model) -> Result<Vec<u8>> {
    let c = model.config();
    let mut out = Vec::with_capacity(model.parameter_count() * 4 + 1024);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(c.mode.code());
    for v in [
        c.n_keypoints,
        c.spiral_len,
        c.feature_width,
        c.decoder_width,
        c.clip_len,
        c.image_height,
        c.image_width,
    ] {
        put_u32(&mut out, v)?;
    }
    for &v in c.encoder_channels.iter().chain(&c.ef_hidden) {
        put_u32(&mut out, v)?;
    }
    put_u32(&mut out, c.classifier_hidden)?;
    out.extend_from_slice(&model.train_step.to_le_bytes());

    let named = model.named_tensors();
    put_u32(&mut out, named.len())?;
    for (name, t) in named {
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint("tensor name too long".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated file while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not an EGRF checkpoint".into()));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
    }
    let code = r.u8("mode")?;
    let mode = Mode::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown mode code {code}")))?;
    let mut config = ModelConfig {
        mode,
        n_keypoints: r.u32("n_keypoints")?,
        spiral_len: r.u32("spiral_len")?,
        feature_width: r.u32("feature_width")?,
        decoder_width: r.u32("decoder_width")?,
        clip_len: r.u32("clip_len")?,
        image_height: r.u32("image_height")?,
        image_width: r.u32("image_width")?,
        ..ModelConfig::default()
    };
    for c in config.encoder_channels.iter_mut() {
        *c = r.u32("encoder_channels")?;
    }
    for c in config.ef_hidden.iter_mut() {
        *c = r.u32("ef_hidden")?;
    }
    config.classifier_hidden = r.u32("classifier_hidden")?;
    let train_step = r.u64("train_step")?;
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("stored config invalid: {e}")))?;
    // Cheap sanity bound before allocating a model from untrusted sizes.
    if config.analytic_parameter_count().saturating_mul(4) > bytes.len() {
        return Err(Error::Checkpoint(format!(
            "file of {} bytes cannot hold the {} parameters its config declares",
            bytes.len(),
            config.analytic_parameter_count()
        )));
    }

    let mut model = Model::new(config, 0)?;
    model.train_step = train_step;
    let expected: Vec<(String, Vec<usize>)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.shape().to_vec()))
        .collect();
    let count = r.u32("tensor count")?;
    if count != expected.len() {
        return Err(Error::Checkpoint(format!(
            "file has {count} tensors, architecture needs {}",
            expected.len()
        )));
    }
    let mut values = Vec::with_capacity(model.parameter_count());
    for (want_name, want_shape) in &expected {
        let len = r.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        if name != want_name {
            return Err(Error::Checkpoint(format!("expected tensor '{want_name}', found '{name}'")));
        }
        let ndim = r.u8("tensor rank")? as usize;
        let shape = (0..ndim).map(|_| r.u32("tensor dims")).collect::<Result<Vec<_>>>()?;
        if &shape != want_shape {
            return Err(Error::Checkpoint(format!(
                "tensor '{name}' has shape {shape:?}, expected {want_shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        let raw = r.take(n * 4, "tensor values")?;
        values.extend(raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes"))));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    model.load_flat(&values);
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    decode_checkpoint(&read_bytes(path)?)
}
