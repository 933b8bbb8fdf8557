//! Binary checkpoint container.
//!
//! Layout (all integers little-endian `u64`):
//!
//! ```text
//! "mutdet-ckpt-v1\n"
//! config_len, config JSON
//! tensor_count
//! per tensor: name_len, name, rows, cols, rows·cols f64 (row-major)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Matrix;

use super::config::DetectorConfig;
use super::model::Detector;

pub const CHECKPOINT_MAGIC: &[u8] = b"mutdet-ckpt-v1\n";

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("eight bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflow".into()))
    }
}

/// Serialized tensors and configuration of a detector.
pub fn to_bytes(det: &Detector) -> Result<Vec<u8>> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    let config = serde_json::to_vec(det.config())
        .map_err(|e| Error::Checkpoint(format!("cannot encode config: {e}")))?;
    push_u64(&mut out, config.len() as u64);
    out.extend_from_slice(&config);
    push_u64(&mut out, det.store().len() as u64);
    for (name, value) in det.store().iter() {
        push_u64(&mut out, name.len() as u64);
        out.extend_from_slice(name.as_bytes());
        push_u64(&mut out, value.nrows() as u64);
        push_u64(&mut out, value.ncols() as u64);
        for v in value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Tensor names, shapes and values stored in a checkpoint, with its config.
pub fn parse(bytes: &[u8]) -> Result<(DetectorConfig, Vec<(String, Matrix)>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a mutdet-ckpt-v1 checkpoint".into()));
    }
    let n = r.len()?;
    let config: DetectorConfig = serde_json::from_slice(r.take(n)?)
        .map_err(|e| Error::Checkpoint(format!("bad config: {e}")))?;
    let count = r.len()?;
    let mut tensors = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.len()?;
        let name = String::from_utf8(r.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let rows = r.len()?;
        let cols = r.len()?;
        let size = rows
            .checked_mul(cols)
            .and_then(|s| s.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint("tensor size overflow".into()))?;
        let data = r.take(size)?;
        let values: Vec<f64> = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("eight bytes")))
            .collect();
        let m = Matrix::from_shape_vec((rows, cols), values)
            .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        tensors.push((name, m));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    Ok((config, tensors))
}

pub fn from_bytes(bytes: &[u8]) -> Result<Detector> {
    let (config, tensors) = parse(bytes)?;
    Detector::from_parts(config, tensors)
}

pub fn save(det: &Detector, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(det)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Detector> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
