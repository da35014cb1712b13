//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic            8 bytes  "CAMCKPT\0"
//! version          u32
//! header length    u32, then that many bytes of JSON {"model": .., "stage": ..}
//! tensor count     u32
//! per tensor       u32 name length, UTF-8 name, u32 element count, f32 values
//! crc32            u32 over every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelState, ParamSet, StageTag, Tensor};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CAMCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    stage: StageTag,
}

pub(crate) fn encode(state: &ModelState) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        model: state.config.clone(),
        stage: state.stage,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(64 + header.len() + 4 * state.params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(state.params.tensors.len() as u32).to_le_bytes());
    for t in &state.params.tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.data.len() as u32).to_le_bytes());
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("unexpected end of payload".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<ModelState> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 + 4 {
        return Err(Error::Checkpoint(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let (payload, crc) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc.try_into().expect("4 bytes"));
    let actual = crc32fast::hash(payload);
    if stored != actual {
        return Err(Error::Checkpoint(format!(
            "crc mismatch (stored {stored:08x}, computed {actual:08x})"
        )));
    }
    let mut r = Reader { buf: payload, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(hlen)?)
        .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    let layout = header.model.parameter_layout();
    for i in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_owned();
        let n = r.u32()? as usize;
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        let shape = layout
            .get(i)
            .filter(|(expected, _)| *expected == name)
            .map(|(_, s)| s.clone())
            .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor `{name}`")))?;
        tensors.push(Tensor { name, shape, data });
    }
    if r.pos != payload.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }
    ModelState::from_parameters(header.model, header.stage, ParamSet { tensors })
        .map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        crate::util::create_dir(parent)?;
    }
    std::fs::write(path, encode(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
