use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BnPolicy, EncoderConfig, ModelState, Param, ParamGroup};
use crate::autodiff::{BnState, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"CRYDACK\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: EncoderConfig,
    n_classes: usize,
    n_heads: usize,
    bn_policy: BnPolicy,
    step: u64,
    params: Vec<ParamMeta>,
    bn: Vec<BnMeta>,
}

#[derive(Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    group: ParamGroup,
    shape: Vec<usize>,
    trainable: bool,
    t: u64,
}

#[derive(Serialize, Deserialize)]
struct BnMeta {
    channels: usize,
    momentum: f32,
    eps: f32,
}

/// Layout: magic, u32 version, u64 header length, JSON header, then
/// little-endian f32 blocks (value, m, v per parameter; mean, var per BN layer).
pub fn save_checkpoint(state: &ModelState, path: &Path) -> Result<()> {
    let header = Header {
        config: state.config.clone(),
        n_classes: state.n_classes,
        n_heads: state.n_heads,
        bn_policy: state.bn_policy,
        step: state.step,
        params: state
            .params
            .iter()
            .map(|p| ParamMeta {
                name: p.name.clone(),
                group: p.group,
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
                t: p.t,
            })
            .collect(),
        bn: state
            .bn
            .iter()
            .map(|b| BnMeta { channels: b.channels(), momentum: b.momentum, eps: b.eps })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let mut put = |xs: &[f32]| xs.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    for p in &state.params {
        put(p.value.data());
        put(&p.m);
        put(&p.v);
    }
    for b in &state.bn {
        put(&b.running_mean);
        put(&b.running_var);
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let len = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
    let header: Header = serde_json::from_slice(cur.take(len as usize)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
    let mut params = Vec::with_capacity(header.params.len());
    for meta in header.params {
        let n: usize = meta.shape.iter().product();
        let value = Tensor::new(meta.shape, cur.floats(n)?)?;
        let m = cur.floats(n)?;
        let v = cur.floats(n)?;
        params.push(Param {
            name: meta.name,
            group: meta.group,
            value,
            trainable: meta.trainable,
            m,
            v,
            t: meta.t,
        });
    }
    let mut bn = Vec::with_capacity(header.bn.len());
    for meta in header.bn {
        let mut st = BnState::new(meta.channels, meta.momentum, meta.eps);
        st.running_mean = cur.floats(meta.channels)?;
        st.running_var = cur.floats(meta.channels)?;
        bn.push(st);
    }
    if cur.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - cur.pos
        )));
    }
    Ok(ModelState {
        config: header.config,
        n_classes: header.n_classes,
        n_heads: header.n_heads,
        params,
        bn,
        bn_policy: header.bn_policy,
        step: header.step,
    })
}
