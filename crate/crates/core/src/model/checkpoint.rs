//! Binary checkpoints, little-endian throughout:
//!
//! ```text
//! magic "SFICKPT\0" | u32 version | 8-byte architecture hash
//! u32 len | config as TOML
//! u32 count | count × (u32 len | name | u32 ndim | ndim × u64 | f64 data)
//! u64 adam step
//! ```
//!
//! Adam moments are stored as arrays named `adam.m.<param>` and
//! `adam.v.<param>`.

use std::path::Path;

use super::train::Adam;
use super::{ModelConfig, ModelParams};
use crate::numerics::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SFICKPT\0";
pub const FORMAT_VERSION: u32 = 1;

pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub adam: Adam,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits in u32").to_le_bytes());
}

fn put_array(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f64]) {
    put_u32(out, name.len());
    out.extend_from_slice(name.as_bytes());
    put_u32(out, shape.len());
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in data {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn to_bytes(config: &ModelConfig, params: &ModelParams, adam: &Adam) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 * params.num_scalars() + 1024);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&config.arch_hash());
    let toml = config.to_toml_string();
    put_u32(&mut out, toml.len());
    out.extend_from_slice(toml.as_bytes());
    let named = params.named();
    put_u32(&mut out, named.len() * 3);
    for (name, t) in &named {
        put_array(&mut out, name, t.shape(), t.data());
    }
    for ((name, t), m) in named.iter().zip(&adam.m) {
        put_array(&mut out, &format!("adam.m.{name}"), t.shape(), m);
    }
    for ((name, t), v) in named.iter().zip(&adam.v) {
        put_array(&mut out, &format!("adam.v.{name}"), t.shape(), v);
    }
    out.extend_from_slice(&adam.step.to_le_bytes());
    out
}

pub fn save(path: impl AsRef<Path>, config: &ModelConfig, params: &ModelParams, adam: &Adam) -> Result<()> {
    std::fs::write(path, to_bytes(config, params, adam))?;
    Ok(())
}

struct Reader<'b> {
    buf: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }

    fn array(&mut self) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let ndim = self.u32()?;
        let shape = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(8usize, |acc, &d| acc.checked_mul(d));
        let bytes = self.take(numel.ok_or_else(|| Error::Checkpoint("array too large".into()))?)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok((name, Tensor::new(shape, data)?))
    }
}

/// Parses a checkpoint. With `expected`, refuses any checkpoint whose
/// architecture hash differs from that config's.
pub fn from_bytes(buf: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let hash: [u8; 8] = r.take(8)?.try_into().unwrap();
    if let Some(cfg) = expected {
        if cfg.arch_hash() != hash {
            return Err(Error::Checkpoint(
                "config hash mismatch: checkpoint was trained with a different architecture".into(),
            ));
        }
    }
    let config = ModelConfig::from_toml_str(&r.string()?)?;
    if config.arch_hash() != hash {
        return Err(Error::Checkpoint("stored config does not match its hash".into()));
    }
    let mut params = ModelParams::init(&config, 0)?;
    let mut adam = Adam::new(&params);
    let names: Vec<String> = params.named().into_iter().map(|(n, _)| n).collect();
    let count = r.u32()?;
    let mut filled = vec![false; names.len() * 3];
    for _ in 0..count {
        let (name, t) = r.array()?;
        let (kind, slot, base) = if let Some(n) = name.strip_prefix("adam.m.") {
            (1, Some(&mut adam.m), n)
        } else if let Some(n) = name.strip_prefix("adam.v.") {
            (2, Some(&mut adam.v), n)
        } else {
            (0, None, name.as_str())
        };
        let i =
            names.iter().position(|n| n == base).ok_or_else(|| Error::Checkpoint(format!("unknown array `{name}`")))?;
        if std::mem::replace(&mut filled[kind * names.len() + i], true) {
            return Err(Error::Checkpoint(format!("array `{name}` appears twice")));
        }
        match slot {
            Some(moments) => {
                if moments[i].len() != t.numel() {
                    return Err(Error::Checkpoint(format!("array `{name}` has the wrong size")));
                }
                moments[i] = t.into_data();
            }
            None => params.set(base, t)?,
        }
    }
    if let Some(missing) = filled.iter().position(|f| !f) {
        return Err(Error::Checkpoint(format!("array for `{}` is missing", names[missing % names.len()])));
    }
    adam.step = r.u64()?;
    if r.pos != buf.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(Checkpoint { config, params, adam })
}

pub fn load(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    from_bytes(&std::fs::read(path)?, expected)
}
