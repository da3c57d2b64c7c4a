//! Binary checkpoint format.
//!
//! ```text
//! magic "GSEDDCKP" | u32 version | u32 len + JSON record
//! | u32 tensor count | per tensor: u32 len + name, u32 rank, u64 dims
//! | f32 parameters | f32 EMA shadow            (all little endian)
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Layout, ModelConfig, ScoreNetwork};
use crate::error::{Error, Result};
use crate::files::write_atomic;
use crate::noise::NoiseSchedule;

pub const MAGIC: &[u8; 8] = b"GSEDDCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub schedule: NoiseSchedule,
    pub step: u64,
    pub seed: u64,
    pub params: Vec<f32>,
    pub ema: Vec<f32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    model: ModelConfig,
    schedule: NoiseSchedule,
    step: u64,
    seed: u64,
}

impl Checkpoint {
    /// Network evaluated with the raw parameters.
    pub fn network(&self) -> Result<ScoreNetwork> {
        ScoreNetwork::new(self.config, self.params.clone(), self.schedule)
    }

    /// Network evaluated with the EMA shadow, used for sampling and evaluation.
    pub fn ema_network(&self) -> Result<ScoreNetwork> {
        ScoreNetwork::new(self.config, self.ema.clone(), self.schedule)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layout = Layout::new(self.config)?;
        let count = layout.param_count();
        if self.params.len() != count || self.ema.len() != count {
            return Err(Error::CheckpointFormat(format!(
                "expected {count} parameters, have {} and {} EMA",
                self.params.len(),
                self.ema.len()
            )));
        }
        let record = serde_json::to_vec(&Record {
            model: self.config,
            schedule: self.schedule,
            step: self.step,
            seed: self.seed,
        })
        .map_err(|e| Error::CheckpointFormat(e.to_string()))?;
        let mut out = Vec::with_capacity(64 + record.len() + 8 * count);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_u32(&mut out, record.len());
        out.extend_from_slice(&record);
        put_u32(&mut out, layout.tensors().len());
        for t in layout.tensors() {
            put_u32(&mut out, t.name.len());
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, t.shape.len());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
        }
        for v in self.params.iter().chain(&self.ema) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(Error::CheckpointFormat("bad magic bytes".into()));
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let len = r.u32("config length")? as usize;
        let record: Record = serde_json::from_slice(r.take(len, "config record")?)
            .map_err(|e| Error::CheckpointFormat(format!("config record: {e}")))?;
        let layout = Layout::new(record.model)?;
        let count = r.u32("tensor count")? as usize;
        if count != layout.tensors().len() {
            return Err(Error::CheckpointFormat(format!(
                "manifest lists {count} tensors, config implies {}",
                layout.tensors().len()
            )));
        }
        for spec in layout.tensors() {
            let len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(len, "tensor name")?)
                .map_err(|_| Error::CheckpointFormat("tensor name is not UTF-8".into()))?;
            if name != spec.name {
                return Err(Error::CheckpointFormat(format!(
                    "expected tensor {}, found {name}",
                    spec.name
                )));
            }
            let rank = r.u32("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64("tensor dim")? as usize);
            }
            if shape != spec.shape {
                return Err(Error::CheckpointShape {
                    name: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: shape,
                });
            }
        }
        let total = layout.param_count();
        let params = r.floats(total, "parameters")?;
        let ema = r.floats(total, "EMA parameters")?;
        if r.pos != bytes.len() {
            return Err(Error::CheckpointFormat(format!(
                "{} trailing bytes after EMA parameters",
                bytes.len() - r.pos
            )));
        }
        Ok(Self {
            config: record.model,
            schedule: record.schedule,
            step: record.step,
            seed: record.seed,
            params,
            ema,
        })
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::CheckpointTruncated(format!("file ends inside {what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let raw = self.take(n * 4, what)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &checkpoint.to_bytes()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
