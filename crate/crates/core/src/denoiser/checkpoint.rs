//! Binary checkpoints.
//!
//! Model file layout (all integers and floats little-endian):
//!
//! | field                | encoding                                   |
//! |----------------------|--------------------------------------------|
//! | magic                | `PCDF`                                     |
//! | format version       | u32                                        |
//! | architecture         | u32 byte length + UTF-8 JSON (sorted keys) |
//! | schedule steps       | u64                                        |
//! | beta start, beta end | f64, f64                                   |
//! | schedule kind        | u8 (0 = linear)                            |
//! | parameter count      | u64                                        |
//! | parameters           | f64 each, in layer order                   |
//! | CRC32 of the above   | u32                                        |
//!
//! Optimizer state goes to a sidecar with magic `PCDO`: version, step (u64),
//! learning rate and moment decays and epsilon (4 x f64), count (u64), first
//! moments, second moments, CRC32.

use std::path::Path;

use super::{AdamConfig, Architecture, DenoiserParameters, OptimizerState};
use crate::diffusion::{ScheduleKind, ScheduleParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"PCDF";
pub const OPTIMIZER_MAGIC: &[u8; 4] = b"PCDO";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: DenoiserParameters,
    pub schedule: ScheduleParams,
}

fn put_u32(b: &mut Vec<u8>, v: u32) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(b: &mut Vec<u8>, v: u64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(b: &mut Vec<u8>, v: f64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn seal(mut b: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&b);
    put_u32(&mut b, crc);
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    /// Verifies magic and CRC; the reader then covers the body only.
    fn open(bytes: &'a [u8], magic: &[u8; 4]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != magic {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::Checkpoint("CRC mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        Ok(r)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("count overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(())
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    b.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut b, CHECKPOINT_VERSION);
    let json = serde_json::to_string(&serde_json::to_value(ckpt.params.architecture())?)?;
    put_u32(&mut b, json.len() as u32);
    b.extend_from_slice(json.as_bytes());
    let s = ckpt.schedule;
    put_u64(&mut b, s.steps as u64);
    put_f64(&mut b, s.beta_start);
    put_f64(&mut b, s.beta_end);
    b.push(match s.kind {
        ScheduleKind::Linear => 0,
    });
    put_u64(&mut b, ckpt.params.len() as u64);
    for &v in ckpt.params.values() {
        put_f64(&mut b, v);
    }
    Ok(seal(b))
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::open(bytes, CHECKPOINT_MAGIC)?;
    let len = r.u32()? as usize;
    let json = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Checkpoint("descriptor is not UTF-8".into()))?;
    let architecture: Architecture = serde_json::from_str(json)?;
    let steps = r.u64()? as usize;
    let beta_start = r.f64()?;
    let beta_end = r.f64()?;
    let kind = match r.u8()? {
        0 => ScheduleKind::Linear,
        k => return Err(Error::Checkpoint(format!("unknown schedule kind {k}"))),
    };
    let count = r.u64()? as usize;
    let values = r.f64s(count)?;
    r.finish()?;
    Ok(Checkpoint {
        params: DenoiserParameters::from_values(architecture, values)?,
        schedule: ScheduleParams {
            steps,
            beta_start,
            beta_end,
            kind,
        },
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, write_checkpoint(ckpt)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes)
}

impl OptimizerState {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(OPTIMIZER_MAGIC);
        put_u32(&mut b, CHECKPOINT_VERSION);
        put_u64(&mut b, self.step);
        let c = self.config;
        for v in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
            put_f64(&mut b, v);
        }
        put_u64(&mut b, self.first_moment.len() as u64);
        for &v in self.first_moment.iter().chain(&self.second_moment) {
            put_f64(&mut b, v);
        }
        seal(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, OPTIMIZER_MAGIC)?;
        let step = r.u64()?;
        let config = AdamConfig {
            learning_rate: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            epsilon: r.f64()?,
        };
        let n = r.u64()? as usize;
        let first_moment = r.f64s(n)?;
        let second_moment = r.f64s(n)?;
        r.finish()?;
        Ok(Self {
            config,
            step,
            first_moment,
            second_moment,
        })
    }
}
