//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SATCKPT1"
//! version    u32
//! arch_len   u32, then arch_len bytes of architecture JSON
//! epoch      u32      epochs completed when the snapshot was taken
//! seed       u64      the run seed; together with epoch this pins every
//!                     derived random stream, so resuming is bit-exact
//! flags      u8       bit 0: averaged weights present, bit 1: eval_mode
//! params     tensor section
//! velocity   tensor section (same tensor count as params)
//! averaged   tensor section, only if flag bit 0
//! ```
//!
//! A tensor section is a u32 count followed by, per tensor: u32 name length,
//! UTF-8 name, u32 rank, u32 dims, then the payload as 32-bit floats.

use std::path::Path;

use crate::diffcore::{Architecture, Element, Model, Tensor};
use crate::error::{Error, Result};
use crate::optim::SgdState;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SATCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A full training snapshot. Parameters are stored as f32 regardless of the
/// element type used at train time.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub epoch: u32,
    pub seed: u64,
    pub eval_mode: bool,
    pub params: Vec<Tensor<f32>>,
    pub velocity: Vec<Tensor<f32>>,
    pub averaged: Option<Vec<Tensor<f32>>>,
}

impl Checkpoint {
    pub fn from_state<T: Element>(
        model: &Model<T>,
        state: &SgdState<T>,
        averaged: Option<&[Tensor<T>]>,
        epoch: u32,
        seed: u64,
    ) -> Self {
        Checkpoint {
            arch: model.arch.clone(),
            epoch,
            seed,
            eval_mode: model.eval_mode,
            params: model.params.iter().map(Tensor::cast).collect(),
            velocity: state.velocity.iter().map(Tensor::cast).collect(),
            averaged: averaged.map(|ts| ts.iter().map(Tensor::cast).collect()),
        }
    }

    /// Rebuild the live model. Widening f32 to f64 is exact.
    pub fn to_model<T: Element>(&self) -> Result<Model<T>> {
        let model = Model {
            arch: self.arch.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            eval_mode: self.eval_mode,
        };
        model.check_shapes()?;
        Ok(model)
    }

    pub fn to_state<T: Element>(&self) -> SgdState<T> {
        SgdState {
            velocity: self.velocity.iter().map(Tensor::cast).collect(),
        }
    }

    /// The model to evaluate: averaged weights when present, else the live
    /// ones.
    pub fn to_eval_model<T: Element>(&self) -> Result<Model<T>> {
        let mut model = self.to_model()?;
        if let Some(avg) = &self.averaged {
            model.params = avg.iter().map(Tensor::cast).collect();
            model.check_shapes()?;
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let arch_json =
            serde_json::to_string(&self.arch).expect("architecture enum always serializes");
        buf.extend_from_slice(&(arch_json.len() as u32).to_le_bytes());
        buf.extend_from_slice(arch_json.as_bytes());
        buf.extend_from_slice(&self.epoch.to_le_bytes());
        buf.extend_from_slice(&self.seed.to_le_bytes());
        let mut flags = 0u8;
        if self.averaged.is_some() {
            flags |= 1;
        }
        if self.eval_mode {
            flags |= 2;
        }
        buf.push(flags);
        let names = self.arch.param_names();
        write_section(&mut buf, &names, &self.params);
        write_section(&mut buf, &names, &self.velocity);
        if let Some(avg) = &self.averaged {
            write_section(&mut buf, &names, avg);
        }
        buf
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        let magic = r.take(8, "checkpoint magic")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::format(
                "checkpoint magic",
                format!(
                    "expected {:?}, got {:?}; this is not a checkpoint file",
                    String::from_utf8_lossy(CHECKPOINT_MAGIC),
                    String::from_utf8_lossy(magic),
                ),
            ));
        }
        let version = r.u32("checkpoint version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(
                "checkpoint version",
                format!("unsupported version {version}, this build reads {CHECKPOINT_VERSION}"),
            ));
        }
        let arch_len = r.u32("checkpoint architecture")? as usize;
        let arch_bytes = r.take(arch_len, "checkpoint architecture")?;
        let arch: Architecture = serde_json::from_slice(arch_bytes)
            .map_err(|e| Error::format("checkpoint architecture", e.to_string()))?;
        arch.validate()?;
        let epoch = r.u32("checkpoint epoch")?;
        let seed = r.u64("checkpoint seed")?;
        let flags = r.take(1, "checkpoint flags")?[0];
        if flags & !3 != 0 {
            return Err(Error::format(
                "checkpoint flags",
                format!("unknown flag bits in {flags:#04x}"),
            ));
        }
        let params = read_section(&mut r, &arch, "checkpoint parameters")?;
        let velocity = read_section(&mut r, &arch, "checkpoint optimizer state")?;
        let averaged = if flags & 1 != 0 {
            Some(read_section(&mut r, &arch, "checkpoint averaged weights")?)
        } else {
            None
        };
        if r.pos != buf.len() {
            return Err(Error::format(
                "checkpoint payload",
                format!("{} trailing bytes", buf.len() - r.pos),
            ));
        }
        Ok(Checkpoint {
            arch,
            epoch,
            seed,
            eval_mode: flags & 2 != 0,
            params,
            velocity,
            averaged,
        })
    }
}

fn write_section(buf: &mut Vec<u8>, names: &[&'static str], tensors: &[Tensor<f32>]) {
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in names.iter().zip(tensors) {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn read_section(r: &mut Reader<'_>, arch: &Architecture, field: &str) -> Result<Vec<Tensor<f32>>> {
    let specs = arch.param_specs();
    let count = r.u32(field)? as usize;
    if count != specs.len() {
        return Err(Error::format(
            field,
            format!("expected {} tensors, found {count}", specs.len()),
        ));
    }
    let mut out = Vec::with_capacity(count);
    for (name, shape, _) in specs {
        let name_len = r.u32(field)? as usize;
        let name_bytes = r.take(name_len, field)?;
        if name_bytes != name.as_bytes() {
            return Err(Error::format(
                field,
                format!(
                    "expected tensor {name:?}, found {:?}",
                    String::from_utf8_lossy(name_bytes)
                ),
            ));
        }
        let rank = r.u32(field)? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32(field)? as usize);
        }
        if dims != shape {
            return Err(Error::format(
                field,
                format!("tensor {name} has shape {dims:?}, architecture says {shape:?}"),
            ));
        }
        let n: usize = dims.iter().product();
        let raw = r.take(4 * n, field)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(Tensor::new(dims, data)?);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                field,
                format!(
                    "truncated: needed {n} bytes at offset {}, file has {}",
                    self.pos,
                    self.buf.len()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        let b = self.take(8, field)?;
        Ok(u64::from_le_bytes([
            b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
        ]))
    }
}

/// Write atomically: temp file in the same directory, then rename.
pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let bytes = ckpt.to_bytes();
    let tmp = path.with_extension("ckpt.tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
