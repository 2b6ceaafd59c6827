//! Binary container holding a generator/discriminator pair.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "RGAN" | version u32 | kind u8 | residual mode u8
//! channels, height, width, d, discriminator outputs, noise dim: u32 each
//! batchnorm momentum f64 | batchnorm epsilon f64 | seed u64 | epoch u64
//! blob count u32, then per blob:
//!   name length u32 | name bytes | ndim u32 | dims u32… | data f64…
//! ```
//!
//! Blobs follow declaration order: generator parameters and buffers, then the
//! discriminator's.

use std::path::Path;

use super::{build_discriminator, build_generator, Discriminator, Generator, ImageShape, ModelConfig, ModelKind, ResidualMode};
use crate::error::{Error, Result};
use crate::nn::BatchNormConfig;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RGAN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub generator: Generator,
    pub discriminator: Discriminator,
    /// Completed epochs when the snapshot was taken.
    pub epoch: u64,
}

impl Checkpoint {
    pub fn new(generator: Generator, discriminator: Discriminator, epoch: u64) -> Result<Self> {
        if generator.config() != discriminator.config() {
            return Err(Error::Contract("generator and discriminator were built from different configurations".into()));
        }
        Ok(Self { generator, discriminator, epoch })
    }

    pub fn config(&self) -> &ModelConfig {
        self.generator.config()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.config();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(c.kind.code());
        out.push(match c.residual_mode {
            ResidualMode::Concat => 0,
            ResidualMode::Add => 1,
        });
        for v in [c.shape.channels, c.shape.height, c.shape.width, c.attributes, c.discriminator_outputs, c.noise_dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&c.batchnorm.momentum.to_le_bytes());
        out.extend_from_slice(&c.batchnorm.epsilon.to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());

        let entries: Vec<_> =
            self.generator.state_entries().into_iter().chain(self.discriminator.state_entries()).collect();
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, t) in entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.error_at(0, "missing RGAN magic"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.error_at(4, format!("unsupported checkpoint version {version}")));
        }
        let kind_at = r.pos;
        let kind = ModelKind::from_code(r.u8()?).ok_or_else(|| r.error_at(kind_at, "unknown model kind"))?;
        let residual_mode = match r.u8()? {
            0 => ResidualMode::Concat,
            1 => ResidualMode::Add,
            _ => return Err(r.error_at(kind_at + 1, "unknown residual mode")),
        };
        let mut dims = [0usize; 6];
        for d in &mut dims {
            *d = r.u32()? as usize;
        }
        let [channels, height, width, attributes, discriminator_outputs, noise_dim] = dims;
        let momentum = r.f64()?;
        let epsilon = r.f64()?;
        let seed = r.u64()?;
        let epoch = r.u64()?;
        let config = ModelConfig {
            kind,
            shape: ImageShape::new(channels, height, width),
            attributes,
            discriminator_outputs,
            noise_dim,
            residual_mode,
            batchnorm: BatchNormConfig { momentum, epsilon },
            seed,
        };
        let header_end = r.pos;
        let mut generator = build_generator(&config).map_err(|e| r.error_at(header_end, e.to_string()))?;
        let mut discriminator = build_discriminator(&config).map_err(|e| r.error_at(header_end, e.to_string()))?;

        let count_at = r.pos;
        let count = r.u32()? as usize;
        let mut slots: Vec<(String, &mut Tensor)> =
            generator.state_entries_mut().into_iter().chain(discriminator.state_entries_mut()).collect();
        if count != slots.len() {
            return Err(r.error_at(count_at, format!("expected {} blobs, found {count}", slots.len())));
        }
        for (expected, slot) in &mut slots {
            let at = r.pos;
            let len = r.u32()? as usize;
            let name = r.take(len)?;
            if name != expected.as_bytes() {
                return Err(r.error_at(at, format!("expected blob `{expected}`")));
            }
            let shape_at = r.pos;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if shape != slot.shape() {
                return Err(r.error_at(shape_at, format!("blob `{expected}` has shape {shape:?}, expected {:?}", slot.shape())));
            }
            for v in slot.data_mut() {
                *v = r.f64()?;
            }
        }
        drop(slots);
        if r.pos != bytes.len() {
            return Err(r.error_at(r.pos, "trailing bytes after the last blob"));
        }
        Ok(Self { generator, discriminator, epoch })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn error_at(&self, offset: usize, message: impl Into<String>) -> Error {
        Error::Format { offset: offset as u64, message: message.into() }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.error_at(self.pos, format!("truncated: needed {n} more bytes"))),
        }
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
}
