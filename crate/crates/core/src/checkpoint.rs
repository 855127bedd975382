//! Versioned binary model files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "CVPT" | u16 version | u8 precision (0 = f64, 1 = f32)
//! u32 len | architecture JSON
//! u64 seed
//! u32 len | metadata JSON
//! u32 tensor count | per tensor: u32 ndim, u64 dims[ndim], values
//! u32 CRC-32 of everything above
//! ```

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::networks::{Architecture, Network};
use crate::tensor::{Parameterized, Tensor};
use crate::Rng;

pub const MAGIC: &[u8; 4] = b"CVPT";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub architecture: Architecture,
    pub seed: u64,
    /// Free-form training metadata (epochs, metrics), as JSON.
    pub metadata: serde_json::Value,
    pub precision: Precision,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, seed: u64, metadata: serde_json::Value, precision: Precision) -> Self {
        Self {
            architecture: net.architecture(),
            seed,
            metadata,
            precision,
            tensors: net.parameters().iter().map(|p| p.value.clone()).collect(),
        }
    }

    /// Rebuilds the network and loads the stored parameter values.
    pub fn to_network(&self) -> Result<Network> {
        use rand::SeedableRng;
        let mut net = self.architecture.build(&mut Rng::seed_from_u64(self.seed))?;
        let params = net.parameters_mut();
        if params.len() != self.tensors.len() {
            return Err(Error::Format(format!(
                "{} stored tensors for {} parameters",
                self.tensors.len(),
                params.len()
            )));
        }
        for (p, t) in params.into_iter().zip(&self.tensors) {
            if p.value.shape() != t.shape() {
                return Err(Error::Format(format!(
                    "stored tensor {:?} for parameter {:?}",
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(match self.precision {
            Precision::F64 => 0,
            Precision::F32 => 1,
        });
        let arch = serde_json::to_vec(&self.architecture).map_err(json_err)?;
        push_blob(&mut out, &arch)?;
        out.extend_from_slice(&self.seed.to_le_bytes());
        let meta = serde_json::to_vec(&self.metadata).map_err(json_err)?;
        push_blob(&mut out, &meta)?;
        out.extend_from_slice(&len_u32(self.tensors.len())?.to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&len_u32(t.shape().len())?.to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                match self.precision {
                    Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                    Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                }
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 2 + 1 + 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (missing CVPT magic)".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(Error::Version {
                expected: VERSION.into(),
                found: version.into(),
            });
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Checksum { stored, computed });
        }

        let mut r = Cursor { bytes: body, at: 6 };
        let precision = match r.take(1)?[0] {
            0 => Precision::F64,
            1 => Precision::F32,
            p => return Err(Error::Format(format!("unknown precision flag {p}"))),
        };
        let arch_len = r.u32()? as usize;
        let architecture = serde_json::from_slice(r.take(arch_len)?).map_err(json_err)?;
        let seed = r.u64()?;
        let meta_len = r.u32()? as usize;
        let metadata = serde_json::from_slice(r.take(meta_len)?).map_err(json_err)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim.min(8));
            for _ in 0..ndim {
                shape.push(usize::try_from(r.u64()?).map_err(|_| Error::Format("tensor extent overflows".into()))?);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Format("tensor size overflows".into()))?;
            let width = match precision {
                Precision::F64 => 8,
                Precision::F32 => 4,
            };
            let raw = r.take(len.checked_mul(width).ok_or_else(|| Error::Format("tensor size overflows".into()))?)?;
            let data = match precision {
                Precision::F64 => raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect(),
                Precision::F32 => raw
                    .chunks_exact(4)
                    .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                    .collect(),
            };
            tensors.push(Tensor::new(&shape, data)?);
        }
        if r.at != body.len() {
            return Err(Error::Format(format!("{} trailing bytes", body.len() - r.at)));
        }
        Ok(Self {
            architecture,
            seed,
            metadata,
            precision,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(&bytes)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn len_u32(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("length {n} does not fit in u32")))
}

fn push_blob(out: &mut Vec<u8>, blob: &[u8]) -> Result<()> {
    out.extend_from_slice(&len_u32(blob.len())?.to_le_bytes());
    out.extend_from_slice(blob);
    Ok(())
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Format(format!("checkpoint JSON: {e}"))
}
