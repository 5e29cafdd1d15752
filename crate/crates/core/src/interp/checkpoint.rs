//! `MRIN` checkpoint container.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "MRIN" | version | descriptor_len | descriptor (UTF-8)
//! | meta_len | meta (UTF-8 JSON: loss tag, provenance)
//! | param_count | param_count × record
//! record = name_len | name (UTF-8) | rank | rank × dim | Π dims × f32 LE
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::network::{ModelConfig, Parameter, ParameterSet};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MRIN";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossTag {
    #[serde(rename = "SN")]
    Sn,
    #[serde(rename = "SN-GAN")]
    SnGan,
    #[serde(rename = "INTERP")]
    Interp,
}

impl std::fmt::Display for LossTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossTag::Sn => "SN",
            LossTag::SnGan => "SN-GAN",
            LossTag::Interp => "INTERP",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    pub coefficients: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Meta {
    loss: LossTag,
    provenance: Option<Provenance>,
}

/// Trained parameters plus the architecture that gives them meaning.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelCheckpoint {
    pub(crate) descriptor: String,
    pub(crate) tag: LossTag,
    pub(crate) provenance: Option<Provenance>,
    pub(crate) params: ParameterSet,
}

impl ModelCheckpoint {
    pub fn new(config: &ModelConfig, tag: LossTag, params: ParameterSet) -> Result<Self> {
        let ckpt = ModelCheckpoint {
            descriptor: config.descriptor(),
            tag,
            provenance: None,
            params,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }

    /// Assembles a checkpoint without checking parameters against the
    /// descriptor. [`ModelCheckpoint::validate`] performs that check.
    pub fn from_raw_parts(descriptor: String, tag: LossTag, provenance: Option<Provenance>, params: ParameterSet) -> Self {
        ModelCheckpoint {
            descriptor,
            tag,
            provenance,
            params,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let config = ModelConfig::from_descriptor(&self.descriptor)
            .map_err(|e| FormatError::Descriptor(e.to_string()))?;
        let expected = config.layout();
        let found = self.params.layout();
        if expected.entries.len() != found.entries.len() {
            return Err(FormatError::Descriptor(format!(
                "descriptor implies {} tensors, found {}",
                expected.entries.len(),
                found.entries.len()
            ))
            .into());
        }
        for (e, f) in expected.entries.iter().zip(&found.entries) {
            if e != f {
                return Err(FormatError::Descriptor(format!(
                    "tensor `{}` {:?} where descriptor implies `{}` {:?}",
                    f.0, f.1, e.0, e.1
                ))
                .into());
            }
        }
        if let Some(p) = &self.provenance {
            if p.sources.len() != p.coefficients.len() {
                return Err(FormatError::Header("provenance lists differ in length".into()).into());
            }
            let sum: f64 = p.coefficients.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(FormatError::Header(format!("provenance coefficients sum to {sum}")).into());
            }
        } else if self.tag == LossTag::Interp {
            return Err(FormatError::Header("interpolated checkpoint without provenance".into()).into());
        }
        Ok(())
    }

    pub fn descriptor(&self) -> &str {
        &self.descriptor
    }

    pub fn config(&self) -> Result<ModelConfig> {
        ModelConfig::from_descriptor(&self.descriptor)
    }

    pub fn tag(&self) -> LossTag {
        self.tag
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn into_params(self) -> ParameterSet {
        self.params
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.descriptor);
        let meta = serde_json::to_string(&Meta {
            loss: self.tag,
            provenance: self.provenance.clone(),
        })
        .expect("metadata serializes");
        put_str(&mut out, &meta);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.entries() {
            put_str(&mut out, &p.name);
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &p.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic {
                expected: CHECKPOINT_MAGIC,
                found: magic,
            }
            .into());
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(FormatError::UnsupportedVersion {
                found: version,
                supported: CHECKPOINT_VERSION,
            }
            .into());
        }
        let descriptor = r.string("descriptor")?;
        let meta_text = r.string("metadata")?;
        let meta: Meta = serde_json::from_str(&meta_text)
            .map_err(|e| FormatError::Header(format!("metadata: {e}")))?;
        let count = r.u32("parameter count")? as usize;
        let mut entries = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name = r.string("parameter name")?;
            let rank = r.u32("parameter rank")? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u32("parameter dims")? as usize);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(FormatError::Truncated("parameter values"))?;
            let raw = r.take(numel.checked_mul(4).ok_or(FormatError::Truncated("parameter values"))?, "parameter values")?;
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
                .collect();
            entries.push(Parameter { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(FormatError::Header(format!("{} trailing bytes", bytes.len() - r.pos)).into());
        }
        let params = ParameterSet::new(entries).map_err(|e| FormatError::Descriptor(e.to_string()))?;
        let ckpt = ModelCheckpoint {
            descriptor,
            tag: meta.loss,
            provenance: meta.provenance,
            params,
        };
        ckpt.validate()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelCheckpoint::from_bytes(&bytes)
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated(what));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self, what: &'static str) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    pub fn string(&mut self, what: &'static str) -> Result<String, FormatError> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec()).map_err(|_| FormatError::Header(format!("{what} is not UTF-8")))
    }
}
