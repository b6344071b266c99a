//! Binary checkpoint format.
//!
//! ```text
//! magic     8 bytes  "MIXRGCKP"
//! version   u32 LE
//! desc_len  u64 LE
//! desc      desc_len bytes of TOML (network spec and metadata)
//! payload   param_count little-endian f64
//! checksum  32 bytes SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::math::ParamVector;
use crate::net::NetworkSpec;

const MAGIC: &[u8; 8] = b"MIXRGCKP";
const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetworkSpec,
    pub params: ParamVector,
    pub source_val_accuracy: f64,
    /// Fingerprint of the source validation split the accuracy was measured on.
    pub source_val_fingerprint: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Descriptor {
    spec: NetworkSpec,
    param_count: usize,
    source_val_accuracy: f64,
    source_val_fingerprint: String,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let layout = self.spec.layout();
        if layout.as_ref() != self.params.layout().as_ref() {
            return Err(Error::config("parameters do not match the network spec"));
        }
        let desc = toml::to_string(&Descriptor {
            spec: self.spec.clone(),
            param_count: self.params.len(),
            source_val_accuracy: self.source_val_accuracy,
            source_val_fingerprint: self.source_val_fingerprint.clone(),
        })
        .map_err(|e| Error::config(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + desc.len() + 8 * self.params.len() + CHECKSUM_LEN);
        out.extend_from_slice(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((desc.len() as u64).to_le_bytes());
        out.extend_from_slice(desc.as_bytes());
        for x in self.params.values() {
            out.extend(x.to_le_bytes());
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::format(path, reason);
        let min = MAGIC.len() + 4 + 8 + CHECKSUM_LEN;
        if bytes.len() < min {
            return Err(bad(format!(
                "expected at least {min} bytes, found {}",
                bytes.len()
            )));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let (body, checksum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
        if Sha256::digest(body).as_slice() != checksum {
            return Err(bad("checksum mismatch".into()));
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let desc_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let desc_end = 20usize
            .checked_add(desc_len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| bad("descriptor runs past the end of the file".into()))?;
        let text = std::str::from_utf8(&body[20..desc_end]).map_err(|e| bad(e.to_string()))?;
        let desc: Descriptor = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        desc.spec.validate()?;
        let payload = &body[desc_end..];
        if payload.len() != 8 * desc.param_count {
            return Err(bad(format!(
                "expected {} payload bytes, found {}",
                8 * desc.param_count,
                payload.len()
            )));
        }
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let params = ParamVector::from_values(desc.spec.layout(), values)?;
        Ok(Self {
            spec: desc.spec,
            params,
            source_val_accuracy: desc.source_val_accuracy,
            source_val_fingerprint: desc.source_val_fingerprint,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
