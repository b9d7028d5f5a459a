//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! 8 bytes   magic "CSRCKPT\0"
//! u32       format version
//! u32       header length in bytes
//! ...       JSON header: model config, alphabet version, tensor names and shapes
//! f64 × n   tensor data in header order, row-major
//! ```

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelParams};
use crate::corpus::AlphabetVersion;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CSRCKPT\0";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub alphabet: AlphabetVersion,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    alphabet: AlphabetVersion,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.params.named_tensors();
        let header = Header {
            config: self.params.config,
            alphabet: self.alphabet,
            tensors: named
                .iter()
                .map(|(name, shape, _)| TensorEntry {
                    name: name.clone(),
                    shape: shape.clone(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + 8 * self.params.parameter_count());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, _, data) in &named {
            for v in data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let hlen = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
        let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header =
            serde_json::from_slice(body).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

        let mut params = ModelParams::zeros(header.config);
        let expected: Vec<(String, Vec<usize>)> = params
            .named_tensors()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        if expected.len() != header.tensors.len()
            || expected
                .iter()
                .zip(&header.tensors)
                .any(|((n, s), e)| *n != e.name || *s != e.shape)
        {
            return Err(bad("tensor table does not match the model configuration"));
        }
        let mut data = &bytes[16 + hlen..];
        for t in params.tensors_mut() {
            let need = 8 * t.len();
            if data.len() < need {
                return Err(bad("truncated tensor data"));
            }
            for (v, chunk) in t.iter_mut().zip(data[..need].chunks_exact(8)) {
                *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            }
            data = &data[need..];
        }
        if !data.is_empty() {
            return Err(bad("trailing bytes after tensor data"));
        }
        Ok(Checkpoint {
            alphabet: header.alphabet,
            params,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Architecture;

    fn ckpt(arch: Architecture) -> Checkpoint {
        Checkpoint {
            alphabet: AlphabetVersion::V2,
            params: ModelParams::init(ModelConfig::new(arch, 37).with_hidden(3), 11).unwrap(),
        }
    }

    #[test]
    fn bytes_round_trip() {
        for arch in [Architecture::EarlyFusion, Architecture::TwoStream, Architecture::ThreeStream] {
            let c = ckpt(arch);
            assert_eq!(Checkpoint::from_bytes(&c.to_bytes()).unwrap(), c);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        let c = ckpt(Architecture::ThreeStream);
        save_checkpoint(&p, &c).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), c);
    }

    #[test]
    fn rejects_corruption() {
        let mut b = ckpt(Architecture::TwoStream).to_bytes();
        assert!(Checkpoint::from_bytes(&b[..b.len() - 3]).is_err());
        b.push(0);
        assert!(Checkpoint::from_bytes(&b).is_err());
        assert!(Checkpoint::from_bytes(b"nonsense data here").is_err());
        let mut v = ckpt(Architecture::TwoStream).to_bytes();
        v[8] = 9;
        assert!(Checkpoint::from_bytes(&v).is_err());
    }
}
