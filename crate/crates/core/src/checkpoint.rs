//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | field          | size                                   |
//! |----------------|----------------------------------------|
//! | magic `MF2C`   | 4                                      |
//! | version        | u16                                    |
//! | metadata len   | u32                                    |
//! | metadata       | UTF-8 JSON ([`CheckpointMeta`])        |
//! | tensor count   | u32                                    |
//! | tensors        | u16 name len, name, u32 rows, u32 cols, rows×cols f64 |
//! | SHA-256        | 32, over every preceding byte          |
//!
//! Model tensors are stored as `param.<name>`; optimizer moments as
//! `adam.m.<name>` and `adam.v.<name>`.

use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, FormatError, Result};
use crate::model::{check_params, ModelConfig};
use crate::optim::{AdamConfig, AdamState, ModelParams};
use crate::tensor::Tensor2;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MF2C";
pub const CHECKPOINT_VERSION: u16 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    /// Completed epochs.
    pub epochs: usize,
    pub adam: Option<AdamConfig>,
    pub adam_step: u64,
    /// Free-form run settings echoed for reproducibility.
    #[serde(default)]
    pub run: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
    pub adam: Option<AdamState>,
}

impl Checkpoint {
    pub fn new(model: ModelConfig, params: ModelParams) -> Self {
        Checkpoint {
            meta: CheckpointMeta {
                model,
                epochs: 0,
                adam: None,
                adam_step: 0,
                run: serde_json::Value::Null,
            },
            params,
            adam: None,
        }
    }
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor2) {
    let name_len = u16::try_from(name.len()).expect("tensor name under 64 KiB");
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let mut meta = ckpt.meta.clone();
    meta.adam = ckpt.adam.as_ref().map(|s| s.config);
    meta.adam_step = ckpt.adam.as_ref().map_or(0, |s| s.step);
    let meta_json = serde_json::to_vec(&meta).expect("metadata serializes");

    let mut tensors: Vec<(String, &Tensor2)> = ckpt
        .params
        .iter()
        .map(|(n, t)| (format!("param.{n}"), t))
        .collect();
    if let Some(state) = &ckpt.adam {
        tensors.extend(state.first.iter().map(|(n, t)| (format!("adam.m.{n}"), t)));
        tensors.extend(state.second.iter().map(|(n, t)| (format!("adam.v.{n}"), t)));
    }

    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in &tensors {
        put_tensor(&mut out, name, t);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(FormatError::Truncated {
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            });
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parsed header and tensor directory, without materializing tensor data.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointInfo {
    pub version: u16,
    pub meta: CheckpointMeta,
    pub tensors: Vec<(String, usize, usize)>,
}

fn parse(bytes: &[u8]) -> Result<(CheckpointInfo, IndexMap<String, Tensor2>), FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
    if magic != CHECKPOINT_MAGIC {
        return Err(FormatError::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(FormatError::Version {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    if bytes.len() < r.pos + DIGEST_LEN {
        return Err(FormatError::Truncated {
            expected: (r.pos + DIGEST_LEN) as u64,
            actual: bytes.len() as u64,
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(FormatError::Checksum);
    }
    let mut r = Reader { bytes: body, pos: r.pos };
    let meta_len = r.u32()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| FormatError::Malformed(format!("metadata: {e}")))?;
    let count = r.u32()? as usize;
    let mut tensors = IndexMap::with_capacity(count);
    let mut directory = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| FormatError::Malformed("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| FormatError::Malformed(format!("{name}: shape overflows")))?;
        let data = r
            .take(n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor2::new(rows, cols, data).expect("length matches shape");
        directory.push((name.clone(), rows, cols));
        if tensors.insert(name.clone(), t).is_some() {
            return Err(FormatError::Malformed(format!("duplicate tensor {name}")));
        }
    }
    if r.pos != body.len() {
        return Err(FormatError::Trailing {
            expected: (r.pos + DIGEST_LEN) as u64,
            actual: bytes.len() as u64,
        });
    }
    Ok((
        CheckpointInfo {
            version,
            meta,
            tensors: directory,
        },
        tensors,
    ))
}

pub fn inspect_checkpoint(bytes: &[u8]) -> Result<CheckpointInfo, FormatError> {
    parse(bytes).map(|(info, _)| info)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let (info, mut tensors) = parse(bytes)?;
    let mut params = ModelParams::new();
    let mut first = IndexMap::new();
    let mut second = IndexMap::new();
    for (name, t) in tensors.drain(..) {
        if let Some(n) = name.strip_prefix("param.") {
            params.insert(n, t);
        } else if let Some(n) = name.strip_prefix("adam.m.") {
            first.insert(n.to_string(), t);
        } else if let Some(n) = name.strip_prefix("adam.v.") {
            second.insert(n.to_string(), t);
        } else {
            return Err(FormatError::Malformed(format!("unexpected tensor {name}")));
        }
    }
    check_params(&params, &info.meta.model)
        .map_err(|e| FormatError::Malformed(format!("parameters do not match model config: {e}")))?;
    let adam = match info.meta.adam {
        Some(config) => {
            let tracks = |m: &IndexMap<String, Tensor2>| {
                m.len() == params.len()
                    && params
                        .iter()
                        .all(|(n, p)| m.get(n).is_some_and(|t| t.shape() == p.shape()))
            };
            if !tracks(&first) || !tracks(&second) {
                return Err(FormatError::Malformed(
                    "optimizer moments do not match parameters".into(),
                ));
            }
            Some(AdamState {
                config,
                step: info.meta.adam_step,
                first,
                second,
            })
        }
        None if first.is_empty() && second.is_empty() => None,
        None => return Err(FormatError::Malformed("moments without optimizer config".into())),
    };
    Ok(Checkpoint {
        meta: info.meta,
        params,
        adam,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, encode_checkpoint(ckpt)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}
