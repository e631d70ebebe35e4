//! Binary per-frame feature files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size      | field                              |
//! |--------|-----------|------------------------------------|
//! | 0      | 4         | magic `b"MF2F"`                    |
//! | 4      | 2         | version (`u16`, currently 1)       |
//! | 6      | 1         | modality (0 = visual, 1 = audio)   |
//! | 7      | 4         | frame count `T` (`u32`, ≥ 1)       |
//! | 11     | 4         | feature dimension `d` (`u32`, ≥ 1) |
//! | 15     | `T·d·4`   | `f32` payload, row-major           |
//!
//! Files with any trailing bytes past the payload are rejected.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::tensor::Tensor2;

pub const FEATURE_MAGIC: [u8; 4] = *b"MF2F";
pub const FEATURE_VERSION: u16 = 1;
pub const FEATURE_HEADER_LEN: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Visual,
    Audio,
}

impl Modality {
    pub fn tag(self) -> u8 {
        match self {
            Modality::Visual => 0,
            Modality::Audio => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Modality::Visual),
            1 => Some(Modality::Audio),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Visual => "visual",
            Modality::Audio => "audio",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A `T × d` sequence of per-frame features for one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    modality: Modality,
    frames: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureSequence {
    pub fn new(modality: Modality, frames: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if frames == 0 || dim == 0 {
            return Err(Error::contract(format!(
                "feature sequence needs T ≥ 1 and d ≥ 1, got {frames}x{dim}"
            )));
        }
        if frames > u32::MAX as usize || dim > u32::MAX as usize {
            return Err(Error::contract("feature dimensions exceed u32"));
        }
        if data.len() != frames * dim {
            return Err(Error::contract(format!(
                "feature payload has {} values, expected {}",
                data.len(),
                frames * dim
            )));
        }
        Ok(FeatureSequence {
            modality,
            frames,
            dim,
            data,
        })
    }

    pub fn from_tensor(modality: Modality, t: &Tensor2) -> Result<Self> {
        let data = t.data().iter().map(|&v| v as f32).collect();
        Self::new(modality, t.rows(), t.cols(), data)
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }

    /// Widened to `f64` for the model.
    pub fn to_tensor(&self) -> Tensor2 {
        Tensor2::new(
            self.frames,
            self.dim,
            self.data.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("shape checked at construction")
    }

    /// Same shape and modality, every value zero.
    pub fn zeroed(&self) -> FeatureSequence {
        FeatureSequence {
            data: vec![0.0; self.data.len()],
            ..self.clone()
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FEATURE_HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(&FEATURE_MAGIC);
        out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
        out.push(self.modality.tag());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FormatError> {
        let header = decode_header(bytes)?;
        let expected = FEATURE_HEADER_LEN as u64 + header.frames as u64 * header.dim as u64 * 4;
        let actual = bytes.len() as u64;
        if actual < expected {
            return Err(FormatError::Truncated { expected, actual });
        }
        if actual > expected {
            return Err(FormatError::Trailing { expected, actual });
        }
        let data = bytes[FEATURE_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(FeatureSequence {
            modality: header.modality,
            frames: header.frames as usize,
            dim: header.dim as usize,
            data,
        })
    }
}

/// Parsed fixed-size header of a feature file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureHeader {
    pub version: u16,
    pub modality: Modality,
    pub frames: u32,
    pub dim: u32,
}

pub fn decode_header(bytes: &[u8]) -> Result<FeatureHeader, FormatError> {
    if bytes.len() < FEATURE_HEADER_LEN {
        // Still report a bad magic if the bytes present already disagree.
        if bytes.len() >= 4 && bytes[..4] != FEATURE_MAGIC {
            return Err(bad_magic(&bytes[..4]));
        }
        return Err(FormatError::Truncated {
            expected: FEATURE_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    if bytes[..4] != FEATURE_MAGIC {
        return Err(bad_magic(&bytes[..4]));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FEATURE_VERSION {
        return Err(FormatError::Version {
            expected: FEATURE_VERSION,
            found: version,
        });
    }
    let modality = Modality::from_tag(bytes[6]).ok_or(FormatError::BadModality(bytes[6]))?;
    let frames = u32::from_le_bytes([bytes[7], bytes[8], bytes[9], bytes[10]]);
    let dim = u32::from_le_bytes([bytes[11], bytes[12], bytes[13], bytes[14]]);
    if frames == 0 || dim == 0 {
        return Err(FormatError::EmptyDims { frames, dim });
    }
    Ok(FeatureHeader {
        version,
        modality,
        frames,
        dim,
    })
}

fn bad_magic(found: &[u8]) -> FormatError {
    FormatError::BadMagic {
        expected: FEATURE_MAGIC,
        found: [found[0], found[1], found[2], found[3]],
    }
}

pub fn write_features(seq: &FeatureSequence, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, seq.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureSequence::decode(&bytes).map_err(|source| Error::Format {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a feature file and checks that it carries the expected modality.
pub fn read_features_expecting(
    path: impl AsRef<Path>,
    modality: Modality,
) -> Result<FeatureSequence> {
    let path = path.as_ref();
    let seq = read_features(path)?;
    if seq.modality != modality {
        return Err(Error::Format {
            path: path.to_path_buf(),
            source: FormatError::ModalityMismatch {
                expected: modality.name(),
                found: seq.modality.name(),
            },
        });
    }
    Ok(seq)
}
