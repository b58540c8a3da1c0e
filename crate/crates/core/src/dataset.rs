//! Patch dataset files: `"SDAP"`, then `version`, `patch_size` and `count` as
//! little-endian `u32`, then `count · patch_size²` little-endian `f64` values,
//! one patch after another.

use std::fs;
use std::path::Path;

use crate::error::{DatasetFormatError, Error, Result};
use crate::numeric::Matrix;

pub const MAGIC: &[u8; 4] = b"SDAP";
pub const FORMAT_VERSION: u32 = 1;

/// Patches of one size, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchDataset {
    pub patch_size: usize,
    pub patches: Matrix,
}

impl PatchDataset {
    pub fn new(patch_size: usize, patches: Matrix) -> Result<Self> {
        if patches.cols() != patch_size * patch_size {
            return Err(Error::mismatch(
                "dataset patch dimension",
                patch_size * patch_size,
                patches.cols(),
            ));
        }
        if let Some(&bad) = patches
            .as_slice()
            .iter()
            .find(|v| !(0.0..=1.0).contains(*v))
        {
            return Err(DatasetFormatError::ValueOutOfRange(bad).into());
        }
        Ok(PatchDataset {
            patch_size,
            patches,
        })
    }

    pub fn len(&self) -> usize {
        self.patches.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.rows() == 0
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 8 * self.patches.as_slice().len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.patch_size as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for v in self.patches.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DatasetFormatError> {
        if bytes.len() < 16 {
            return Err(if bytes.len() >= 4 && &bytes[..4] != MAGIC {
                DatasetFormatError::BadMagic
            } else {
                DatasetFormatError::Truncated
            });
        }
        if &bytes[..4] != MAGIC {
            return Err(DatasetFormatError::BadMagic);
        }
        let word =
            |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
        let version = word(4) as u32;
        if version != FORMAT_VERSION {
            return Err(DatasetFormatError::UnsupportedVersion(version));
        }
        let patch_size = word(8);
        let count = word(12);
        let values = count
            .checked_mul(patch_size * patch_size)
            .ok_or(DatasetFormatError::Truncated)?;
        let body = &bytes[16..];
        if body.len() != values * 8 {
            return Err(DatasetFormatError::Truncated);
        }
        let mut data = Vec::with_capacity(values);
        for chunk in body.chunks_exact(8) {
            let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if !(0.0..=1.0).contains(&v) {
                return Err(DatasetFormatError::ValueOutOfRange(v));
            }
            data.push(v);
        }
        let patches =
            Matrix::from_vec(count, patch_size * patch_size, data).expect("length checked");
        Ok(PatchDataset {
            patch_size,
            patches,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::decode(&fs::read(path)?)?)
    }
}
