//! Binary model files.
//!
//! Layout, all integers little-endian `u32` unless noted:
//!
//! ```text
//! "SDAM"  version  architecture(1 = L-SDA, 2 = NL-SDA)  activation(0 = sigmoid, 1 = identity)  n  m
//! W₁ b₁ W₂ b₂ ...        row-major f64 little-endian, declared order
//! operator_present(0|1)
//! [ m  n  seed(u64)  Φ entries (f64, row-major) ]
//! ```
//!
//! Version 1 implies the generator named in [`crate::numeric::PRNG_ALGORITHM`],
//! so an embedded operator can be checked against its seed on load.

use std::fs;
use std::path::Path;

use crate::error::{ModelFormatError, Result};
use crate::measurement::LinearOperator;
use crate::model::{Activation, Architecture, Dense, LinearSda, NonlinearSda, SdaModel};
use crate::numeric::{Matrix, Vector};

pub const MAGIC: &[u8; 4] = b"SDAM";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_model(model: &SdaModel, operator: Option<&LinearOperator>) -> Vec<u8> {
    let layers = model.layers();
    let payload: usize = layers.iter().map(Dense::param_count).sum();
    let mut out = Vec::with_capacity(32 + 8 * payload);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    put_u32(&mut out, model.architecture().tag());
    let activation = match model {
        SdaModel::Linear(_) => Activation::Sigmoid,
        SdaModel::Nonlinear(m) => m.measurement_activation(),
    };
    put_u32(&mut out, activation.tag());
    put_u32(&mut out, model.n() as u32);
    put_u32(&mut out, model.m() as u32);
    for layer in layers {
        put_f64s(&mut out, layer.weights.as_slice());
        put_f64s(&mut out, layer.bias.as_slice());
    }
    match operator {
        None => put_u32(&mut out, 0),
        Some(op) => {
            put_u32(&mut out, 1);
            put_u32(&mut out, op.m() as u32);
            put_u32(&mut out, op.n() as u32);
            out.extend_from_slice(&op.seed().to_le_bytes());
            put_f64s(&mut out, op.phi().as_slice());
        }
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<(SdaModel, Option<LinearOperator>), ModelFormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(ModelFormatError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ModelFormatError::UnsupportedVersion(version));
    }
    let arch = match r.u32()? {
        1 => Architecture::Linear,
        2 => Architecture::Nonlinear,
        other => return Err(ModelFormatError::UnknownArchitecture(other)),
    };
    let act_tag = r.u32()?;
    let activation =
        Activation::from_tag(act_tag).ok_or(ModelFormatError::UnknownActivation(act_tag))?;
    if arch == Architecture::Linear && activation != Activation::Sigmoid {
        return Err(ModelFormatError::UnknownActivation(act_tag));
    }
    let n = r.u32()? as usize;
    let m = r.u32()? as usize;
    if m == 0 || m > n {
        return Err(ModelFormatError::DimensionInconsistency(format!(
            "N={n} M={m}"
        )));
    }

    let shapes: &[(usize, usize)] = match arch {
        Architecture::Linear => &[(n, m), (m, n), (n, m)],
        Architecture::Nonlinear => &[(m, n), (n, m), (m, n), (n, m)],
    };
    let mut layers = Vec::with_capacity(shapes.len());
    for (i, &(rows, cols)) in shapes.iter().enumerate() {
        let weights = Matrix::from_vec(rows, cols, r.f64s(rows * cols)?)
            .map_err(|e| ModelFormatError::DimensionInconsistency(e.to_string()))?;
        let bias = Vector::from(r.f64s(rows)?);
        let act = if arch == Architecture::Nonlinear && i == 0 {
            activation
        } else {
            Activation::Sigmoid
        };
        layers.push(Dense {
            weights,
            bias,
            activation: act,
        });
    }
    let model = match arch {
        Architecture::Linear => LinearSda::from_layers(n, m, layers).map(SdaModel::Linear),
        Architecture::Nonlinear => NonlinearSda::from_layers(n, m, layers).map(SdaModel::Nonlinear),
    }
    .map_err(|e| ModelFormatError::DimensionInconsistency(e.to_string()))?;

    let operator = match r.u32()? {
        0 => None,
        1 => {
            let om = r.u32()? as usize;
            let on = r.u32()? as usize;
            let seed = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            if om != m || on != n {
                return Err(ModelFormatError::DimensionInconsistency(format!(
                    "operator is {om}x{on}, model expects {m}x{n}"
                )));
            }
            let phi = Matrix::from_vec(om, on, r.f64s(om * on)?)
                .map_err(|e| ModelFormatError::DimensionInconsistency(e.to_string()))?;
            let op = LinearOperator::from_matrix(phi, seed)
                .map_err(|e| ModelFormatError::DimensionInconsistency(e.to_string()))?;
            if !op.matches_seed() {
                return Err(ModelFormatError::OperatorMismatch);
            }
            Some(op)
        }
        other => {
            return Err(ModelFormatError::DimensionInconsistency(format!(
                "operator flag must be 0 or 1, found {other}"
            )))
        }
    };
    let rest = bytes.len() - r.pos;
    if rest != 0 {
        return Err(ModelFormatError::TrailingBytes(rest));
    }
    Ok((model, operator))
}

pub fn save_model(
    model: &SdaModel,
    operator: Option<&LinearOperator>,
    path: impl AsRef<Path>,
) -> Result<()> {
    fs::write(path, encode_model(model, operator))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(SdaModel, Option<LinearOperator>)> {
    let bytes = fs::read(path)?;
    Ok(decode_model(&bytes)?)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8], ModelFormatError> {
        let end = self
            .pos
            .checked_add(len)
            .ok_or(ModelFormatError::Truncated)?;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or(ModelFormatError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, ModelFormatError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>, ModelFormatError> {
        let len = count.checked_mul(8).ok_or(ModelFormatError::Truncated)?;
        let raw = self.take(len)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}
