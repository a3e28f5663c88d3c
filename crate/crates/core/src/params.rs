//! Flat parameter vectors and their on-disk checkpoint format.
//!
//! A checkpoint is the 4-byte magic `FPV1`, the dimension as a little-endian
//! `u64`, then `dim` little-endian IEEE-754 binary64 values. Nothing else.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FPV1";

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("weight count {weights} does not match model count {models}")]
    WeightCountMismatch { models: usize, weights: usize },
    #[error("non-finite weight {value} at index {index}")]
    NonFiniteWeight { index: usize, value: f64 },
    #[error("non-finite parameter {value} at index {index}")]
    NonFiniteValue { index: usize, value: f64 },
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// Immutable, non-empty vector of finite model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParameterVector {
    values: Vec<f64>,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self, ParamsError> {
        if values.is_empty() {
            return Err(ParamsError::EmptyInput);
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(ParamsError::NonFiniteValue { index, value });
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Result<Self, ParamsError> {
        Self::new(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.values
    }

    pub fn max_abs_diff(&self, other: &ParameterVector) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for ParameterVector {
    type Error = ParamsError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<ParameterVector> for Vec<f64> {
    fn from(p: ParameterVector) -> Self {
        p.values
    }
}

impl AsRef<[f64]> for ParameterVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// `Σ_j weights[j] · models[j]`, accumulated in ascending model index.
///
/// Weights may be negative; the result must still be finite.
pub fn weighted_sum<M: AsRef<ParameterVector>>(models: &[M], weights: &[f64]) -> Result<ParameterVector, ParamsError> {
    let first = models.first().ok_or(ParamsError::EmptyInput)?.as_ref();
    if weights.len() != models.len() {
        return Err(ParamsError::WeightCountMismatch { models: models.len(), weights: weights.len() });
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite()) {
        return Err(ParamsError::NonFiniteWeight { index, value });
    }
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for (model, &w) in models.iter().zip(weights) {
        let model = model.as_ref();
        if model.dim() != dim {
            return Err(ParamsError::DimensionMismatch { expected: dim, actual: model.dim() });
        }
        for (a, x) in acc.iter_mut().zip(model.as_slice()) {
            *a += w * x;
        }
    }
    ParameterVector::new(acc)
}

impl AsRef<ParameterVector> for ParameterVector {
    fn as_ref(&self) -> &ParameterVector {
        self
    }
}

pub fn encode_checkpoint(model: &ParameterVector) -> Vec<u8> {
    let mut buf = Vec::with_capacity(12 + 8 * model.dim());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(model.dim() as u64).to_le_bytes());
    for v in model.as_slice() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ParameterVector, ParamsError> {
    let (magic, rest) = bytes.split_first_chunk::<4>().ok_or_else(|| ParamsError::Format("truncated header".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(ParamsError::Format(format!("bad magic {magic:02x?}")));
    }
    let (dim, payload) = rest.split_first_chunk::<8>().ok_or_else(|| ParamsError::Format("truncated header".into()))?;
    let dim = u64::from_le_bytes(*dim);
    if dim == 0 {
        return Err(ParamsError::Format("zero dimension".into()));
    }
    let expected = dim
        .checked_mul(8)
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| ParamsError::Format(format!("dimension {dim} too large")))?;
    if payload.len() != expected {
        return Err(ParamsError::Format(format!(
            "payload is {} bytes, expected {expected} for dim {dim}",
            payload.len()
        )));
    }
    let values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect();
    ParameterVector::new(values).map_err(|e| ParamsError::Format(e.to_string()))
}

pub fn checkpoint_write(model: &ParameterVector, path: impl AsRef<Path>) -> Result<(), ParamsError> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn checkpoint_read(path: impl AsRef<Path>) -> Result<ParameterVector, ParamsError> {
    decode_checkpoint(&fs::read(path)?)
}
