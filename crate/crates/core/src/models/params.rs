use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array1;

use super::ModelSpec;
use crate::error::{Error, Result};

pub const PARAMS_MAGIC: &[u8; 8] = b"UNLPARAM";

/// A parameter vector tagged with the digest of the spec it belongs to.
///
/// On disk: the 8-byte magic, the 32-byte SHA-256 spec digest, the entry
/// count as little-endian `u64`, then the values as little-endian `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub spec_digest: [u8; 32],
    pub values: Array1<f64>,
}

impl ParamVector {
    pub fn new(spec: &ModelSpec, values: Array1<f64>) -> Result<Self> {
        let expected = spec.param_count()?;
        if values.len() != expected {
            return Err(Error::Shape(format!("θ has {} entries, spec needs {expected}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter construction".into()));
        }
        Ok(Self {
            spec_digest: spec.digest(),
            values,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(48 + 8 * self.values.len());
        out.extend_from_slice(PARAMS_MAGIC);
        out.extend_from_slice(&self.spec_digest);
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |d: &str| Error::format("parameter file", d.to_string());
        if bytes.len() < 48 || &bytes[..8] != PARAMS_MAGIC {
            return Err(err("bad magic"));
        }
        let spec_digest: [u8; 32] = bytes[8..40].try_into().expect("32 bytes");
        let len = u64::from_le_bytes(bytes[40..48].try_into().expect("8 bytes")) as usize;
        let body = &bytes[48..];
        if body.len() != len * 8 {
            return Err(err(&format!("expected {len} values, found {} bytes", body.len())));
        }
        let values: Array1<f64> = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Ok(Self { spec_digest, values })
    }

    /// Hex digest of the serialized bytes.
    pub fn content_digest(&self) -> String {
        crate::digest::sha256_hex(&self.to_bytes())
    }
}

pub fn write_params(mut w: impl Write, spec: &ModelSpec, theta: &Array1<f64>) -> Result<()> {
    let p = ParamVector::new(spec, theta.clone())?;
    w.write_all(&p.to_bytes())
        .map_err(|e| Error::io("<writer>", e))
}

/// Reads a parameter vector and checks that it was written for `spec`.
pub fn read_params(mut r: impl Read, spec: &ModelSpec) -> Result<Array1<f64>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io("<reader>", e))?;
    let p = ParamVector::from_bytes(&bytes)?;
    if p.spec_digest != spec.digest() {
        return Err(Error::format("parameter file", "spec digest does not match the model spec"));
    }
    if p.values.len() != spec.param_count()? {
        return Err(Error::format("parameter file", "length does not match the model spec"));
    }
    Ok(p.values)
}

pub fn save_params(path: impl AsRef<Path>, spec: &ModelSpec, theta: &Array1<f64>) -> Result<()> {
    let path = path.as_ref();
    let p = ParamVector::new(spec, theta.clone())?;
    std::fs::write(path, p.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>, spec: &ModelSpec) -> Result<Array1<f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_params(file, spec)
}
