//! Weights file: little-endian `u64` header length, a JSON header naming
//! every tensor and its shape, then all values as little-endian `f64`,
//! row-major, in header order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tape::Mat;
use super::{DenoiserConfig, DenoiserWeights};
use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

const FORMAT: &str = "humanslam-denoiser-weights";
const VERSION: u32 = 1;
/// Refuse absurd headers before allocating.
const MAX_HEADER: u64 = 1 << 26;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    config: DenoiserConfig,
    tensors: Vec<TensorEntry>,
}

pub fn write_weights<T: Real, W: Write>(out: &mut W, weights: &DenoiserWeights<T>) -> std::io::Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: VERSION,
        config: weights.config.clone(),
        tensors: weights.tensors.iter().map(|(n, m)| TensorEntry { name: n.clone(), shape: [m.nrows(), m.ncols()] }).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(std::io::Error::other)?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for m in weights.tensors.values() {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                out.write_all(&to_f64(m[(r, c)]).to_le_bytes())?;
            }
        }
    }
    Ok(())
}

/// Reads weights; `origin` names the source in error messages.
pub fn read_weights<T: Real, R: Read>(input: &mut R, origin: &str) -> Result<DenoiserWeights<T>> {
    let fmt = |msg: String| Error::format(origin, msg);
    let mut len = [0u8; 8];
    input.read_exact(&mut len).map_err(|e| fmt(format!("missing header length: {}", e)))?;
    let len = u64::from_le_bytes(len);
    if len > MAX_HEADER {
        return Err(fmt(format!("header length {} is implausible", len)));
    }
    let mut json = vec![0u8; len as usize];
    input.read_exact(&mut json).map_err(|e| fmt(format!("truncated header: {}", e)))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| fmt(format!("bad header: {}", e)))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(fmt(format!("unsupported format {} v{}", header.format, header.version)));
    }
    let mut tensors = BTreeMap::new();
    let mut buf = [0u8; 8];
    for e in &header.tensors {
        let [r, c] = e.shape;
        let mut m = Mat::zeros(r, c);
        for i in 0..r {
            for j in 0..c {
                input.read_exact(&mut buf).map_err(|err| fmt(format!("truncated data in {}: {}", e.name, err)))?;
                m[(i, j)] = lit(f64::from_le_bytes(buf));
            }
        }
        if tensors.insert(e.name.clone(), m).is_some() {
            return Err(fmt(format!("tensor {} listed twice", e.name)));
        }
    }
    let mut rest = Vec::new();
    input.read_to_end(&mut rest).map_err(|e| fmt(e.to_string()))?;
    if !rest.is_empty() {
        return Err(fmt(format!("{} trailing bytes", rest.len())));
    }
    let w = DenoiserWeights { config: header.config, tensors };
    w.validate().map_err(|e| fmt(e.to_string()))?;
    Ok(w)
}

pub fn save_weights<T: Real>(path: &Path, weights: &DenoiserWeights<T>) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path.display(), e))?;
    let mut w = std::io::BufWriter::new(f);
    write_weights(&mut w, weights).and_then(|_| w.flush()).map_err(|e| Error::io(path.display(), e))
}

pub fn load_weights<T: Real>(path: &Path) -> Result<DenoiserWeights<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path.display(), e))?;
    read_weights(&mut std::io::BufReader::new(f), &path.display().to_string())
}
