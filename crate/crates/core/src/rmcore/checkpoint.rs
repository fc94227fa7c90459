//! Binary checkpoints.
//!
//! ```text
//! magic      [u8; 4]   "RMCK" (reward model) or "PLCY" (policy)
//! version    u32       = 1
//! input_dim  u32
//! n_layers   u32
//! widths     u32 × n_layers
//! n_params   u64
//! params     f64 × n_params, layer 0 weights (row-major), layer 0 bias, ..., head
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::io::Read;
use std::path::Path;

use super::{ModelDims, ModelError, RewardModelParams};
use crate::wire::{LeReader, LeWriter};

pub const RM_MAGIC: [u8; 4] = *b"RMCK";
pub const POLICY_MAGIC: [u8; 4] = *b"PLCY";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(params: &RewardModelParams, magic: [u8; 4]) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32 + params.values().len() * 8);
    let mut w = LeWriter::new(&mut buf);
    (|| -> std::io::Result<()> {
        w.bytes(&magic)?;
        w.u32(CHECKPOINT_VERSION)?;
        w.u32(params.dims().input_dim as u32)?;
        w.u32(params.dims().hidden.len() as u32)?;
        for &h in &params.dims().hidden {
            w.u32(h as u32)?;
        }
        w.u64(params.values().len() as u64)?;
        w.f64s(params.values())
    })()
    .expect("in-memory write");
    buf
}

pub fn decode_checkpoint<R: Read>(input: R, magic: [u8; 4]) -> Result<RewardModelParams, ModelError> {
    let mut r = LeReader::new(input);
    let got = r.array::<4>()?;
    if got != magic {
        return Err(ModelError::Format(format!(
            "expected magic {:?}, found {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(&got)
        )));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Format(format!("unsupported checkpoint version {version}")));
    }
    let input_dim = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    if n_layers > 64 {
        return Err(ModelError::Format(format!("implausible layer count {n_layers}")));
    }
    let hidden = (0..n_layers)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>, _>>()?;
    let dims = ModelDims { input_dim, hidden };
    dims.validate()?;
    let n = r.u64()? as usize;
    if n != dims.param_count() {
        return Err(ModelError::Format(format!(
            "parameter count {n} does not match dims ({})",
            dims.param_count()
        )));
    }
    let values = r.f64s(n)?;
    if !r.at_eof()? {
        return Err(ModelError::Format("trailing bytes".into()));
    }
    RewardModelParams::from_flat(dims, values)
}

pub fn save_checkpoint(path: &Path, params: &RewardModelParams, magic: [u8; 4]) -> Result<(), ModelError> {
    fs::write(path, encode_checkpoint(params, magic))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, magic: [u8; 4]) -> Result<RewardModelParams, ModelError> {
    let bytes = fs::read(path)?;
    decode_checkpoint(&bytes[..], magic)
}
