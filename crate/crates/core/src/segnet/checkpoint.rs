//! Checkpoint layout: `CDASEG`, a version byte, a little-endian `u32`
//! length and the architecture descriptor text, then three native tensors
//! (parameters, squared-gradient and squared-update accumulators).
//!
//! Tensors hold `f32`, so a save/load round trip rounds every value to
//! single precision.

use std::path::Path;

use super::model::{Arch, SegModel};
use super::OptimizerState;
use crate::error::{Error, Result};
use crate::raster::{decode_tensor, encode_tensor, read_file, write_file, DecodeError, Tensor};

const MAGIC: &[u8; 6] = b"CDASEG";
const VERSION: u8 = 1;

pub fn encode_checkpoint(model: &SegModel, state: &OptimizerState) -> Result<Vec<u8>> {
    let n = model.params.len();
    if state.accum_grad_sq.len() != n || state.accum_update_sq.len() != n {
        return Err(Error::Shape(
            "optimizer state does not match the model".into(),
        ));
    }
    let arch = model.arch.to_string();
    let mut out = Vec::with_capacity(16 + arch.len() + 3 * (4 * n + 10));
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(arch.len() as u32).to_le_bytes());
    out.extend_from_slice(arch.as_bytes());
    for v in [&model.params, &state.accum_grad_sq, &state.accum_update_sq] {
        encode_tensor(&Tensor::from_f64(vec![n], v)?, &mut out)?;
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(SegModel, OptimizerState), DecodeError> {
    if bytes.len() < 11 || &bytes[..6] != MAGIC {
        return Err(DecodeError::new(0, "expected checkpoint magic CDASEG"));
    }
    if bytes[6] != VERSION {
        return Err(DecodeError::new(
            6,
            format!("unsupported checkpoint version {}", bytes[6]),
        ));
    }
    let len = u32::from_le_bytes([bytes[7], bytes[8], bytes[9], bytes[10]]) as usize;
    let text = bytes
        .get(11..11 + len)
        .ok_or_else(|| DecodeError::new(11, "truncated architecture descriptor"))?;
    let arch: Arch = std::str::from_utf8(text)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| DecodeError::new(11, "malformed architecture descriptor"))?;
    let mut offset = 11 + len;
    let mut vectors = Vec::with_capacity(3);
    for _ in 0..3 {
        let at = offset;
        let t = decode_tensor(bytes, &mut offset)?;
        if t.shape != [arch.num_params()] {
            return Err(DecodeError::new(
                at,
                format!("tensor shape {:?} does not fit the architecture", t.shape),
            ));
        }
        vectors.push(t.to_f64());
    }
    if offset != bytes.len() {
        return Err(DecodeError::new(offset, "trailing bytes after checkpoint"));
    }
    let accum_update_sq = vectors.pop().unwrap();
    let accum_grad_sq = vectors.pop().unwrap();
    let params = vectors.pop().unwrap();
    if params.iter().any(|v| !v.is_finite()) {
        return Err(DecodeError::new(11 + len, "non-finite parameter"));
    }
    let state = OptimizerState {
        accum_grad_sq,
        accum_update_sq,
    };
    Ok((SegModel { arch, params }, state))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &SegModel,
    state: &OptimizerState,
) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(model, state)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(SegModel, OptimizerState)> {
    let path = path.as_ref();
    decode_checkpoint(&read_file(path)?).map_err(|e| e.at(path))
}
