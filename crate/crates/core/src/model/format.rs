use std::path::Path;

use super::{ModelDims, SlicedTransformer};
use crate::error::{Error, Result};
use crate::numerics::{half_decode, half_encode};

pub const SWC1_MAGIC: &[u8; 4] = b"SWC1";
const VERSION: u32 = 1;
/// Magic, version, five dims and flags.
pub const SWC1_HEADER_BYTES: usize = 4 + 4 + 5 * 4 + 4;

pub(crate) fn read_u32(bytes: &[u8], at: &mut usize) -> Result<u32> {
    let end = *at + 4;
    let chunk = bytes.get(*at..end).ok_or(Error::TruncatedFile)?;
    *at = end;
    Ok(u32::from_le_bytes(chunk.try_into().expect("four bytes")))
}

pub(crate) fn write_dims(out: &mut Vec<u8>, dims: &ModelDims) {
    for v in [dims.layers, dims.hidden, dims.ffn, dims.vocab, dims.seq] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&u32::from(dims.has_biases).to_le_bytes());
}

pub(crate) fn read_dims(bytes: &[u8], at: &mut usize) -> Result<ModelDims> {
    let mut v = [0usize; 5];
    for slot in &mut v {
        *slot = read_u32(bytes, at)? as usize;
    }
    let flags = read_u32(bytes, at)?;
    if flags & !1 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "unknown flag bits {flags:#x}"
        )));
    }
    let dims = ModelDims {
        layers: v[0],
        hidden: v[1],
        ffn: v[2],
        vocab: v[3],
        seq: v[4],
        has_biases: flags & 1 == 1,
    };
    dims.validate()
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok(dims)
}

/// Serializes with every entry rounded to binary16.
pub fn to_swc1_bytes(model: &SlicedTransformer<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(SWC1_HEADER_BYTES + 2 * model.dims.param_count());
    out.extend_from_slice(SWC1_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    write_dims(&mut out, &model.dims);
    for (_, t) in model.tensors() {
        for &x in t.as_slice() {
            out.extend_from_slice(&half_encode(x).to_le_bytes());
        }
    }
    out
}

pub fn from_swc1_bytes(bytes: &[u8]) -> Result<SlicedTransformer<f64>> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile);
    }
    if &bytes[..4] != SWC1_MAGIC {
        return Err(Error::BadMagic { expected: "SWC1" });
    }
    let mut at = 4;
    let version = read_u32(bytes, &mut at)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dims = read_dims(bytes, &mut at)?;
    let body = dims
        .param_count()
        .checked_mul(2)
        .ok_or_else(|| Error::ShapeMismatch("model too large".into()))?;
    let rest = &bytes[at..];
    if rest.len() < body {
        return Err(Error::TruncatedFile);
    }
    if rest.len() > body {
        return Err(Error::ShapeMismatch(format!(
            "{} trailing bytes after tensors",
            rest.len() - body
        )));
    }
    let mut model = SlicedTransformer::zeros(&dims)?;
    let ids: Vec<_> = model.tensors().into_iter().map(|(id, _)| id).collect();
    let mut halves = rest
        .chunks_exact(2)
        .map(|c| half_decode(u16::from_le_bytes([c[0], c[1]])));
    for id in ids {
        let t = model.tensor_mut(id).expect("listed tensor");
        for (slot, v) in t.as_mut_slice().iter_mut().zip(&mut halves) {
            *slot = v;
        }
    }
    Ok(model)
}

pub fn save_weights(model: &SlicedTransformer<f64>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_swc1_bytes(model))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<SlicedTransformer<f64>> {
    from_swc1_bytes(&std::fs::read(path)?)
}
