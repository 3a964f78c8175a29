//! SBB1 files.
//!
//! Header (little-endian): magic, version, the six dims words of SWC1,
//! `delta` and `lambda_width` as u32, both thresholds as f64, and the
//! payload bit length as u64. A directory follows with one entry per
//! `(layer, site, region)` in [`sections`](super::sections) order: the
//! region tag (u8) and the record count (u32). The rest is one bit string:
//! the payload, then every record as its index in `⌈log₂ L⌉` bits and its
//! 16-bit value, padded with zeros to a whole byte.

use std::path::Path;

use super::{
    correction_record_bits, index_bits, sections, CodecConfig, CorrectionRecord, EncodedContainer,
};
use crate::bitstream::BitStack;
use crate::error::{Error, Result};
use crate::model::format::{read_dims, read_u32, write_dims};
use crate::model::ModelDims;
use crate::numerics::SymbolWidth;

pub const SBB1_MAGIC: &[u8; 4] = b"SBB1";
const VERSION: u32 = 1;
const HEADER_BYTES: usize = 4 + 4 + 24 + 4 + 4 + 8 + 8 + 8;
const DIRECTORY_ENTRY_BYTES: usize = 1 + 4;

/// Bytes of header plus directory; everything else is payload, records
/// and fewer than 8 padding bits.
pub fn fixed_overhead_bytes(dims: &ModelDims) -> usize {
    HEADER_BYTES + 4 * dims.layers * DIRECTORY_ENTRY_BYTES
}

pub(crate) fn to_bytes(c: &EncodedContainer) -> Vec<u8> {
    let mut out =
        Vec::with_capacity(fixed_overhead_bytes(&c.dims) + c.payload.bit_length() / 8 + 1);
    out.extend_from_slice(SBB1_MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    write_dims(&mut out, &c.dims);
    out.extend_from_slice(&c.config.delta.to_le_bytes());
    out.extend_from_slice(&c.config.lambda_width.bits().to_le_bytes());
    out.extend_from_slice(&c.config.tau_weights.to_le_bytes());
    out.extend_from_slice(&c.config.tau_stream.to_le_bytes());
    out.extend_from_slice(&(c.payload.bit_length() as u64).to_le_bytes());

    let mut blob = c.payload.clone();
    for (layer, site, region) in sections(&c.dims) {
        let records: Vec<_> = c.section(layer, site, region).collect();
        out.push(region.tag());
        out.extend_from_slice(&(records.len() as u32).to_le_bytes());
        let bits = index_bits(region.len(&c.dims, site)) as usize;
        for r in records {
            blob.append_bits(r.index as u64, bits);
            blob.append_bits(r.value as u64, 16);
        }
    }
    out.extend_from_slice(&blob.serialize());
    out
}

fn read_u64(bytes: &[u8], at: &mut usize) -> Result<u64> {
    let lo = read_u32(bytes, at)? as u64;
    let hi = read_u32(bytes, at)? as u64;
    Ok(lo | hi << 32)
}

fn read_f64(bytes: &[u8], at: &mut usize) -> Result<f64> {
    read_u64(bytes, at).map(f64::from_bits)
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<EncodedContainer> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedFile);
    }
    if &bytes[..4] != SBB1_MAGIC {
        return Err(Error::BadMagic { expected: "SBB1" });
    }
    let mut at = 4;
    let version = read_u32(bytes, &mut at)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dims = read_dims(bytes, &mut at)?;
    let delta = read_u32(bytes, &mut at)?;
    let lambda_width = SymbolWidth::try_from(read_u32(bytes, &mut at)?)
        .map_err(|_| Error::BadContainer("lambda width must be 16 or 32".into()))?;
    let config = CodecConfig {
        delta,
        lambda_width,
        tau_weights: read_f64(bytes, &mut at)?,
        tau_stream: read_f64(bytes, &mut at)?,
    };
    config
        .validate()
        .map_err(|e| Error::BadContainer(e.to_string()))?;
    let bit_length = read_u64(bytes, &mut at)?;

    let mut counts = Vec::new();
    let mut total_bits = bit_length;
    for (layer, site, region) in sections(&dims) {
        let tag = *bytes.get(at).ok_or(Error::TruncatedFile)?;
        at += 1;
        if tag != region.tag() {
            return Err(Error::BadContainer(format!(
                "section for layer {layer} {} has tag {tag}, expected {}",
                site.name(),
                region.tag()
            )));
        }
        let count = read_u32(bytes, &mut at)? as usize;
        let len = region.len(&dims, site);
        if count > len {
            return Err(Error::BadContainer(format!(
                "{count} records for a region of {len}"
            )));
        }
        total_bits += count as u64 * correction_record_bits(len);
        counts.push(count);
    }

    let rest = &bytes[at..];
    let needed = total_bits.div_ceil(8);
    if (rest.len() as u64) < needed {
        return Err(Error::TruncatedFile);
    }
    if rest.len() as u64 > needed {
        return Err(Error::BadContainer(format!(
            "{} trailing bytes",
            rest.len() as u64 - needed
        )));
    }
    let mut blob = BitStack::deserialize(rest, total_bits)?;
    let mut offset = bit_length as usize;
    let mut corrections = Vec::new();
    for ((layer, site, region), count) in sections(&dims).zip(counts) {
        let bits = index_bits(region.len(&dims, site)) as usize;
        for _ in 0..count {
            let index = blob.read_bits(offset, bits) as u32;
            let value = blob.read_bits(offset + bits, 16) as u16;
            offset += bits + 16;
            corrections.push(CorrectionRecord {
                region,
                layer,
                site,
                index,
                value,
            });
        }
    }
    blob.truncate(bit_length as usize);
    let container = EncodedContainer {
        dims,
        config,
        payload: blob,
        corrections,
    };
    container.validate()?;
    Ok(container)
}

pub fn save_container(c: &EncodedContainer, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(c))?;
    Ok(())
}

pub fn load_container(path: impl AsRef<Path>) -> Result<EncodedContainer> {
    from_bytes(&std::fs::read(path)?)
}
