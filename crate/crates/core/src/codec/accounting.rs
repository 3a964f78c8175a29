use std::fmt;

use super::container::fixed_overhead_bytes;
use super::{CodecConfig, DELTA};
use crate::model::ModelDims;

/// Bits of a correction position in a region of `len` entries, `⌈log₂ len⌉`.
pub fn index_bits(len: usize) -> u32 {
    if len <= 1 {
        0
    } else {
        usize::BITS - (len - 1).leading_zeros()
    }
}

/// One correction: its position plus a 16-bit value.
pub fn correction_record_bits(region_len: usize) -> u64 {
    DELTA as u64 + index_bits(region_len) as u64
}

/// Net bits saved by one rotation: `D(D+1)/2` popped entries against `D`
/// eigenvalues and `D` sign bits pushed. With `lambda_width = δ` this is
/// `D(D-1)/2·δ − D`.
pub fn per_rotation_net_saving(d: usize, cfg: &CodecConfig) -> i64 {
    let d = d as i64;
    d * (d + 1) / 2 * DELTA as i64 - d * cfg.lambda_width.bits() as i64 - d
}

/// Payload length (signs included) for any model of these dims.
pub fn predicted_bit_length(dims: &ModelDims, cfg: &CodecConfig) -> u64 {
    let naive = DELTA as i64 * dims.param_count() as i64;
    let rotations = 2 * dims.layers as i64;
    (naive - rotations * per_rotation_net_saving(dims.hidden, cfg)) as u64
}

/// Block-only saving ratio under the idealized count: `2L` rotations of
/// width `rD` on blocks of `6rD² + 2(rD)²` parameters, eigenvalues at `δ`
/// bits and signs free. Tends to `r / (6 + 2r)` as `D` grows.
pub fn headless_ratio(r: f64, d: usize) -> f64 {
    let d = d as f64;
    let rd = r * d;
    rd * (rd - 1.0) / (6.0 * r * d * d + 2.0 * rd * rd)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodelengthReport {
    /// `16 ×` parameter count.
    pub naive_bits: u64,
    /// Payload without its sign bits (eigenvalue symbols included).
    pub payload_bits: u64,
    pub sign_bits: u64,
    /// Eigenvalue symbols pushed back, `2L·D·lambda_width`.
    pub lambda_overhead_bits: u64,
    pub correction_bits: u64,
    pub correction_records: usize,
    /// Container header and correction directory.
    pub fixed_overhead_bits: u64,
    pub saved_bits: i64,
    pub saved_ratio: f64,
    /// Block-only ratio with eigenvalues at `δ` bits and signs ignored,
    /// for these block shapes.
    pub predicted_ratio_headless: f64,
    pub per_rotation_net_saving: i64,
}

pub(crate) fn report_for(
    dims: &ModelDims,
    cfg: &CodecConfig,
    bit_length: u64,
    correction_bits: u64,
    correction_records: usize,
) -> CodelengthReport {
    let naive_bits = DELTA as u64 * dims.param_count() as u64;
    let rotations = 2 * dims.layers as u64;
    let sign_bits = rotations * dims.hidden as u64;
    let fixed_overhead_bits = 8 * fixed_overhead_bytes(dims) as u64;
    let spent = bit_length + correction_bits + fixed_overhead_bits;
    let saved_bits = naive_bits as i64 - spent as i64;
    let d = dims.hidden as f64;
    CodelengthReport {
        naive_bits,
        payload_bits: bit_length - sign_bits,
        sign_bits,
        lambda_overhead_bits: rotations * dims.hidden as u64 * cfg.lambda_width.bits() as u64,
        correction_bits,
        correction_records,
        fixed_overhead_bits,
        saved_bits,
        saved_ratio: saved_bits as f64 / naive_bits as f64,
        predicted_ratio_headless: d * (d - 1.0) / dims.block_params() as f64,
        per_rotation_net_saving: per_rotation_net_saving(dims.hidden, cfg),
    }
}

/// Closed-form report before any correction is known.
pub fn accounting(dims: &ModelDims, cfg: &CodecConfig) -> CodelengthReport {
    report_for(dims, cfg, predicted_bit_length(dims, cfg), 0, 0)
}

impl fmt::Display for CodelengthReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "naive_bits = {}", self.naive_bits)?;
        writeln!(f, "payload_bits = {}", self.payload_bits)?;
        writeln!(f, "sign_bits = {}", self.sign_bits)?;
        writeln!(f, "lambda_overhead_bits = {}", self.lambda_overhead_bits)?;
        writeln!(f, "correction_bits = {}", self.correction_bits)?;
        writeln!(f, "correction_records = {}", self.correction_records)?;
        writeln!(f, "fixed_overhead_bits = {}", self.fixed_overhead_bits)?;
        writeln!(f, "saved_bits = {}", self.saved_bits)?;
        writeln!(f, "saved_ratio = {:.6}", self.saved_ratio)?;
        writeln!(
            f,
            "predicted_ratio_headless = {:.6}",
            self.predicted_ratio_headless
        )?;
        writeln!(
            f,
            "per_rotation_net_saving = {}",
            self.per_rotation_net_saving
        )
    }
}
