use std::fmt;

use super::{decode_model, encode_model_traced, CodecConfig};
use crate::error::{Error, Result};
use crate::model::TensorId;
use crate::Model;

/// Absolute-error histogram over `[0, max]` in equal-width bins. Errors
/// that are not finite land in the last bin.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub max: f64,
}

impl Histogram {
    /// Collapses to a single bin when every error is zero.
    fn build(errors: &[f64], bins: usize) -> Self {
        let max = errors
            .iter()
            .copied()
            .filter(|e| e.is_finite())
            .fold(0.0, f64::max);
        let bins = if max > 0.0 || errors.iter().any(|e| !e.is_finite()) {
            bins.max(1)
        } else {
            1
        };
        let width = if max > 0.0 { max / bins as f64 } else { 0.0 };
        let edges = (0..=bins).map(|i| i as f64 * width).collect();
        let mut counts = vec![0u64; bins];
        for &e in errors {
            let bin = if !e.is_finite() {
                bins - 1
            } else if width > 0.0 {
                ((e / width) as usize).min(bins - 1)
            } else {
                0
            };
            counts[bin] += 1;
        }
        let max = if errors.iter().all(|e| e.is_finite()) {
            max
        } else {
            f64::INFINITY
        };
        Self { edges, counts, max }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Cumulative fraction at the upper edge of each bin.
    pub fn cdf(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        let mut acc = 0;
        self.counts
            .iter()
            .map(|&c| {
                acc += c;
                acc as f64 / total
            })
            .collect()
    }
}

/// Error distribution of a decoded model against its reference.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorStats {
    pub aggregate: Histogram,
    pub per_tensor: Vec<(TensorId, Histogram)>,
    sorted: Vec<f64>,
}

impl ErrorStats {
    /// Exact empirical CDF: the fraction of entries with error `<= x`.
    pub fn fraction_within(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return 1.0;
        }
        self.sorted.partition_point(|&e| e <= x) as f64 / self.sorted.len() as f64
    }

    pub fn max_error(&self) -> f64 {
        self.aggregate.max
    }
}

impl fmt::Display for ErrorStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# tensor bin_lo bin_hi count cdf")?;
        let rows = std::iter::once(("all".to_string(), &self.aggregate))
            .chain(self.per_tensor.iter().map(|(id, h)| (id.to_string(), h)));
        for (name, h) in rows {
            for (i, (count, cdf)) in h.counts.iter().zip(h.cdf()).enumerate() {
                writeln!(
                    f,
                    "{name} {:e} {:e} {count} {cdf:.6}",
                    h.edges[i],
                    h.edges[i + 1]
                )?;
            }
        }
        Ok(())
    }
}

pub fn error_stats(reference: &Model, decoded: &Model, bins: usize) -> Result<ErrorStats> {
    if reference.dims != decoded.dims {
        return Err(Error::DimensionMismatch(
            "models have different dims".into(),
        ));
    }
    let mut all = Vec::new();
    let mut per_tensor = Vec::new();
    for ((id, a), (_, b)) in reference.tensors().into_iter().zip(decoded.tensors()) {
        let errs: Vec<f64> = a
            .as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| {
                let e = (x - y).abs();
                if e.is_nan() {
                    f64::INFINITY
                } else {
                    e
                }
            })
            .collect();
        per_tensor.push((id, Histogram::build(&errs, bins)));
        all.extend(errs);
    }
    let aggregate = Histogram::build(&all, bins);
    all.sort_by(f64::total_cmp);
    Ok(ErrorStats {
        aggregate,
        per_tensor,
        sorted: all,
    })
}

/// One point of the correction tradeoff curve.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub threshold: f64,
    pub correction_bits: u64,
    pub correction_records: usize,
    /// Largest decoded-weight error against the canonical reference.
    pub max_residual: f64,
    pub saved_ratio: f64,
}

/// Encodes and decodes once per threshold. Each threshold replaces
/// `tau_weights`; `tau_stream` is scaled along with it, keeping the ratio
/// of `cfg`.
pub fn threshold_sweep(
    model: &Model,
    cfg: &CodecConfig,
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>> {
    cfg.validate()?;
    let ratio = cfg.tau_stream / cfg.tau_weights;
    thresholds
        .iter()
        .map(|&t| {
            let cfg = CodecConfig {
                tau_weights: t,
                tau_stream: t * ratio,
                ..*cfg
            };
            let out = encode_model_traced(model, &cfg)?;
            let decoded = decode_model(&out.container)?;
            let report = out.container.report();
            Ok(SweepPoint {
                threshold: t,
                correction_bits: report.correction_bits,
                correction_records: report.correction_records,
                max_residual: decoded.max_abs_diff(&out.reference)?,
                saved_ratio: report.saved_ratio,
            })
        })
        .collect()
}
