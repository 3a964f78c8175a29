//! Whole-model bits-back coding with a correction side channel.
//!
//! The encoder canonicalizes the model, then walks the tensors in storage
//! order pushing binary16 patterns. At each of the `2L` rotation sites it
//! decodes a rotation from the top of the message, stores the rotated
//! weight in its place, and records where the decoder's reconstruction
//! will miss: entries of the back-rotated weight (region `weight`) and
//! entries of the restored symmetric matrix (region `stream_x`). Those
//! corrections travel beside the payload, so the payload length depends on
//! the dims and config alone.

mod accounting;
mod container;
mod engine;
mod stats;

use crate::error::{Error, Result};
use crate::model::{ModelDims, Site};
use crate::numerics::SymbolWidth;

pub use accounting::{
    accounting, correction_record_bits, headless_ratio, index_bits, per_rotation_net_saving,
    predicted_bit_length, CodelengthReport,
};
pub use container::{fixed_overhead_bytes, load_container, save_container, SBB1_MAGIC};
pub use engine::{decode_model, encode_model, encode_model_traced, EncodeOutput};
pub use stats::{error_stats, threshold_sweep, ErrorStats, Histogram, SweepPoint};

/// Fixed payload symbol width.
pub const DELTA: u32 = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CodecConfig {
    pub delta: u32,
    pub lambda_width: SymbolWidth,
    /// Largest tolerated error of a decoded weight.
    pub tau_weights: f64,
    /// Largest tolerated error of a restored matrix entry, in fixed-point
    /// value units.
    pub tau_stream: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            delta: DELTA,
            lambda_width: SymbolWidth::W32,
            tau_weights: 0.01,
            tau_stream: 2f64.powi(-13),
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.delta != DELTA {
            return Err(Error::InvalidConfig(format!(
                "delta must be {DELTA}, got {}",
                self.delta
            )));
        }
        if self.lambda_width == SymbolWidth::W1 {
            return Err(Error::InvalidConfig("lambda width must be 16 or 32".into()));
        }
        for (name, t) in [
            ("tau_weights", self.tau_weights),
            ("tau_stream", self.tau_stream),
        ] {
            if !(t > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be positive, got {t}"
                )));
            }
        }
        Ok(())
    }
}

/// Where a correction applies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    /// Slot of the restored symmetric matrix; value is a 16-bit symbol.
    StreamX,
    /// Flat entry of the canonical `W_o` / `W₂`; value is a binary16 pattern.
    Weight,
}

impl Region {
    pub fn tag(self) -> u8 {
        match self {
            Region::StreamX => 0,
            Region::Weight => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::StreamX => "stream_x",
            Region::Weight => "weight",
        }
    }

    /// Number of addressable entries at `site`.
    pub fn len(self, dims: &ModelDims, site: Site) -> usize {
        let d = dims.hidden;
        match (self, site) {
            (Region::StreamX, _) => d * (d + 1) / 2,
            (Region::Weight, Site::AttOut) => d * d,
            (Region::Weight, Site::MlpOut) => dims.ffn * d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CorrectionRecord {
    pub region: Region,
    /// 1-based layer.
    pub layer: usize,
    pub site: Site,
    pub index: u32,
    pub value: u16,
}

/// Every `(layer, site, region)` section in container order.
pub fn sections(dims: &ModelDims) -> impl Iterator<Item = (usize, Site, Region)> {
    (1..=dims.layers).flat_map(|layer| {
        [Site::AttOut, Site::MlpOut]
            .into_iter()
            .flat_map(move |site| [Region::StreamX, Region::Weight].map(|r| (layer, site, r)))
    })
}

fn section_key(r: &CorrectionRecord) -> (usize, u8, u8, u32) {
    let site = match r.site {
        Site::AttOut => 0,
        Site::MlpOut => 1,
    };
    (r.layer, site, r.region.tag(), r.index)
}

/// A coded model: payload plus corrections and the parameters needed to
/// decode it.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedContainer {
    pub dims: ModelDims,
    pub config: CodecConfig,
    pub payload: crate::bitstream::BitStack,
    /// Sorted by layer, site, region, then strictly increasing index.
    pub corrections: Vec<CorrectionRecord>,
}

impl EncodedContainer {
    /// Checks config, payload length and correction ordering.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        self.config.validate()?;
        let expected = predicted_bit_length(&self.dims, &self.config);
        if self.payload.bit_length() as u64 != expected {
            return Err(Error::BadContainer(format!(
                "payload has {} bits, dims imply {expected}",
                self.payload.bit_length()
            )));
        }
        for r in &self.corrections {
            if r.layer == 0 || r.layer > self.dims.layers {
                return Err(Error::BadContainer(format!(
                    "correction for layer {}",
                    r.layer
                )));
            }
            if r.index as usize >= r.region.len(&self.dims, r.site) {
                return Err(Error::BadContainer(format!(
                    "correction index {} outside {} region at layer {} {}",
                    r.index,
                    r.region.name(),
                    r.layer,
                    r.site.name()
                )));
            }
        }
        if self
            .corrections
            .windows(2)
            .any(|w| section_key(&w[0]) >= section_key(&w[1]))
        {
            return Err(Error::BadContainer(
                "corrections not strictly ordered".into(),
            ));
        }
        Ok(())
    }

    pub fn section(
        &self,
        layer: usize,
        site: Site,
        region: Region,
    ) -> impl Iterator<Item = &CorrectionRecord> {
        self.corrections
            .iter()
            .filter(move |r| r.layer == layer && r.site == site && r.region == region)
    }

    /// Sign bits inside the payload, `2·L·D`.
    pub fn sign_bits(&self) -> u64 {
        2 * (self.dims.layers * self.dims.hidden) as u64
    }

    pub fn correction_bits(&self) -> u64 {
        self.corrections
            .iter()
            .map(|r| correction_record_bits(r.region.len(&self.dims, r.site)))
            .sum()
    }

    pub fn report(&self) -> CodelengthReport {
        accounting::report_for(
            &self.dims,
            &self.config,
            self.payload.bit_length() as u64,
            self.correction_bits(),
            self.corrections.len(),
        )
    }

    /// Weight-region corrections, i.e. corrected `W_o`/`W₂` entries.
    pub fn weight_corrections(&self) -> usize {
        self.corrections
            .iter()
            .filter(|r| r.region == Region::Weight)
            .count()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        container::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        container::from_bytes(bytes)
    }
}
