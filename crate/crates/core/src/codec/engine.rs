use super::{CodecConfig, CorrectionRecord, EncodedContainer, Region};
use crate::bitstream::BitStack;
use crate::canonical::{canonicalize, recover_rotation, CanonReport};
use crate::error::{Error, Result};
use crate::model::{BlockTensor, Site, SlicedTransformer, TensorId};
use crate::numerics::{half_decode, half_encode, half_round, row_signs, SignVector};
use crate::rotation_codec::{
    decode_rotation_traced, pop_lambda_patterns, push_rotation_symbols, symbols_from_eigen,
    RotationCodecConfig,
};
use crate::{Matrix, Model};

/// Supplies the corrections of one rotation site.
trait SiteCorrector {
    fn correct_weights(&mut self, w: &mut Matrix) -> Result<()>;
    fn correct_stream(&mut self, symbols: &mut [u32]) -> Result<()>;
}

/// The decoder's work at one site, shared verbatim by the encoder's
/// simulation: recover the rotation from the stored weight, rotate the
/// weight back, and rebuild the matrix symbols the rotation came from.
fn restore_site(
    w_rot: &Matrix,
    signs: &SignVector,
    lambda_patterns: &[u32],
    rcfg: &RotationCodecConfig,
    corrector: &mut dyn SiteCorrector,
) -> Result<(Matrix, Vec<u32>)> {
    // corrupted payloads may carry infinities or NaNs
    let clean = w_rot.map(|v| if v.is_finite() { v } else { 0.0 });
    let q = recover_rotation(&clean, signs)?;
    let mut w = clean.matmul_t(q.as_matrix()).map(half_round);
    corrector.correct_weights(&mut w)?;
    let mut symbols = symbols_from_eigen(&q, lambda_patterns, rcfg)?;
    corrector.correct_stream(&mut symbols)?;
    Ok((w, symbols))
}

/// Encoder side: compares against the truth, records and applies fixes.
struct Oracle<'a> {
    reference: &'a Matrix,
    truth: &'a [u32],
    rcfg: &'a RotationCodecConfig,
    cfg: &'a CodecConfig,
    weight: Vec<(u32, u16)>,
    stream: Vec<(u32, u16)>,
}

impl SiteCorrector for Oracle<'_> {
    fn correct_weights(&mut self, w: &mut Matrix) -> Result<()> {
        for (i, (d, &r)) in w
            .as_mut_slice()
            .iter_mut()
            .zip(self.reference.as_slice())
            .enumerate()
        {
            if !((*d - r).abs() <= self.cfg.tau_weights) {
                self.weight.push((i as u32, half_encode(r)));
                *d = r;
            }
        }
        Ok(())
    }

    fn correct_stream(&mut self, symbols: &mut [u32]) -> Result<()> {
        let x = self.rcfg.x_codec();
        for (i, (s, &t)) in symbols.iter_mut().zip(self.truth).enumerate() {
            if *s == t {
                continue;
            }
            // the slot also holds a buried binary16 weight, so bound both views
            let fx_err = (x.decode(*s) - x.decode(t)).abs();
            let weight_err = (half_decode(*s as u16) - half_decode(t as u16)).abs();
            if !(fx_err <= self.cfg.tau_stream) || !(weight_err <= self.cfg.tau_weights) {
                self.stream.push((i as u32, t as u16));
                *s = t;
            }
        }
        Ok(())
    }
}

/// Decoder side: substitutes the stored records.
struct Stored {
    weight: Vec<(u32, u16)>,
    stream: Vec<(u32, u16)>,
}

impl Stored {
    fn for_site(c: &EncodedContainer, layer: usize, site: Site) -> Self {
        let pick = |region| {
            c.section(layer, site, region)
                .map(|r| (r.index, r.value))
                .collect()
        };
        Self {
            weight: pick(Region::Weight),
            stream: pick(Region::StreamX),
        }
    }
}

impl SiteCorrector for Stored {
    fn correct_weights(&mut self, w: &mut Matrix) -> Result<()> {
        let entries = w.as_mut_slice();
        for &(i, v) in &self.weight {
            *entries.get_mut(i as usize).ok_or_else(|| {
                Error::BadContainer(format!("weight correction index {i} out of range"))
            })? = half_decode(v);
        }
        Ok(())
    }

    fn correct_stream(&mut self, symbols: &mut [u32]) -> Result<()> {
        for &(i, v) in &self.stream {
            *symbols.get_mut(i as usize).ok_or_else(|| {
                Error::BadContainer(format!("stream correction index {i} out of range"))
            })? = v as u32;
        }
        Ok(())
    }
}

/// Everything the encoder knows after a run.
#[derive(Clone, Debug)]
pub struct EncodeOutput {
    pub container: EncodedContainer,
    /// Canonical model on the binary16 grid: what decoding aims at.
    pub reference: Model,
    /// The decoder's output as predicted by the encoder.
    pub simulated: Model,
    pub canon_report: CanonReport,
}

struct Encoder<'a> {
    stack: BitStack,
    /// Origin of every binary16 symbol on the stack, bottom first.
    origins: Vec<(TensorId, usize)>,
    /// `origins.len()` when the last non-weight symbols were pushed.
    barrier: usize,
    rcfg: RotationCodecConfig,
    cfg: &'a CodecConfig,
    records: Vec<CorrectionRecord>,
}

impl Encoder<'_> {
    fn push(&mut self, id: TensorId, m: Option<&Matrix>) {
        let Some(m) = m else { return };
        for (i, &v) in m.as_slice().iter().enumerate() {
            self.stack.push_half(half_encode(v));
            self.origins.push((id, i));
        }
    }

    fn site(
        &mut self,
        layer: usize,
        site: Site,
        canonical: &Model,
        reference: &Model,
        simulated: &mut Model,
    ) -> Result<()> {
        let region = self.rcfg.region_len();
        if self.origins.len() - self.barrier < region {
            return Err(Error::InvalidDims(format!(
                "layer {layer} {}: fewer than {region} weight symbols to decode a rotation from",
                site.name()
            )));
        }
        let decoded = decode_rotation_traced(&mut self.stack, &self.rcfg)?;
        let mut slot_origin = vec![(TensorId::Embedding, 0); region];
        for slot in self.rcfg.pop_order() {
            slot_origin[slot] = self.origins.pop().expect("checked above");
        }

        let tensor = match site {
            Site::AttOut => BlockTensor::Wo,
            Site::MlpOut => BlockTensor::W2,
        };
        let id = TensorId::Block { layer, tensor };
        let q = &decoded.rotation;
        // rotate the exact canonical weight so the stored one is rounded once
        let w_rot = canonical
            .tensor(id)
            .expect("block tensor")
            .matmul(q.as_matrix())
            .map(half_round);
        let signs = row_signs(q);
        self.stack.push_sign_bits(&signs);
        self.barrier = self.origins.len();
        self.push(id, Some(&w_rot));

        let mut oracle = Oracle {
            reference: reference.tensor(id).expect("block tensor"),
            truth: &decoded.symbols,
            rcfg: &self.rcfg,
            cfg: self.cfg,
            weight: Vec::new(),
            stream: Vec::new(),
        };
        let (w, symbols) = restore_site(
            &w_rot,
            &signs,
            &decoded.lambda_patterns,
            &self.rcfg,
            &mut oracle,
        )?;
        *simulated.tensor_mut(id).expect("block tensor") = w;
        for (slot, &(origin, i)) in slot_origin.iter().enumerate() {
            simulated
                .tensor_mut(origin)
                .expect("pushed tensor")
                .as_mut_slice()[i] = half_decode(symbols[slot] as u16);
        }
        for (region, list) in [
            (Region::StreamX, oracle.stream),
            (Region::Weight, oracle.weight),
        ] {
            self.records
                .extend(list.into_iter().map(|(index, value)| CorrectionRecord {
                    region,
                    layer,
                    site,
                    index,
                    value,
                }));
        }
        Ok(())
    }
}

fn check_index_range(model: &Model) -> Result<()> {
    let d = &model.dims;
    if d.ffn.saturating_mul(d.hidden) > u32::MAX as usize
        || d.hidden.saturating_mul(d.hidden) > u32::MAX as usize
    {
        return Err(Error::InvalidDims(
            "rotated weights too large for 32-bit correction indices".into(),
        ));
    }
    Ok(())
}

/// Encodes `model` and returns the container together with the encoder's
/// reference and its prediction of the decoder output.
pub fn encode_model_traced(model: &Model, cfg: &CodecConfig) -> Result<EncodeOutput> {
    cfg.validate()?;
    model.validate()?;
    check_index_range(model)?;
    let dims = model.dims;
    let (canon, canon_report) = canonicalize(model)?;
    let reference = canon.quantize_half();
    let mut simulated = reference.clone();
    let mut enc = Encoder {
        stack: BitStack::new(),
        origins: Vec::new(),
        barrier: 0,
        rcfg: RotationCodecConfig::new(dims.hidden, cfg.lambda_width)?,
        cfg,
        records: Vec::new(),
    };

    enc.push(TensorId::Embedding, Some(&reference.w_emb));
    for layer in 1..=dims.layers {
        let b = &reference.blocks[layer - 1];
        let id = |tensor| TensorId::Block { layer, tensor };
        enc.push(id(BlockTensor::QSkipAtt), Some(&b.q_skip_att));
        enc.push(id(BlockTensor::Wqkv), Some(&b.w_qkv));
        enc.push(id(BlockTensor::Bqkv), b.b_qkv.as_ref());
        enc.site(layer, Site::AttOut, &canon, &reference, &mut simulated)?;
        enc.push(id(BlockTensor::Bo), b.b_o.as_ref());
        enc.push(id(BlockTensor::QSkipMlp), Some(&b.q_skip_mlp));
        enc.push(id(BlockTensor::W1), Some(&b.w_1));
        enc.push(id(BlockTensor::B1), b.b_1.as_ref());
        enc.site(layer, Site::MlpOut, &canon, &reference, &mut simulated)?;
        enc.push(id(BlockTensor::B2), b.b_2.as_ref());
    }
    enc.push(TensorId::Head, Some(&reference.w_head));
    enc.push(TensorId::HeadBias, reference.b_head.as_ref());

    let container = EncodedContainer {
        dims,
        config: *cfg,
        payload: enc.stack,
        corrections: enc.records,
    };
    debug_assert!(container.validate().is_ok());
    Ok(EncodeOutput {
        container,
        reference,
        simulated,
        canon_report,
    })
}

pub fn encode_model(model: &Model, cfg: &CodecConfig) -> Result<EncodedContainer> {
    encode_model_traced(model, cfg).map(|o| o.container)
}

fn pop_into(stack: &mut BitStack, m: Option<&mut Matrix>) -> Result<()> {
    if let Some(m) = m {
        for v in m.as_mut_slice().iter_mut().rev() {
            *v = half_decode(stack.pop_half()?);
        }
    }
    Ok(())
}

fn decode_site(
    stack: &mut BitStack,
    rows: usize,
    rcfg: &RotationCodecConfig,
    corrector: &mut Stored,
) -> Result<Matrix> {
    let d = rcfg.dim();
    let mut w_rot = Matrix::zeros(rows, d);
    pop_into(stack, Some(&mut w_rot))?;
    let signs = stack.pop_sign_bits(d)?;
    let lambda = pop_lambda_patterns(stack, rcfg)?;
    let (w, symbols) = restore_site(&w_rot, &signs, &lambda, rcfg, corrector)?;
    push_rotation_symbols(stack, &symbols, rcfg);
    Ok(w)
}

/// Rebuilds the canonical model from a container.
pub fn decode_model(container: &EncodedContainer) -> Result<Model> {
    container.validate()?;
    let dims = container.dims;
    let rcfg = RotationCodecConfig::new(dims.hidden, container.config.lambda_width)?;
    let mut stack = container.payload.clone();
    let mut m = SlicedTransformer::zeros(&dims)?;

    pop_into(&mut stack, m.b_head.as_mut())?;
    pop_into(&mut stack, Some(&mut m.w_head))?;
    for layer in (1..=dims.layers).rev() {
        let b = &mut m.blocks[layer - 1];
        pop_into(&mut stack, b.b_2.as_mut())?;
        let mut mlp = Stored::for_site(container, layer, Site::MlpOut);
        b.w_2 = decode_site(&mut stack, dims.ffn, &rcfg, &mut mlp)?;
        pop_into(&mut stack, b.b_1.as_mut())?;
        pop_into(&mut stack, Some(&mut b.w_1))?;
        pop_into(&mut stack, Some(&mut b.q_skip_mlp))?;
        pop_into(&mut stack, b.b_o.as_mut())?;
        let mut att = Stored::for_site(container, layer, Site::AttOut);
        b.w_o = decode_site(&mut stack, dims.hidden, &rcfg, &mut att)?;
        pop_into(&mut stack, b.b_qkv.as_mut())?;
        pop_into(&mut stack, Some(&mut b.w_qkv))?;
        pop_into(&mut stack, Some(&mut b.q_skip_att))?;
    }
    pop_into(&mut stack, Some(&mut m.w_emb))?;
    if !stack.is_empty() {
        return Err(Error::BadContainer(format!(
            "{} payload bits left after decoding",
            stack.bit_length()
        )));
    }
    Ok(m)
}
