use super::SlicedTransformer;
use crate::error::{Error, Result};
use crate::numerics::{rmsnorm, DenseMatrix, Scalar};

/// Tanh approximation of GELU.
pub fn gelu<T: Scalar>(x: T) -> T {
    let half = T::from_f64_lossy(0.5);
    let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
    let k = T::from_f64_lossy(0.044_715);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

/// Logits (`tokens × vocab`) of a single-head causal transformer.
pub fn forward<T: Scalar>(
    model: &SlicedTransformer<T>,
    tokens: &[usize],
) -> Result<DenseMatrix<T>> {
    let dims = &model.dims;
    if tokens.len() > dims.seq {
        return Err(Error::SequenceTooLong {
            len: tokens.len(),
            max: dims.seq,
        });
    }
    if let Some(&bad) = tokens.iter().find(|&&t| t >= dims.vocab) {
        return Err(Error::TokenOutOfRange {
            token: bad,
            vocab: dims.vocab,
        });
    }
    let d = dims.hidden;
    let n = tokens.len();
    let mut h = DenseMatrix::zeros(n, d);
    for (i, &t) in tokens.iter().enumerate() {
        h.row_mut(i).copy_from_slice(model.w_emb.row(t));
    }
    if n == 0 {
        return Ok(DenseMatrix::zeros(0, dims.vocab));
    }
    let inv_sqrt_d = T::one() / T::from_usize(d).expect("width fits").sqrt();

    for block in &model.blocks {
        let normed = rmsnorm(&h)?;
        let mut qkv = normed.matmul(&block.w_qkv);
        if let Some(b) = &block.b_qkv {
            qkv.add_row_broadcast(b);
        }
        let mut attn = DenseMatrix::zeros(n, d);
        let mut weights = vec![T::zero(); n];
        for i in 0..n {
            let qi = &qkv.row(i)[..d];
            let mut max = T::neg_infinity();
            for (j, w) in weights.iter_mut().enumerate().take(i + 1) {
                let kj = &qkv.row(j)[d..2 * d];
                let s = qi
                    .iter()
                    .zip(kj)
                    .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
                    * inv_sqrt_d;
                *w = s;
                max = max.max(s);
            }
            let mut total = T::zero();
            for w in weights.iter_mut().take(i + 1) {
                *w = (*w - max).exp();
                total = total + *w;
            }
            let out = attn.row_mut(i);
            for (j, &w) in weights.iter().enumerate().take(i + 1) {
                let vj = &qkv.row(j)[2 * d..];
                let p = w / total;
                for (o, &v) in out.iter_mut().zip(vj) {
                    *o = *o + p * v;
                }
            }
        }
        let mut next = h.matmul(&block.q_skip_att).add(&attn.matmul(&block.w_o));
        if let Some(b) = &block.b_o {
            next.add_row_broadcast(b);
        }
        h = next;

        let normed = rmsnorm(&h)?;
        let mut pre = normed.matmul(&block.w_1);
        if let Some(b) = &block.b_1 {
            pre.add_row_broadcast(b);
        }
        let act = pre.map(gelu);
        let mut next = h.matmul(&block.q_skip_mlp).add(&act.matmul(&block.w_2));
        if let Some(b) = &block.b_2 {
            next.add_row_broadcast(b);
        }
        h = next;
    }

    let mut logits = rmsnorm(&h)?.matmul(&model.w_head);
    if let Some(b) = &model.b_head {
        logits.add_row_broadcast(b);
    }
    Ok(logits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{apply_symmetry_rotation, generate, ModelDims, Site};
    use crate::numerics::{sym_eig, OrthogonalMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims() -> ModelDims {
        ModelDims {
            layers: 2,
            hidden: 16,
            ffn: 24,
            vocab: 32,
            seq: 12,
            has_biases: true,
        }
    }

    fn random_rotation(rng: &mut impl Rng, d: usize) -> OrthogonalMatrix<f64> {
        let a = DenseMatrix::from_vec(
            d,
            d,
            (0..d * d).map(|_| rng.random::<f64>() - 0.5).collect(),
        )
        .unwrap();
        sym_eig(&a.add(&a.transpose())).unwrap().vectors
    }

    #[test]
    fn output_shape_and_determinism() {
        let m = generate(&dims(), 1).unwrap();
        let tokens = [3, 1, 4, 1, 5, 9, 2, 6];
        let a = forward(&m, &tokens).unwrap();
        assert_eq!(a.shape(), (8, 32));
        assert_eq!(a, forward(&m, &tokens).unwrap());
        assert!(a.is_finite());
    }

    #[test]
    fn smallest_model_runs() {
        let d = ModelDims {
            layers: 1,
            hidden: 2,
            ffn: 2,
            vocab: 4,
            seq: 3,
            has_biases: false,
        };
        let m = generate(&d, 0).unwrap();
        assert_eq!(forward(&m, &[0, 3, 2]).unwrap().shape(), (3, 4));
    }

    #[test]
    fn bad_tokens_rejected() {
        let m = generate(&dims(), 1).unwrap();
        assert_eq!(
            forward(&m, &[0, 32]),
            Err(Error::TokenOutOfRange {
                token: 32,
                vocab: 32
            })
        );
        assert!(matches!(
            forward(&m, &[0; 13]),
            Err(Error::SequenceTooLong { .. })
        ));
    }

    #[test]
    fn rotation_at_every_site_preserves_logits() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let m = generate(&dims(), 2).unwrap();
        let tokens: Vec<usize> = (0..12).map(|_| rng.random_range(0..32)).collect();
        let base = forward(&m, &tokens).unwrap();
        for (layer, site) in [
            (0, Site::MlpOut),
            (1, Site::AttOut),
            (1, Site::MlpOut),
            (2, Site::AttOut),
            (2, Site::MlpOut),
        ] {
            let q = random_rotation(&mut rng, 16);
            let rotated = apply_symmetry_rotation(&m, layer, site, &q).unwrap();
            assert_ne!(rotated, m);
            let diff = forward(&rotated, &tokens).unwrap().max_abs_diff(&base);
            assert!(diff < 1e-9, "{site:?} at {layer}: {diff:e}");
        }
    }

    #[test]
    fn rotation_then_inverse_restores_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let m = generate(&dims(), 3).unwrap();
        let q = random_rotation(&mut rng, 16);
        let there = apply_symmetry_rotation(&m, 2, Site::AttOut, &q).unwrap();
        let back = apply_symmetry_rotation(&there, 2, Site::AttOut, &q.transpose()).unwrap();
        assert!(back.max_abs_diff(&m).unwrap() < 1e-12);
    }

    #[test]
    fn f32_forward_tracks_f64() {
        let m = generate(&dims(), 4).unwrap();
        let m32 = SlicedTransformer {
            dims: m.dims,
            w_emb: m.w_emb.cast::<f32>(),
            blocks: m
                .blocks
                .iter()
                .map(|b| crate::model::BlockWeights {
                    q_skip_att: b.q_skip_att.cast(),
                    w_qkv: b.w_qkv.cast(),
                    b_qkv: b.b_qkv.as_ref().map(|x| x.cast()),
                    w_o: b.w_o.cast(),
                    b_o: b.b_o.as_ref().map(|x| x.cast()),
                    q_skip_mlp: b.q_skip_mlp.cast(),
                    w_1: b.w_1.cast(),
                    b_1: b.b_1.as_ref().map(|x| x.cast()),
                    w_2: b.w_2.cast(),
                    b_2: b.b_2.as_ref().map(|x| x.cast()),
                })
                .collect(),
            w_head: m.w_head.cast(),
            b_head: m.b_head.as_ref().map(|x| x.cast()),
        };
        let tokens = [1, 2, 3, 4];
        let a = forward(&m, &tokens).unwrap();
        let b = forward(&m32, &tokens).unwrap().cast::<f64>();
        assert!(a.max_abs_diff(&b) < 1e-4);
    }
}
