//! Canonical orientation of a sliced transformer and recovery of a rotation
//! from a rotated canonical weight.
//!
//! A weight `W` is canonical when `WᵀW` is diagonal with a descending
//! diagonal. Rotating a canonical `W` by `Q` gives `(WQ)ᵀ(WQ) = Qᵀ(WᵀW)Q`,
//! whose eigenvectors are the rows of `Q` up to sign; the row-sum signs of
//! `Q` settle the sign.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{BlockTensor, SlicedTransformer};
use crate::numerics::{
    apply_sign_convention, row_signs, sym_eig, DenseMatrix, OrthogonalMatrix, Scalar, SignVector,
};

/// Rank margins below this count as rank-deficient.
pub const RANK_TOL: f64 = 1e-10;
/// Relative eigen-gaps below this are flagged in the report.
pub const GAP_WARN: f64 = 1e-6;

/// `λ_min(WᵀW) / λ_max(WᵀW)`, clamped to `[0, 1]`. Zero or non-finite
/// matrices have margin 0.
pub fn check_full_rank<T: Scalar>(w: &DenseMatrix<T>) -> f64 {
    match sym_eig(&w.gram()) {
        Ok(eig) => margin_of(&eig.values),
        Err(_) => 0.0,
    }
}

fn margin_of<T: Scalar>(values: &[T]) -> f64 {
    let max = values.first().map_or(0.0, |v| v.to_f64_lossy());
    let min = values.last().map_or(0.0, |v| v.to_f64_lossy());
    if max > 0.0 {
        (min / max).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn relative_gap<T: Scalar>(values: &[T]) -> f64 {
    let scale = values
        .iter()
        .fold(0.0f64, |m, v| m.max(v.to_f64_lossy().abs()));
    let gap = values
        .windows(2)
        .map(|w| (w[0] - w[1]).to_f64_lossy())
        .fold(f64::INFINITY, f64::min);
    if scale > 0.0 && gap.is_finite() {
        gap / scale
    } else {
        gap
    }
}

/// Spectrum diagnostics of one canonicalized tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumStats {
    /// Smallest gap between consecutive eigenvalues of `WᵀW`, divided by
    /// the largest eigenvalue.
    pub min_relative_gap: f64,
    pub rank_margin: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCanonStats {
    pub w_o: SpectrumStats,
    pub w_2: SpectrumStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonReport {
    pub embedding: SpectrumStats,
    pub layers: Vec<LayerCanonStats>,
    /// Near-degenerate spectra, where recovery may mix eigenvectors.
    pub warnings: Vec<String>,
}

impl fmt::Display for CanonReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layers = {}", self.layers.len())?;
        writeln!(
            f,
            "embedding.min_relative_gap = {:e}",
            self.embedding.min_relative_gap
        )?;
        writeln!(
            f,
            "embedding.rank_margin = {:e}",
            self.embedding.rank_margin
        )?;
        for (i, l) in self.layers.iter().enumerate() {
            for (name, s) in [("w_o", &l.w_o), ("w_2", &l.w_2)] {
                writeln!(
                    f,
                    "layer{}.{name}.min_relative_gap = {:e}",
                    i + 1,
                    s.min_relative_gap
                )?;
                writeln!(f, "layer{}.{name}.rank_margin = {:e}", i + 1, s.rank_margin)?;
            }
        }
        writeln!(f, "warnings = {}", self.warnings.len())?;
        for w in &self.warnings {
            writeln!(f, "warning = {w}")?;
        }
        Ok(())
    }
}

/// Eigenbasis of `WᵀW` as columns, each column's sum made positive.
fn canonical_basis<T: Scalar>(w: &DenseMatrix<T>) -> Result<(OrthogonalMatrix<T>, SpectrumStats)> {
    let eig = sym_eig(&w.gram())?;
    let stats = SpectrumStats {
        min_relative_gap: relative_gap(&eig.values),
        rank_margin: margin_of(&eig.values),
    };
    let (rows, _) = apply_sign_convention(&eig.vectors.transpose());
    Ok((rows.transpose(), stats))
}

/// Rotates every interface of `model` to its canonical direction, carrying
/// each rotation into the adjacent block so the function is unchanged.
pub fn canonicalize<T: Scalar>(
    model: &SlicedTransformer<T>,
) -> Result<(SlicedTransformer<T>, CanonReport)> {
    model.validate()?;
    let mut m = model.clone();
    let mut warnings = Vec::new();
    let mut check = |stats: &SpectrumStats, layer: usize, tensor: &'static str, ranked: bool| {
        if ranked && !(stats.rank_margin >= RANK_TOL) {
            return Err(Error::RankDeficient {
                layer,
                tensor,
                margin: stats.rank_margin,
            });
        }
        if !(stats.min_relative_gap >= GAP_WARN) {
            warnings.push(format!(
                "layer {layer} {tensor}: relative eigen-gap {:e} below {GAP_WARN:e}",
                stats.min_relative_gap
            ));
        }
        Ok(())
    };

    let (mut q, embedding) = canonical_basis(&m.w_emb)?;
    check(&embedding, 0, "w_emb", false)?;
    m.w_emb = m.w_emb.matmul(q.as_matrix());

    let mut layers = Vec::with_capacity(m.blocks.len());
    for (i, b) in m.blocks.iter_mut().enumerate() {
        let layer = i + 1;
        b.q_skip_att = q.as_matrix().t_matmul(&b.q_skip_att);
        b.w_qkv = q.as_matrix().t_matmul(&b.w_qkv);

        let (qo, w_o) = canonical_basis(&b.w_o)?;
        check(&w_o, layer, BlockTensor::Wo.name(), true)?;
        let qo_m = qo.as_matrix();
        b.w_o = b.w_o.matmul(qo_m);
        if let Some(bo) = b.b_o.as_mut() {
            *bo = bo.matmul(qo_m);
        }
        b.q_skip_att = b.q_skip_att.matmul(qo_m);
        b.q_skip_mlp = qo_m.t_matmul(&b.q_skip_mlp);
        b.w_1 = qo_m.t_matmul(&b.w_1);

        let (q2, w_2) = canonical_basis(&b.w_2)?;
        check(&w_2, layer, BlockTensor::W2.name(), true)?;
        let q2_m = q2.as_matrix();
        b.q_skip_mlp = b.q_skip_mlp.matmul(q2_m);
        b.w_2 = b.w_2.matmul(q2_m);
        if let Some(b2) = b.b_2.as_mut() {
            *b2 = b2.matmul(q2_m);
        }
        q = q2;
        layers.push(LayerCanonStats { w_o, w_2 });
    }
    m.w_head = q.as_matrix().t_matmul(&m.w_head);

    Ok((
        m,
        CanonReport {
            embedding,
            layers,
            warnings,
        },
    ))
}

/// Recovers `Q` from `W_rot = W_canon·Q` and the row-sum signs of `Q`.
pub fn recover_rotation<T: Scalar>(
    w_rot: &DenseMatrix<T>,
    signs: &SignVector,
) -> Result<OrthogonalMatrix<T>> {
    if signs.len() != w_rot.cols() {
        return Err(Error::DimensionMismatch(format!(
            "{} signs for {} columns",
            signs.len(),
            w_rot.cols()
        )));
    }
    let rows = sym_eig(&w_rot.gram())?.vectors.transpose();
    let current = row_signs(&rows);
    let flips = SignVector::new(
        current
            .iter()
            .zip(signs.iter())
            .map(|(a, b)| a * b)
            .collect(),
    )?;
    Ok(rows.with_row_signs(&flips))
}

/// Largest off-diagonal magnitude of `WᵀW` relative to its largest entry.
pub fn gram_off_diagonal<T: Scalar>(w: &DenseMatrix<T>) -> f64 {
    let g = w.gram();
    let scale = g.max_abs().to_f64_lossy();
    let mut off = 0.0f64;
    for i in 0..g.rows() {
        for j in 0..g.cols() {
            if i != j {
                off = off.max(g[(i, j)].to_f64_lossy().abs());
            }
        }
    }
    if scale > 0.0 {
        off / scale
    } else {
        off
    }
}
