//! Decoding a rotation from the message and encoding it back.
//!
//! Decoding pops the strict upper triangle and the diagonal of a symmetric
//! matrix `X`, eigendecomposes it, and pushes the eigenvalues back. The
//! eigenvectors form the rotation. Encoding pops the eigenvalues,
//! rebuilds `X = Q·diag(λ)·Qᵀ` and pushes the triangle back, so the pair
//! consumes exactly the `D(D-1)/2` degrees of freedom of the rotation
//! (plus the difference between eigenvalue and entry widths).
//!
//! Symbol slots are numbered in "region order": the strict upper triangle
//! in row-major order, followed by the diagonal. Decode pops the triangle
//! and then the diagonal, each from its last slot to its first; encode
//! pushes the diagonal and then the triangle, each first slot to last.

use crate::bitstream::BitStack;
use crate::error::{Error, Result};
use crate::numerics::{sym_eig, DenseMatrix, OrthogonalMatrix, SymbolCodec, SymbolWidth};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RotationCodecConfig {
    dim: usize,
    x_codec: SymbolCodec,
    lambda_codec: SymbolCodec,
}

impl RotationCodecConfig {
    /// Entry symbols are 16-bit fixed point on `[-1, 1)`; eigenvalues use
    /// `lambda_width` bits on `[-D, D)`, which bounds the spectrum of any
    /// such matrix.
    pub fn new(dim: usize, lambda_width: SymbolWidth) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig(
                "rotation dimension must be positive".into(),
            ));
        }
        Ok(Self {
            dim,
            x_codec: SymbolCodec::new(SymbolWidth::W16, 1.0)?,
            lambda_codec: SymbolCodec::new(lambda_width, dim as f64)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x_codec(&self) -> &SymbolCodec {
        &self.x_codec
    }

    pub fn lambda_codec(&self) -> &SymbolCodec {
        &self.lambda_codec
    }

    /// Number of strict-upper-triangle slots, `D(D-1)/2`.
    pub fn upper_len(&self) -> usize {
        self.dim * (self.dim - 1) / 2
    }

    /// Total entry slots, `D(D+1)/2`.
    pub fn region_len(&self) -> usize {
        self.dim * (self.dim + 1) / 2
    }

    /// Bits removed from the stack by one decode.
    pub fn bits_popped(&self) -> usize {
        self.region_len() * 16
    }

    /// Bits added back by the eigenvalues of one decode.
    pub fn bits_pushed(&self) -> usize {
        self.dim * self.lambda_codec.width().bits() as usize
    }

    /// Slots in the order decode pops them: the upper triangle and then
    /// the diagonal, each from its last slot to its first.
    pub fn pop_order(&self) -> impl Iterator<Item = usize> {
        let upper = self.upper_len();
        (0..upper).rev().chain((upper..self.region_len()).rev())
    }

    /// Slot index of matrix position `(i, j)` with `i <= j`.
    pub fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.dim);
        if i == j {
            self.upper_len() + i
        } else {
            // rows before i contribute (D-1) + (D-2) + ... + (D-i) slots
            i * (2 * self.dim - i - 1) / 2 + (j - i - 1)
        }
    }

    /// Matrix position of a slot index.
    pub fn position(&self, slot: usize) -> (usize, usize) {
        let upper = self.upper_len();
        if slot >= upper {
            let i = slot - upper;
            return (i, i);
        }
        let mut rest = slot;
        for i in 0..self.dim {
            let width = self.dim - i - 1;
            if rest < width {
                return (i, i + 1 + rest);
            }
            rest -= width;
        }
        unreachable!("slot {slot} out of range")
    }
}

/// Result of [`decode_rotation_traced`].
#[derive(Clone, Debug)]
pub struct DecodedRotation {
    pub rotation: OrthogonalMatrix<f64>,
    /// The popped entry symbols in slot order.
    pub symbols: Vec<u32>,
    pub eigenvalues: Vec<f64>,
    /// The eigenvalue symbols as pushed, in push order.
    pub lambda_patterns: Vec<u32>,
}

/// Pops a symmetric matrix, eigendecomposes it and pushes the eigenvalues.
/// The returned rotation has the eigenvectors as columns, in descending
/// eigenvalue order.
pub fn decode_rotation(
    stack: &mut BitStack,
    cfg: &RotationCodecConfig,
) -> Result<OrthogonalMatrix<f64>> {
    decode_rotation_traced(stack, cfg).map(|d| d.rotation)
}

pub fn decode_rotation_traced(
    stack: &mut BitStack,
    cfg: &RotationCodecConfig,
) -> Result<DecodedRotation> {
    let d = cfg.dim;
    if stack.bit_length() < cfg.bits_popped() {
        return Err(Error::Underflow {
            needed: cfg.bits_popped(),
            available: stack.bit_length(),
        });
    }
    let mut symbols = vec![0u32; cfg.region_len()];
    for slot in cfg.pop_order() {
        symbols[slot] = stack.pop_symbol(SymbolWidth::W16)?;
    }
    let x = symbols_to_matrix(&symbols, cfg);
    let eig = sym_eig(&x)?;
    let lambda_patterns: Vec<u32> = eig
        .values
        .iter()
        .map(|&l| cfg.lambda_codec.encode(l))
        .collect();
    for &p in &lambda_patterns {
        stack.push_symbol(p, cfg.lambda_codec.width());
    }
    debug_assert_eq!(eig.values.len(), d);
    Ok(DecodedRotation {
        rotation: eig.vectors,
        symbols,
        eigenvalues: eig.values,
        lambda_patterns,
    })
}

/// Pops the eigenvalues and returns the entry symbols of
/// `Q·diag(λ)·Qᵀ` in slot order, without pushing them.
pub fn reconstruct_symbols(
    stack: &mut BitStack,
    q: &OrthogonalMatrix<f64>,
    cfg: &RotationCodecConfig,
) -> Result<Vec<u32>> {
    let d = cfg.dim;
    if q.dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "rotation is {0}x{0}, codec expects {d}x{d}",
            q.dim()
        )));
    }
    let patterns = pop_lambda_patterns(stack, cfg)?;
    symbols_from_eigen(q, &patterns, cfg)
}

/// Pops the `D` eigenvalue symbols, returned in push order.
pub fn pop_lambda_patterns(stack: &mut BitStack, cfg: &RotationCodecConfig) -> Result<Vec<u32>> {
    let needed = cfg.bits_pushed();
    if stack.bit_length() < needed {
        return Err(Error::Underflow {
            needed,
            available: stack.bit_length(),
        });
    }
    let mut patterns = vec![0u32; cfg.dim];
    for p in patterns.iter_mut().rev() {
        *p = stack.pop_symbol(cfg.lambda_codec.width())?;
    }
    Ok(patterns)
}

/// Entry symbols of `Q·diag(λ)·Qᵀ` in slot order, with `λ` given as
/// eigenvalue symbols in push order.
pub fn symbols_from_eigen(
    q: &OrthogonalMatrix<f64>,
    lambda_patterns: &[u32],
    cfg: &RotationCodecConfig,
) -> Result<Vec<u32>> {
    let d = cfg.dim;
    if q.dim() != d || lambda_patterns.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "rotation {0}x{0} with {1} eigenvalues, codec expects {d}",
            q.dim(),
            lambda_patterns.len()
        )));
    }
    let qm = q.as_matrix();
    let mut scaled = qm.clone();
    for r in 0..d {
        for (v, &p) in scaled.row_mut(r).iter_mut().zip(lambda_patterns) {
            *v *= cfg.lambda_codec.decode(p);
        }
    }
    let x = scaled.matmul_t(qm);
    let mut symbols = vec![0u32; cfg.region_len()];
    for i in 0..d {
        for j in i..d {
            symbols[cfg.slot(i, j)] = cfg.x_codec.encode(x[(i, j)]);
        }
    }
    Ok(symbols)
}

/// Pushes entry symbols in slot order: the exact reverse of the pops in
/// [`decode_rotation`].
pub fn push_rotation_symbols(stack: &mut BitStack, symbols: &[u32], cfg: &RotationCodecConfig) {
    assert_eq!(symbols.len(), cfg.region_len());
    let upper = cfg.upper_len();
    // slot order has the upper triangle first, but the diagonal sat deeper
    for &s in &symbols[upper..] {
        stack.push_symbol(s, SymbolWidth::W16);
    }
    for &s in &symbols[..upper] {
        stack.push_symbol(s, SymbolWidth::W16);
    }
}

/// Pops the eigenvalues and pushes the matrix entries back.
pub fn encode_rotation(
    stack: &mut BitStack,
    q: &OrthogonalMatrix<f64>,
    cfg: &RotationCodecConfig,
) -> Result<()> {
    let symbols = reconstruct_symbols(stack, q, cfg)?;
    push_rotation_symbols(stack, &symbols, cfg);
    Ok(())
}

fn symbols_to_matrix(symbols: &[u32], cfg: &RotationCodecConfig) -> DenseMatrix<f64> {
    let d = cfg.dim;
    let mut x = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in i..d {
            let v = cfg.x_codec.decode(symbols[cfg.slot(i, j)]);
            x[(i, j)] = v;
            x[(j, i)] = v;
        }
    }
    x
}
