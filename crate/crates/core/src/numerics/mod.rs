//! Dense linear algebra and symbol quantization shared by every codec stage.

mod eig;
mod matrix;
mod quant;
mod scalar;

pub use eig::{sym_eig, sym_eig_with_tol, SymEig, EIG_TOL, MAX_SWEEPS, SYMMETRY_TOL};
pub use matrix::{
    apply_sign_convention, rmsnorm, row_sign, row_signs, DenseMatrix, OrthogonalMatrix, SignVector,
    ZERO_SUM_TOL,
};
pub use quant::{half_decode, half_encode, half_round, SymbolCodec, SymbolWidth};
pub use scalar::Scalar;
