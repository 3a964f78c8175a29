//! Lossless bits-back coding of rotation-symmetric transformer weights.
//!
//! Transformers pruned by PCA slicing admit a free orthogonal rotation at
//! every RMSNorm/residual interface. This crate stores such a model with
//! fewer bits than its plain binary16 image by decoding each of those
//! rotations *from* the message being built, applying it, and recovering it
//! again on the decoder side.
//!
//! Layout:
//! - [`numerics`]: Jacobi eigensolver, sign conventions, RMSNorm, symbol maps
//! - [`bitstream`]: the LIFO bit stack carrying the message
//! - [`rotation_codec`]: rotation ⇄ symmetric-matrix symbols
//! - [`canonical`]: canonical orientation and rotation recovery
//! - [`model`]: weight container, generator, forward pass, SWC1 files
//! - [`codec`]: full encoder/decoder, corrections, SBB1 files, accounting

// `!(x <= t)` is the NaN-catching form of `x > t`; used on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bitstream;
pub mod canonical;
pub mod codec;
pub mod error;
pub mod model;
pub mod numerics;
pub mod rotation_codec;

pub use error::{Error, Result};
pub use numerics::{DenseMatrix, OrthogonalMatrix, Scalar, SignVector, SymbolWidth};

/// 64-bit dense matrix, the precision every codec path runs at.
pub type Matrix = DenseMatrix<f64>;
/// 64-bit rotation.
pub type Rotation = OrthogonalMatrix<f64>;
/// A sliced transformer in 64-bit precision.
pub type Model = model::SlicedTransformer<f64>;
