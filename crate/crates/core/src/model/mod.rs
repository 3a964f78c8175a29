//! The sliced transformer: weights, a synthetic generator, the rotation
//! symmetries it admits, and the SWC1 weight file.

pub(crate) mod format;
mod forward;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numerics::{half_round, DenseMatrix, OrthogonalMatrix, Scalar};

pub use format::{
    from_swc1_bytes, load_weights, save_weights, to_swc1_bytes, SWC1_HEADER_BYTES, SWC1_MAGIC,
};
pub use forward::{forward, gelu};

/// Shape of a sliced transformer. `hidden` is the width left after slicing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ModelDims {
    pub layers: usize,
    pub hidden: usize,
    pub ffn: usize,
    pub vocab: usize,
    pub seq: usize,
    pub has_biases: bool,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("layers", self.layers),
            ("ffn", self.ffn),
            ("vocab", self.vocab),
            ("seq", self.seq),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidDims(format!("{name} must be at least 1")));
        }
        if self.hidden < 2 {
            return Err(Error::InvalidDims("hidden must be at least 2".into()));
        }
        if [self.layers, self.hidden, self.ffn, self.vocab, self.seq]
            .iter()
            .any(|&v| v > u32::MAX as usize)
        {
            return Err(Error::InvalidDims("dimension exceeds u32".into()));
        }
        Ok(())
    }

    /// Parameters in one transformer block.
    pub fn block_params(&self) -> usize {
        let (d, f) = (self.hidden, self.ffn);
        let weights = d * d + 3 * d * d + d * d + d * d + d * f + f * d;
        let biases = if self.has_biases {
            3 * d + d + f + d
        } else {
            0
        };
        weights + biases
    }

    /// Parameters in the embedding, head and head bias.
    pub fn boundary_params(&self) -> usize {
        let (d, v) = (self.hidden, self.vocab);
        2 * v * d + if self.has_biases { v } else { 0 }
    }

    pub fn param_count(&self) -> usize {
        self.layers * self.block_params() + self.boundary_params()
    }
}

/// Rotation sites of one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Site {
    /// The interface after attention: `W_o`, `b_o`, `Q_skip_att` on the right.
    AttOut,
    /// The interface after the MLP: `W₂`, `b₂`, `Q_skip_mlp` on the right.
    MlpOut,
}

impl Site {
    pub fn name(self) -> &'static str {
        match self {
            Site::AttOut => "att_out",
            Site::MlpOut => "mlp_out",
        }
    }
}

/// Tensors of one block, in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BlockTensor {
    QSkipAtt,
    Wqkv,
    Bqkv,
    Wo,
    Bo,
    QSkipMlp,
    W1,
    B1,
    W2,
    B2,
}

impl BlockTensor {
    pub const ALL: [BlockTensor; 10] = [
        BlockTensor::QSkipAtt,
        BlockTensor::Wqkv,
        BlockTensor::Bqkv,
        BlockTensor::Wo,
        BlockTensor::Bo,
        BlockTensor::QSkipMlp,
        BlockTensor::W1,
        BlockTensor::B1,
        BlockTensor::W2,
        BlockTensor::B2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockTensor::QSkipAtt => "q_skip_att",
            BlockTensor::Wqkv => "w_qkv",
            BlockTensor::Bqkv => "b_qkv",
            BlockTensor::Wo => "w_o",
            BlockTensor::Bo => "b_o",
            BlockTensor::QSkipMlp => "q_skip_mlp",
            BlockTensor::W1 => "w_1",
            BlockTensor::B1 => "b_1",
            BlockTensor::W2 => "w_2",
            BlockTensor::B2 => "b_2",
        }
    }

    pub fn is_bias(self) -> bool {
        matches!(
            self,
            BlockTensor::Bqkv | BlockTensor::Bo | BlockTensor::B1 | BlockTensor::B2
        )
    }

    /// `(rows, cols)` for the given dims.
    pub fn shape(self, dims: &ModelDims) -> (usize, usize) {
        let (d, f) = (dims.hidden, dims.ffn);
        match self {
            BlockTensor::QSkipAtt | BlockTensor::Wo | BlockTensor::QSkipMlp => (d, d),
            BlockTensor::Wqkv => (d, 3 * d),
            BlockTensor::Bqkv => (1, 3 * d),
            BlockTensor::Bo | BlockTensor::B2 => (1, d),
            BlockTensor::W1 => (d, f),
            BlockTensor::B1 => (1, f),
            BlockTensor::W2 => (f, d),
        }
    }
}

/// Identifies a tensor inside a model. Layers are 1-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TensorId {
    Embedding,
    Block { layer: usize, tensor: BlockTensor },
    Head,
    HeadBias,
}

impl std::fmt::Display for TensorId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TensorId::Embedding => f.write_str("w_emb"),
            TensorId::Block { layer, tensor } => write!(f, "layer{layer}.{}", tensor.name()),
            TensorId::Head => f.write_str("w_head"),
            TensorId::HeadBias => f.write_str("b_head"),
        }
    }
}

/// Weights of one transformer block. Biases are `1 × n` row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights<T> {
    pub q_skip_att: DenseMatrix<T>,
    pub w_qkv: DenseMatrix<T>,
    pub b_qkv: Option<DenseMatrix<T>>,
    pub w_o: DenseMatrix<T>,
    pub b_o: Option<DenseMatrix<T>>,
    pub q_skip_mlp: DenseMatrix<T>,
    pub w_1: DenseMatrix<T>,
    pub b_1: Option<DenseMatrix<T>>,
    pub w_2: DenseMatrix<T>,
    pub b_2: Option<DenseMatrix<T>>,
}

impl<T> BlockWeights<T> {
    pub fn get(&self, t: BlockTensor) -> Option<&DenseMatrix<T>> {
        match t {
            BlockTensor::QSkipAtt => Some(&self.q_skip_att),
            BlockTensor::Wqkv => Some(&self.w_qkv),
            BlockTensor::Bqkv => self.b_qkv.as_ref(),
            BlockTensor::Wo => Some(&self.w_o),
            BlockTensor::Bo => self.b_o.as_ref(),
            BlockTensor::QSkipMlp => Some(&self.q_skip_mlp),
            BlockTensor::W1 => Some(&self.w_1),
            BlockTensor::B1 => self.b_1.as_ref(),
            BlockTensor::W2 => Some(&self.w_2),
            BlockTensor::B2 => self.b_2.as_ref(),
        }
    }

    pub fn get_mut(&mut self, t: BlockTensor) -> Option<&mut DenseMatrix<T>> {
        match t {
            BlockTensor::QSkipAtt => Some(&mut self.q_skip_att),
            BlockTensor::Wqkv => Some(&mut self.w_qkv),
            BlockTensor::Bqkv => self.b_qkv.as_mut(),
            BlockTensor::Wo => Some(&mut self.w_o),
            BlockTensor::Bo => self.b_o.as_mut(),
            BlockTensor::QSkipMlp => Some(&mut self.q_skip_mlp),
            BlockTensor::W1 => Some(&mut self.w_1),
            BlockTensor::B1 => self.b_1.as_mut(),
            BlockTensor::W2 => Some(&mut self.w_2),
            BlockTensor::B2 => self.b_2.as_mut(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlicedTransformer<T> {
    pub dims: ModelDims,
    pub w_emb: DenseMatrix<T>,
    pub blocks: Vec<BlockWeights<T>>,
    pub w_head: DenseMatrix<T>,
    pub b_head: Option<DenseMatrix<T>>,
}

impl<T: Scalar> SlicedTransformer<T> {
    /// All-zero model with the shapes `dims` prescribes.
    pub fn zeros(dims: &ModelDims) -> Result<Self> {
        dims.validate()?;
        let z = |t: BlockTensor| {
            let (r, c) = t.shape(dims);
            (!t.is_bias() || dims.has_biases).then(|| DenseMatrix::zeros(r, c))
        };
        let block = BlockWeights {
            q_skip_att: z(BlockTensor::QSkipAtt).unwrap(),
            w_qkv: z(BlockTensor::Wqkv).unwrap(),
            b_qkv: z(BlockTensor::Bqkv),
            w_o: z(BlockTensor::Wo).unwrap(),
            b_o: z(BlockTensor::Bo),
            q_skip_mlp: z(BlockTensor::QSkipMlp).unwrap(),
            w_1: z(BlockTensor::W1).unwrap(),
            b_1: z(BlockTensor::B1),
            w_2: z(BlockTensor::W2).unwrap(),
            b_2: z(BlockTensor::B2),
        };
        Ok(SlicedTransformer {
            dims: *dims,
            w_emb: DenseMatrix::zeros(dims.vocab, dims.hidden),
            blocks: vec![block; dims.layers],
            w_head: DenseMatrix::zeros(dims.hidden, dims.vocab),
            b_head: dims.has_biases.then(|| DenseMatrix::zeros(1, dims.vocab)),
        })
    }

    /// Every present tensor in storage order (embedding, blocks, head).
    pub fn tensors(&self) -> Vec<(TensorId, &DenseMatrix<T>)> {
        let mut out = vec![(TensorId::Embedding, &self.w_emb)];
        for (i, b) in self.blocks.iter().enumerate() {
            for t in BlockTensor::ALL {
                if let Some(m) = b.get(t) {
                    out.push((
                        TensorId::Block {
                            layer: i + 1,
                            tensor: t,
                        },
                        m,
                    ));
                }
            }
        }
        out.push((TensorId::Head, &self.w_head));
        if let Some(b) = &self.b_head {
            out.push((TensorId::HeadBias, b));
        }
        out
    }

    pub fn tensor(&self, id: TensorId) -> Option<&DenseMatrix<T>> {
        match id {
            TensorId::Embedding => Some(&self.w_emb),
            TensorId::Block { layer, tensor } => {
                self.blocks.get(layer.checked_sub(1)?)?.get(tensor)
            }
            TensorId::Head => Some(&self.w_head),
            TensorId::HeadBias => self.b_head.as_ref(),
        }
    }

    pub fn tensor_mut(&mut self, id: TensorId) -> Option<&mut DenseMatrix<T>> {
        match id {
            TensorId::Embedding => Some(&mut self.w_emb),
            TensorId::Block { layer, tensor } => {
                self.blocks.get_mut(layer.checked_sub(1)?)?.get_mut(tensor)
            }
            TensorId::Head => Some(&mut self.w_head),
            TensorId::HeadBias => self.b_head.as_mut(),
        }
    }

    /// Checks every tensor against `dims` and for finiteness.
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.blocks.len() != self.dims.layers {
            return Err(Error::ShapeMismatch(format!(
                "{} blocks for {} layers",
                self.blocks.len(),
                self.dims.layers
            )));
        }
        let expect =
            |id: TensorId, m: Option<&DenseMatrix<T>>, shape: Option<(usize, usize)>| match (
                m, shape,
            ) {
                (Some(m), Some(s)) if m.shape() == s => {
                    if m.is_finite() {
                        Ok(())
                    } else {
                        Err(Error::ShapeMismatch(format!("{id} has non-finite entries")))
                    }
                }
                (None, None) => Ok(()),
                (m, s) => Err(Error::ShapeMismatch(format!(
                    "{id}: expected {s:?}, found {:?}",
                    m.map(|m| m.shape())
                ))),
            };
        let dims = &self.dims;
        expect(
            TensorId::Embedding,
            Some(&self.w_emb),
            Some((dims.vocab, dims.hidden)),
        )?;
        for (i, b) in self.blocks.iter().enumerate() {
            for t in BlockTensor::ALL {
                let shape = (!t.is_bias() || dims.has_biases).then(|| t.shape(dims));
                expect(
                    TensorId::Block {
                        layer: i + 1,
                        tensor: t,
                    },
                    b.get(t),
                    shape,
                )?;
            }
        }
        expect(
            TensorId::Head,
            Some(&self.w_head),
            Some((dims.hidden, dims.vocab)),
        )?;
        expect(
            TensorId::HeadBias,
            self.b_head.as_ref(),
            dims.has_biases.then_some((1, dims.vocab)),
        )
    }

    pub fn map(&self, f: impl Fn(T) -> T + Copy) -> Self {
        let mut out = self.clone();
        for (id, _) in self.tensors() {
            let m = out.tensor_mut(id).expect("tensor listed by tensors()");
            *m = m.map(f);
        }
        out
    }

    /// Largest absolute entrywise difference over all tensors.
    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch(
                "models have different dims".into(),
            ));
        }
        Ok(self
            .tensors()
            .into_iter()
            .zip(other.tensors())
            .fold(T::zero(), |m, ((_, a), (_, b))| m.max(a.max_abs_diff(b))))
    }
}

impl SlicedTransformer<f64> {
    /// Snaps every entry onto the binary16 grid.
    pub fn quantize_half(&self) -> Self {
        self.map(half_round)
    }
}

/// Deterministic synthetic model: Gaussian entries scaled by `1/√rows`
/// (rows are the fan-in under the row-vector convention), biases by
/// `1/√cols`. Skip matrices are dense, not orthogonal.
pub fn generate(dims: &ModelDims, seed: u64) -> Result<SlicedTransformer<f64>> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaussian = |rows: usize, cols: usize, bias: bool| {
        let scale = 1.0 / (if bias { cols } else { rows } as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        DenseMatrix::from_vec(rows, cols, data).expect("sizes agree")
    };
    let w_emb = gaussian(dims.vocab, dims.hidden, false);
    let mut blocks = Vec::with_capacity(dims.layers);
    for _ in 0..dims.layers {
        let mut take = |t: BlockTensor| {
            let (r, c) = t.shape(dims);
            (!t.is_bias() || dims.has_biases).then(|| gaussian(r, c, t.is_bias()))
        };
        blocks.push(BlockWeights {
            q_skip_att: take(BlockTensor::QSkipAtt).unwrap(),
            w_qkv: take(BlockTensor::Wqkv).unwrap(),
            b_qkv: take(BlockTensor::Bqkv),
            w_o: take(BlockTensor::Wo).unwrap(),
            b_o: take(BlockTensor::Bo),
            q_skip_mlp: take(BlockTensor::QSkipMlp).unwrap(),
            w_1: take(BlockTensor::W1).unwrap(),
            b_1: take(BlockTensor::B1),
            w_2: take(BlockTensor::W2).unwrap(),
            b_2: take(BlockTensor::B2),
        });
    }
    let w_head = gaussian(dims.hidden, dims.vocab, false);
    let b_head = dims.has_biases.then(|| gaussian(1, dims.vocab, true));
    Ok(SlicedTransformer {
        dims: *dims,
        w_emb,
        blocks,
        w_head,
        b_head,
    })
}

fn right<T: Scalar>(m: &mut DenseMatrix<T>, q: &DenseMatrix<T>) {
    *m = m.matmul(q);
}

fn left_t<T: Scalar>(m: &mut DenseMatrix<T>, q: &DenseMatrix<T>) {
    *m = q.t_matmul(m);
}

/// Applies one output-preserving rotation.
///
/// `AttOut` at layer `ℓ ∈ 1..=L` rotates `W_o`, `b_o`, `Q_skip_att` by `Q`
/// on the right and `Q_skip_mlp`, `W₁` by `Qᵀ` on the left.
/// `MlpOut` at layer `ℓ ∈ 0..=L` rotates the output side of block `ℓ`
/// (`W₂`, `b₂`, `Q_skip_mlp`; the embedding when `ℓ = 0`) by `Q` and the
/// input side of block `ℓ + 1` (`Q_skip_att`, `W_qkv`; the head when
/// `ℓ = L`) by `Qᵀ`.
pub fn apply_symmetry_rotation<T: Scalar>(
    model: &SlicedTransformer<T>,
    layer: usize,
    site: Site,
    q: &OrthogonalMatrix<T>,
) -> Result<SlicedTransformer<T>> {
    let dims = model.dims;
    if q.dim() != dims.hidden {
        return Err(Error::DimensionMismatch(format!(
            "rotation is {0}x{0}, hidden width is {1}",
            q.dim(),
            dims.hidden
        )));
    }
    let min_layer = match site {
        Site::AttOut => 1,
        Site::MlpOut => 0,
    };
    if layer < min_layer || layer > dims.layers {
        return Err(Error::LayerOutOfRange {
            layer,
            layers: dims.layers,
        });
    }
    let q = q.as_matrix();
    let mut m = model.clone();
    match site {
        Site::AttOut => {
            let b = &mut m.blocks[layer - 1];
            right(&mut b.w_o, q);
            if let Some(bo) = b.b_o.as_mut() {
                right(bo, q);
            }
            right(&mut b.q_skip_att, q);
            left_t(&mut b.q_skip_mlp, q);
            left_t(&mut b.w_1, q);
        }
        Site::MlpOut => {
            if layer == 0 {
                right(&mut m.w_emb, q);
            } else {
                let b = &mut m.blocks[layer - 1];
                right(&mut b.w_2, q);
                if let Some(b2) = b.b_2.as_mut() {
                    right(b2, q);
                }
                right(&mut b.q_skip_mlp, q);
            }
            if layer == dims.layers {
                left_t(&mut m.w_head, q);
            } else {
                let next = &mut m.blocks[layer];
                left_t(&mut next.q_skip_att, q);
                left_t(&mut next.w_qkv, q);
            }
        }
    }
    Ok(m)
}
