//! Relational graph convolution over the crowdfunding graph.
//!
//! Each layer computes, for every vertex `i`,
//!
//! ```text
//! h_i' = act( sum_r sum_{j in N_i^r} W_r h_j / |N_i^r|  +  W_0 h_i )
//! ```
//!
//! with one weight matrix per relation plus a self-loop matrix. Hidden layers
//! use ReLU, the output layer is linear. Neighbor sums run in ascending index
//! order, so results do not depend on how adjacency was produced.
//!
//! Training is self-supervised link prediction on `Invested` edges: a
//! dot-product decoder scored with binary cross-entropy against uniformly
//! sampled non-invested projects.

mod container;
mod embedding;
mod features;
mod forward;
mod gradcheck;
mod train;

pub use container::{read_params, write_params};
pub use embedding::EmbeddingTable;
pub use features::FeatureMap;
pub use forward::{forward, forward_subset};
pub use gradcheck::{gradient_check, GradCheckConfig, GradCheckReport};
pub use train::{
    auc, loss, loss_and_gradients, sample_negatives, score_edge, train, EdgeBatch, TrainConfig,
    TrainOutcome,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{Relation, VertexId};

#[derive(Debug, thiserror::Error)]
pub enum RgcnError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("non-finite activation at layer {layer} for vertex {vertex}")]
    NonFinite { layer: usize, vertex: VertexId },
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("empty edge batch")]
    EmptyBatch,
    #[error("graph has no Invested edges to train on")]
    NoInvestedEdges,
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
    #[error("invalid parameter file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Weight blocks per layer: one per relation, then the self-loop.
pub const BLOCKS: usize = Relation::COUNT + 1;
pub const SELF_LOOP: usize = Relation::COUNT;

/// One convolution layer: `BLOCKS` row-major `d_out x d_in` matrices stored back to back.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub d_in: usize,
    pub d_out: usize,
    pub weights: Vec<f64>,
}

impl Layer {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            weights: vec![0.0; BLOCKS * d_in * d_out],
        }
    }

    pub fn block_len(&self) -> usize {
        self.d_in * self.d_out
    }

    pub fn block(&self, b: usize) -> &[f64] {
        let n = self.block_len();
        &self.weights[b * n..(b + 1) * n]
    }

    pub fn block_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.block_len();
        &mut self.weights[b * n..(b + 1) * n]
    }

    pub fn relation(&self, r: Relation) -> &[f64] {
        self.block(r.index())
    }

    pub fn self_loop(&self) -> &[f64] {
        self.block(SELF_LOOP)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub features: FeatureMap,
    pub layers: Vec<Layer>,
}

impl ModelParams {
    /// Glorot-uniform initialization. `dims` lists layer output sizes; the
    /// input size comes from the feature map.
    pub fn init(features: FeatureMap, dims: &[usize], seed: u64) -> Result<Self, RgcnError> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(RgcnError::Config(format!(
                "layer dims must be non-empty and positive, got {dims:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d_in = features.dim();
        let mut layers = Vec::with_capacity(dims.len());
        for &d_out in dims {
            let limit = (6.0 / (d_in + d_out) as f64).sqrt();
            let mut layer = Layer::zeros(d_in, d_out);
            for w in &mut layer.weights {
                *w = rng.gen_range(-limit..limit);
            }
            layers.push(layer);
            d_in = d_out;
        }
        Ok(Self { features, layers })
    }

    pub fn zeros(features: FeatureMap, dims: &[usize]) -> Self {
        let mut d_in = features.dim();
        let layers = dims
            .iter()
            .map(|&d_out| {
                let l = Layer::zeros(d_in, d_out);
                d_in = d_out;
                l
            })
            .collect();
        Self { features, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.features.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(self.input_dim(), |l| l.d_out)
    }

    /// `[d_in, d_1, ..., d_out]`
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.d_out))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len()).sum()
    }

    pub fn validate(&self) -> Result<(), RgcnError> {
        let mut d_in = self.input_dim();
        for (i, l) in self.layers.iter().enumerate() {
            if l.d_in != d_in || l.weights.len() != BLOCKS * l.d_in * l.d_out {
                return Err(RgcnError::Config(format!(
                    "layer {i}: expected input {d_in}, got {}x{} with {} weights",
                    l.d_out,
                    l.d_in,
                    l.weights.len()
                )));
            }
            if l.weights.iter().any(|w| !w.is_finite()) {
                return Err(RgcnError::Config(format!("layer {i}: non-finite weight")));
            }
            d_in = l.d_out;
        }
        if self.layers.is_empty() {
            return Err(RgcnError::Config("model has no layers".into()));
        }
        Ok(())
    }
}

/// Gradient buffers shaped like [`ModelParams::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Self {
            layers: p.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
        }
    }

    pub fn flat(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flatten().copied()
    }
}
