use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Sentence pooling applied to the token states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Mask-weighted mean of the token embeddings.
    Mean,
    /// BiLSTM over the token embeddings, then learned softmax weights.
    Attention,
}

impl Pooling {
    pub(crate) fn code(self) -> u32 {
        match self {
            Pooling::Mean => 0,
            Pooling::Attention => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Pooling::Mean),
            1 => Some(Pooling::Attention),
            _ => None,
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pooling::Mean => "mean",
            Pooling::Attention => "attention",
        })
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "attention" => Ok(Pooling::Attention),
            other => Err(Error::InvalidArgument(format!("unknown pooling {other:?}"))),
        }
    }
}

/// Tensor dimensions: vocabulary size, token dimension `d`, and per-direction
/// LSTM hidden size `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderShape {
    pub vocab_size: usize,
    pub dim: usize,
    pub hidden: usize,
}

impl EncoderShape {
    /// Size of the pooled sentence vector.
    pub fn output_dim(&self, pooling: Pooling) -> usize {
        match pooling {
            Pooling::Mean => self.dim,
            Pooling::Attention => 2 * self.hidden,
        }
    }
}

/// Optimizer parameter groups, each with its own learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    /// Token embedding table.
    Backbone,
    /// BiLSTM and attention projection.
    Custom,
}

/// Weights of one LSTM direction. Gate rows are stacked `i, f, g, o`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    /// `4h x d`, row-major.
    pub w_ih: Vec<f64>,
    /// `4h x h`, row-major.
    pub w_hh: Vec<f64>,
    /// `4h`.
    pub bias: Vec<f64>,
}

impl LstmWeights {
    fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w_ih: vec![0.0; 4 * hidden * dim],
            w_hh: vec![0.0; 4 * hidden * hidden],
            bias: vec![0.0; 4 * hidden],
        }
    }
}

/// Every trainable tensor. Also used for gradients and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    /// `|V| x d`, row-major.
    pub embedding: Vec<f64>,
    pub lstm_fwd: LstmWeights,
    pub lstm_bwd: LstmWeights,
    /// `2h`.
    pub attn_weight: Vec<f64>,
    /// Length 1.
    pub attn_bias: Vec<f64>,
}

pub const TENSOR_COUNT: usize = 9;

impl ParamSet {
    pub fn zeros(shape: &EncoderShape) -> Self {
        Self {
            embedding: vec![0.0; shape.vocab_size * shape.dim],
            lstm_fwd: LstmWeights::zeros(shape.dim, shape.hidden),
            lstm_bwd: LstmWeights::zeros(shape.dim, shape.hidden),
            attn_weight: vec![0.0; 2 * shape.hidden],
            attn_bias: vec![0.0; 1],
        }
    }

    /// Tensors in checkpoint order.
    pub fn tensors(&self) -> [(&'static str, ParamGroup, &[f64]); TENSOR_COUNT] {
        use ParamGroup::*;
        [
            ("embedding", Backbone, &self.embedding),
            ("lstm_fwd.w_ih", Custom, &self.lstm_fwd.w_ih),
            ("lstm_fwd.w_hh", Custom, &self.lstm_fwd.w_hh),
            ("lstm_fwd.bias", Custom, &self.lstm_fwd.bias),
            ("lstm_bwd.w_ih", Custom, &self.lstm_bwd.w_ih),
            ("lstm_bwd.w_hh", Custom, &self.lstm_bwd.w_hh),
            ("lstm_bwd.bias", Custom, &self.lstm_bwd.bias),
            ("attn.weight", Custom, &self.attn_weight),
            ("attn.bias", Custom, &self.attn_bias),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, ParamGroup, &mut [f64]); TENSOR_COUNT] {
        use ParamGroup::*;
        [
            ("embedding", Backbone, &mut self.embedding),
            ("lstm_fwd.w_ih", Custom, &mut self.lstm_fwd.w_ih),
            ("lstm_fwd.w_hh", Custom, &mut self.lstm_fwd.w_hh),
            ("lstm_fwd.bias", Custom, &mut self.lstm_fwd.bias),
            ("lstm_bwd.w_ih", Custom, &mut self.lstm_bwd.w_ih),
            ("lstm_bwd.w_hh", Custom, &mut self.lstm_bwd.w_hh),
            ("lstm_bwd.bias", Custom, &mut self.lstm_bwd.bias),
            ("attn.weight", Custom, &mut self.attn_weight),
            ("attn.bias", Custom, &mut self.attn_bias),
        ]
    }

    pub fn fill(&mut self, value: f64) {
        for (_, _, t) in self.tensors_mut() {
            t.fill(value);
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, t)| t.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Encoder weights plus the static configuration needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub shape: EncoderShape,
    pub pooling: Pooling,
    pub weights: ParamSet,
}

impl EncoderParams {
    /// Seeded initialization: embeddings uniform in ±0.05, LSTM weights
    /// uniform in ±1/√h with forget-gate bias 1, attention projection zero so
    /// attention pooling starts out as a masked mean of the LSTM states.
    pub fn init(shape: EncoderShape, pooling: Pooling, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = ParamSet::zeros(&shape);
        for v in &mut weights.embedding {
            *v = rng.gen_range(-0.05..0.05);
        }
        let h = shape.hidden;
        if h > 0 {
            let bound = 1.0 / (h as f64).sqrt();
            for lstm in [&mut weights.lstm_fwd, &mut weights.lstm_bwd] {
                for v in lstm.w_ih.iter_mut().chain(lstm.w_hh.iter_mut()) {
                    *v = rng.gen_range(-bound..bound);
                }
                lstm.bias.fill(0.0);
                lstm.bias[h..2 * h].fill(1.0);
            }
        }
        Self {
            shape,
            pooling,
            weights,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.shape.output_dim(self.pooling)
    }

    pub(crate) fn embedding_row(&self, id: usize) -> &[f64] {
        let d = self.shape.dim;
        &self.weights.embedding[id * d..(id + 1) * d]
    }
}
