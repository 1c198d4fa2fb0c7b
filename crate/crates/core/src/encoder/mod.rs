//! Sentence encoder: token lookup backbone, mean or BiLSTM-attention pooling,
//! L2 normalization, and the exact backward pass through all of it.

mod checkpoint;
mod lstm;
mod params;
mod vocab;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use params::{
    EncoderParams, EncoderShape, LstmWeights, ParamGroup, ParamSet, Pooling, TENSOR_COUNT,
};
pub use vocab::{tokenize, TokenSequence, Vocabulary, PAD_ID, UNK_ID};

use crate::corpus::preprocess;
use crate::error::{Error, Result};
use lstm::DirectionTrace;

/// Denominator guard of the masked mean.
pub const MEAN_POOL_EPS: f64 = 1e-9;
/// Logit assigned to masked positions before the attention softmax.
pub const MASKED_LOGIT: f64 = -1e9;
/// Vectors with a smaller norm are treated as degenerate.
pub const NORM_FLOOR: f64 = 1e-12;

/// Token states `H`, `n x d` row-major. Masked rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub rows: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl HiddenStates {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.dim..(t + 1) * self.dim]
    }
}

/// BiLSTM output `L`, `n x 2h`: forward state then backward state per row.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmStates {
    pub rows: usize,
    pub hidden: usize,
    pub data: Vec<f64>,
}

impl BiLstmStates {
    pub fn row(&self, t: usize) -> &[f64] {
        let w = 2 * self.hidden;
        &self.data[t * w..(t + 1) * w]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub unit_norm: bool,
    /// Set when the pooled vector had no direction (e.g. empty text under
    /// mean pooling); `values` is then all zero.
    pub degenerate: bool,
}

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

fn check_mask(seq_len: usize, mask: &[u8]) -> Result<()> {
    if seq_len != mask.len() {
        return Err(Error::Shape(format!(
            "{seq_len} positions but mask of length {}",
            mask.len()
        )));
    }
    Ok(())
}

/// Backbone: row `t` of `H` is the embedding of token `t`, or zero when masked.
pub fn encode_tokens(seq: &TokenSequence, params: &EncoderParams) -> Result<HiddenStates> {
    check_mask(seq.ids.len(), &seq.mask)?;
    let d = params.shape.dim;
    let mut data = vec![0.0; seq.len() * d];
    for (t, (&id, &m)) in seq.ids.iter().zip(&seq.mask).enumerate() {
        if id >= params.shape.vocab_size {
            return Err(Error::TokenOutOfRange {
                id,
                vocab_size: params.shape.vocab_size,
            });
        }
        if m != 0 {
            data[t * d..(t + 1) * d].copy_from_slice(params.embedding_row(id));
        }
    }
    Ok(HiddenStates {
        rows: seq.len(),
        dim: d,
        data,
    })
}

/// `(Σ H_i·A_i) / (Σ A_i + ε)`, not normalized.
pub fn mean_pool(hidden: &HiddenStates, mask: &[u8]) -> Result<Vec<f64>> {
    check_mask(hidden.rows, mask)?;
    let mut sum = vec![0.0; hidden.dim];
    let mut count = 0.0;
    for t in (0..hidden.rows).filter(|&t| mask[t] != 0) {
        for (s, v) in sum.iter_mut().zip(hidden.row(t)) {
            *s += v;
        }
        count += 1.0;
    }
    let denom = count + MEAN_POOL_EPS;
    Ok(sum.into_iter().map(|s| s / denom).collect())
}

pub fn bilstm_forward(
    hidden: &HiddenStates,
    mask: &[u8],
    params: &EncoderParams,
) -> Result<BiLstmStates> {
    check_mask(hidden.rows, mask)?;
    if hidden.dim != params.shape.dim {
        return Err(Error::Shape(format!(
            "hidden dim {} vs encoder dim {}",
            hidden.dim, params.shape.dim
        )));
    }
    Ok(lstm::bilstm_with_trace(hidden, mask, params).0)
}

fn attention_weights(
    states: &BiLstmStates,
    mask: &[u8],
    params: &EncoderParams,
) -> Result<Vec<f64>> {
    check_mask(states.rows, mask)?;
    if !mask.iter().any(|&m| m != 0) {
        return Err(Error::EmptyAttention);
    }
    let w = &params.weights.attn_weight;
    let b = params.weights.attn_bias[0];
    let logits: Vec<f64> = (0..states.rows)
        .map(|t| {
            if mask[t] == 0 {
                MASKED_LOGIT
            } else {
                b + states.row(t).iter().zip(w).map(|(l, w)| l * w).sum::<f64>()
            }
        })
        .collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn weighted_sum(states: &BiLstmStates, mask: &[u8], alpha: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; 2 * states.hidden];
    for t in (0..states.rows).filter(|&t| mask[t] != 0) {
        for (o, l) in out.iter_mut().zip(states.row(t)) {
            *o += alpha[t] * l;
        }
    }
    out
}

/// `α = softmax(W_a L)` over unmasked positions, `S = Σ α_i L_i`.
pub fn attention_pool(
    states: &BiLstmStates,
    mask: &[u8],
    params: &EncoderParams,
) -> Result<Vec<f64>> {
    let alpha = attention_weights(states, mask, params)?;
    Ok(weighted_sum(states, mask, &alpha))
}

/// Cached forward pass of one sequence.
#[derive(Debug, Clone)]
pub struct SequenceForward {
    seq: TokenSequence,
    norm: f64,
    embedding: EmbeddingVector,
    attention: Option<AttentionTrace>,
}

#[derive(Debug, Clone)]
struct AttentionTrace {
    hidden: HiddenStates,
    states: BiLstmStates,
    fwd: DirectionTrace,
    bwd: DirectionTrace,
    alpha: Vec<f64>,
}

impl SequenceForward {
    pub fn embedding(&self) -> &EmbeddingVector {
        &self.embedding
    }
}

fn normalize(pooled: Vec<f64>) -> (f64, EmbeddingVector) {
    let norm = pooled.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < NORM_FLOOR {
        let values = vec![0.0; pooled.len()];
        return (
            norm,
            EmbeddingVector {
                values,
                unit_norm: false,
                degenerate: true,
            },
        );
    }
    (
        norm,
        EmbeddingVector {
            values: pooled.into_iter().map(|v| v / norm).collect(),
            unit_norm: true,
            degenerate: false,
        },
    )
}

/// Full forward pass keeping what [`backward`] needs.
pub fn forward_sequence(params: &EncoderParams, seq: &TokenSequence) -> Result<SequenceForward> {
    let hidden = encode_tokens(seq, params)?;
    let (pooled, attention) = match params.pooling {
        Pooling::Mean => (mean_pool(&hidden, &seq.mask)?, None),
        Pooling::Attention => {
            let (states, fwd, bwd) = lstm::bilstm_with_trace(&hidden, &seq.mask, params);
            let alpha = attention_weights(&states, &seq.mask, params)?;
            let pooled = weighted_sum(&states, &seq.mask, &alpha);
            (
                pooled,
                Some(AttentionTrace {
                    hidden,
                    states,
                    fwd,
                    bwd,
                    alpha,
                }),
            )
        }
    };
    let (norm, embedding) = normalize(pooled);
    Ok(SequenceForward {
        seq: seq.clone(),
        norm,
        embedding,
        attention,
    })
}

/// Embedding of an already tokenized sequence.
pub fn embed_tokens(seq: &TokenSequence, params: &EncoderParams) -> Result<EmbeddingVector> {
    Ok(forward_sequence(params, seq)?.embedding)
}

/// Clean, tokenize, encode, pool and L2-normalize `text`.
pub fn embed_sentence(
    text: &str,
    vocab: &Vocabulary,
    params: &EncoderParams,
    max_len: usize,
) -> Result<EmbeddingVector> {
    let seq = tokenize(&preprocess(text), vocab, max_len);
    embed_tokens(&seq, params)
}

/// Gradients of a scalar loss wrt every parameter, given the loss gradient
/// wrt each sequence's unit embedding.
pub fn backward(
    params: &EncoderParams,
    forwards: &[SequenceForward],
    upstream: &[Vec<f64>],
) -> Result<ParamSet> {
    if forwards.len() != upstream.len() {
        return Err(Error::Shape(format!(
            "{} forward passes but {} upstream gradients",
            forwards.len(),
            upstream.len()
        )));
    }
    let mut grads = ParamSet::zeros(&params.shape);
    for (fwd, g) in forwards.iter().zip(upstream) {
        backward_sequence(params, fwd, g, &mut grads)?;
    }
    Ok(grads)
}

fn backward_sequence(
    params: &EncoderParams,
    fwd: &SequenceForward,
    upstream: &[f64],
    grads: &mut ParamSet,
) -> Result<()> {
    let dim_out = params.output_dim();
    if upstream.len() != dim_out {
        return Err(Error::Shape(format!(
            "upstream gradient of length {} for embeddings of dim {dim_out}",
            upstream.len()
        )));
    }
    if fwd.embedding.degenerate {
        return Ok(());
    }
    let v = &fwd.embedding.values;
    let vg: f64 = v.iter().zip(upstream).map(|(a, b)| a * b).sum();
    let d_pooled: Vec<f64> = v
        .iter()
        .zip(upstream)
        .map(|(vi, gi)| (gi - vi * vg) / fwd.norm)
        .collect();

    let d = params.shape.dim;
    let seq = &fwd.seq;
    match &fwd.attention {
        None => {
            let count = seq.active() as f64;
            let scale = 1.0 / (count + MEAN_POOL_EPS);
            for (&id, _) in seq.ids.iter().zip(&seq.mask).filter(|(_, &m)| m != 0) {
                let row = &mut grads.embedding[id * d..(id + 1) * d];
                for (r, g) in row.iter_mut().zip(&d_pooled) {
                    *r += g * scale;
                }
            }
        }
        Some(trace) => {
            let h = params.shape.hidden;
            let w = &params.weights.attn_weight;
            let n = trace.states.rows;
            let mut d_states = vec![0.0; n * 2 * h];
            let active: Vec<usize> = (0..n).filter(|&t| seq.mask[t] != 0).collect();
            let d_alpha: Vec<f64> = active
                .iter()
                .map(|&t| {
                    trace
                        .states
                        .row(t)
                        .iter()
                        .zip(&d_pooled)
                        .map(|(l, g)| l * g)
                        .sum()
                })
                .collect();
            let mean_d_alpha: f64 = active
                .iter()
                .zip(&d_alpha)
                .map(|(&t, da)| trace.alpha[t] * da)
                .sum();
            for (&t, &da) in active.iter().zip(&d_alpha) {
                let alpha = trace.alpha[t];
                let dz = alpha * (da - mean_d_alpha);
                grads.attn_bias[0] += dz;
                let row = trace.states.row(t);
                let d_row = &mut d_states[t * 2 * h..(t + 1) * 2 * h];
                for k in 0..2 * h {
                    grads.attn_weight[k] += dz * row[k];
                    d_row[k] = alpha * d_pooled[k] + dz * w[k];
                }
            }
            let mut d_hidden = vec![0.0; n * d];
            lstm::backprop_direction(
                &params.weights.lstm_fwd,
                &trace.fwd,
                &trace.hidden,
                &d_states,
                h,
                0,
                &mut grads.lstm_fwd,
                &mut d_hidden,
            );
            lstm::backprop_direction(
                &params.weights.lstm_bwd,
                &trace.bwd,
                &trace.hidden,
                &d_states,
                h,
                h,
                &mut grads.lstm_bwd,
                &mut d_hidden,
            );
            for &t in &active {
                let id = seq.ids[t];
                let row = &mut grads.embedding[id * d..(id + 1) * d];
                for (r, g) in row.iter_mut().zip(&d_hidden[t * d..(t + 1) * d]) {
                    *r += g;
                }
            }
        }
    }
    Ok(())
}

/// Vocabulary, weights and sequence length bundled for inference.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub vocab: Vocabulary,
    pub params: EncoderParams,
    pub max_len: usize,
}

impl Encoder {
    pub fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        embed_sentence(text, &self.vocab, &self.params, self.max_len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn shape(v: usize, d: usize, h: usize) -> EncoderShape {
        EncoderShape {
            vocab_size: v,
            dim: d,
            hidden: h,
        }
    }

    fn random_params(seed: u64, pooling: Pooling) -> EncoderParams {
        let mut p = EncoderParams::init(shape(12, 5, 3), pooling, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        for (_, _, t) in p.weights.tensors_mut() {
            for v in t.iter_mut() {
                *v = rng.gen_range(-0.8..0.8);
            }
        }
        p
    }

    fn states(rows: usize, dim: usize, data: Vec<f64>) -> HiddenStates {
        HiddenStates { rows, dim, data }
    }

    #[test]
    fn lookup_backbone() {
        let mut p = EncoderParams::init(shape(3, 2, 1), Pooling::Mean, 0);
        p.weights.embedding[4..6].copy_from_slice(&[1.0, 2.0]);
        let seq = TokenSequence::from_ids(vec![2, 0]);
        let h = encode_tokens(&seq, &p).unwrap();
        assert_eq!(h.data, vec![1.0, 2.0, 0.0, 0.0]);
        let pad = TokenSequence::from_ids(vec![0, 0]);
        assert!(encode_tokens(&pad, &p)
            .unwrap()
            .data
            .iter()
            .all(|&v| v == 0.0));
        let bad = TokenSequence::from_ids(vec![3]);
        assert!(matches!(
            encode_tokens(&bad, &p),
            Err(Error::TokenOutOfRange { id: 3, .. })
        ));
    }

    #[test]
    fn mean_pool_examples() {
        let h = states(2, 2, vec![1.0, 3.0, 3.0, 5.0]);
        let v = mean_pool(&h, &[1, 1]).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-8 && (v[1] - 4.0).abs() < 1e-8);
        let v = mean_pool(&h, &[1, 0]).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-8 && (v[1] - 3.0).abs() < 1e-8);
        let v = mean_pool(&h, &[0, 0]).unwrap();
        assert!(v.iter().all(|x| x.abs() <= MEAN_POOL_EPS * 5.0));
        assert!(mean_pool(&h, &[1]).is_err());
    }

    #[test]
    fn zero_lstm_is_zero() {
        let mut p = EncoderParams::init(shape(4, 3, 2), Pooling::Attention, 1);
        for lstm in [&mut p.weights.lstm_fwd, &mut p.weights.lstm_bwd] {
            lstm.w_ih.fill(0.0);
            lstm.w_hh.fill(0.0);
            lstm.bias.fill(0.0);
        }
        let h = states(3, 3, vec![0.3, -1.0, 2.0, 0.1, 0.2, 0.3, 5.0, 5.0, 5.0]);
        let l = bilstm_forward(&h, &[1, 1, 1], &p).unwrap();
        assert!(l.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_step_directions_agree() {
        let mut p = random_params(3, Pooling::Attention);
        p.weights.lstm_bwd = p.weights.lstm_fwd.clone();
        let h = states(1, 5, vec![0.4, -0.2, 0.9, 0.0, 0.1]);
        let l = bilstm_forward(&h, &[1], &p).unwrap();
        assert_eq!(l.row(0)[..3], l.row(0)[3..]);
    }

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Scalar re-implementation, one gate element at a time.
    fn scalar_lstm(w: &LstmWeights, xs: &[Vec<f64>], order: &[usize], hd: usize) -> Vec<Vec<f64>> {
        let d = xs[0].len();
        let mut out = vec![vec![0.0; hd]; xs.len()];
        let mut h = vec![0.0; hd];
        let mut c = vec![0.0; hd];
        for &t in order {
            let mut new_h = vec![0.0; hd];
            let mut new_c = vec![0.0; hd];
            for j in 0..hd {
                let pre = |gate: usize| {
                    let r = gate * hd + j;
                    let mut a = w.bias[r];
                    for k in 0..d {
                        a += w.w_ih[r * d + k] * xs[t][k];
                    }
                    for k in 0..hd {
                        a += w.w_hh[r * hd + k] * h[k];
                    }
                    a
                };
                let i = sig(pre(0));
                let f = sig(pre(1));
                let g = pre(2).tanh();
                let o = sig(pre(3));
                new_c[j] = f * c[j] + i * g;
                new_h[j] = o * new_c[j].tanh();
            }
            h = new_h;
            c = new_c;
            out[t] = h.clone();
        }
        out
    }

    #[test]
    fn bilstm_matches_scalar_oracle() {
        for seed in 0..5 {
            let p = random_params(seed, Pooling::Attention);
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            let n = 6;
            let mask = [1u8, 1, 0, 1, 1, 0];
            let xs: Vec<Vec<f64>> = (0..n)
                .map(|t| {
                    if mask[t] == 0 {
                        vec![0.0; 5]
                    } else {
                        (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()
                    }
                })
                .collect();
            let h = states(n, 5, xs.concat());
            let l = bilstm_forward(&h, &mask, &p).unwrap();
            let active: Vec<usize> = (0..n).filter(|&t| mask[t] == 1).collect();
            let rev: Vec<usize> = active.iter().rev().copied().collect();
            let f = scalar_lstm(&p.weights.lstm_fwd, &xs, &active, 3);
            let b = scalar_lstm(&p.weights.lstm_bwd, &xs, &rev, 3);
            for t in 0..n {
                let expect: Vec<f64> = if mask[t] == 0 {
                    vec![0.0; 6]
                } else {
                    [f[t].clone(), b[t].clone()].concat()
                };
                for (a, e) in l.row(t).iter().zip(&expect) {
                    assert!((a - e).abs() <= 1e-12, "t={t}: {a} vs {e}");
                }
            }
        }
    }

    #[test]
    fn attention_pool_examples() {
        let mut p = random_params(5, Pooling::Attention);
        let l = BiLstmStates {
            rows: 3,
            hidden: 3,
            data: (0..18).map(|i| (i as f64 * 0.37).sin()).collect(),
        };
        // uniform weights => masked mean
        p.weights.attn_weight.fill(0.0);
        p.weights.attn_bias[0] = 0.0;
        let s = attention_pool(&l, &[1, 0, 1], &p).unwrap();
        for k in 0..6 {
            let mean = (l.row(0)[k] + l.row(2)[k]) / 2.0;
            assert!((s[k] - mean).abs() < 1e-15);
        }
        // singleton
        let p = random_params(6, Pooling::Attention);
        let s = attention_pool(&l, &[0, 1, 0], &p).unwrap();
        assert_eq!(s, l.row(1));
        // brute force
        let mask = [1u8, 1, 1];
        let z: Vec<f64> = (0..3)
            .map(|t| {
                p.weights.attn_bias[0]
                    + (0..6)
                        .map(|k| p.weights.attn_weight[k] * l.row(t)[k])
                        .sum::<f64>()
            })
            .collect();
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let s = attention_pool(&l, &mask, &p).unwrap();
        for k in 0..6 {
            let expect: f64 = (0..3).map(|t| z[t].exp() / denom * l.row(t)[k]).sum();
            assert!((s[k] - expect).abs() <= 1e-12);
        }
        assert!(matches!(
            attention_pool(&l, &[0, 0, 0], &p),
            Err(Error::EmptyAttention)
        ));
    }

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens((0..10).map(|i| format!("w{i}")))
    }

    #[test]
    fn embed_sentence_contracts() {
        let v = vocab();
        for pooling in [Pooling::Mean, Pooling::Attention] {
            let p = random_params(7, pooling);
            let e = embed_sentence("w1 w2 w3", &v, &p, 8).unwrap();
            let norm: f64 = e.values.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() <= 1e-6 && e.unit_norm);
            assert_eq!(e, embed_sentence("w1 w2 w3", &v, &p, 8).unwrap());
            assert_eq!(e, embed_sentence("  w1\t w2   w3 ", &v, &p, 8).unwrap());
            // padding invariance, bit for bit
            assert_eq!(e, embed_sentence("w1 w2 w3", &v, &p, 20).unwrap());
        }
        let mean = random_params(7, Pooling::Mean);
        let empty = embed_sentence("🔥", &v, &mean, 4).unwrap();
        assert!(empty.degenerate && empty.values.iter().all(|&x| x == 0.0));
        let attn = random_params(7, Pooling::Attention);
        assert!(matches!(
            embed_sentence("", &v, &attn, 4),
            Err(Error::EmptyAttention)
        ));
    }

    #[test]
    fn order_sensitivity() {
        let v = vocab();
        let mean = random_params(8, Pooling::Mean);
        assert_eq!(
            embed_sentence("w1 w2 w5", &v, &mean, 6).unwrap(),
            embed_sentence("w5 w1 w2", &v, &mean, 6).unwrap()
        );
        let attn = random_params(8, Pooling::Attention);
        assert_ne!(
            embed_sentence("w1 w2 w5", &v, &attn, 6).unwrap(),
            embed_sentence("w5 w1 w2", &v, &attn, 6).unwrap()
        );
    }

    #[test]
    fn embedding_scale_keeps_mean_direction() {
        let v = vocab();
        let p = random_params(9, Pooling::Mean);
        let mut scaled = p.clone();
        for x in &mut scaled.weights.embedding {
            *x *= 3.7;
        }
        let a = embed_sentence("w1 w4 w9", &v, &p, 6).unwrap();
        let b = embed_sentence("w1 w4 w9", &v, &scaled, 6).unwrap();
        let cos: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
        assert!(cos >= 1.0 - 1e-9);
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        for pooling in [Pooling::Mean, Pooling::Attention] {
            let p = random_params(10, pooling);
            let seq = TokenSequence::from_ids(vec![3, 4, 5, 0]);
            let f = forward_sequence(&p, &seq).unwrap();
            let g = backward(&p, &[f], &[vec![0.0; p.output_dim()]]).unwrap();
            assert_eq!(g.max_abs(), 0.0);
        }
    }

    #[test]
    fn masked_rows_get_no_gradient() {
        let p = random_params(11, Pooling::Mean);
        // token 6 appears only under a zero mask
        let seq = TokenSequence {
            ids: vec![3, 4, 6],
            mask: vec![1, 1, 0],
        };
        let f = forward_sequence(&p, &seq).unwrap();
        let g = backward(&p, &[f], &[vec![1.0; 5]]).unwrap();
        assert!(g.embedding[6 * 5..7 * 5].iter().all(|&x| x == 0.0));
        assert!(g.embedding[3 * 5..4 * 5].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn upstream_shape_checked() {
        let p = random_params(12, Pooling::Mean);
        let f = forward_sequence(&p, &TokenSequence::from_ids(vec![2])).unwrap();
        assert!(matches!(
            backward(&p, &[f], &[vec![0.0; 2]]),
            Err(Error::Shape(_))
        ));
    }
}
