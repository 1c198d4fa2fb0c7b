//! Contrastive training of the shared-weight bi-encoder.
//!
//! Each batch pairs post `i` with its gold fact-check `i`; every other
//! fact-check in the batch is a negative for post `i` and vice versa.

mod folds;
mod gradcheck;
mod loss;
mod optim;

pub use folds::{kfold_split, sample_negative_pool, FoldAssignment};
pub use gradcheck::{gradient_check, relative_error, GradCheckReport, FD_STEP, REL_FLOOR};
pub use loss::{
    contrastive_loss, cosine, mnr_loss, similarity_backward, similarity_matrix, symmetric_loss,
    LossKind, LossOutput, SimilarityMatrix, TEMPERATURE,
};
pub use optim::{
    adamw_step, adamw_update, clip_gradients, lr_schedule, OptimizerSettings, OptimizerState,
    ADAM_EPS, BETA1, BETA2,
};

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{select_text, Corpus, TextQuality, TextView};
use crate::encoder::{
    backward, forward_sequence, tokenize, Encoder, EncoderParams, EncoderShape, ParamSet, Pooling,
    TokenSequence, Vocabulary,
};
use crate::error::{Error, Result};

/// Training hyperparameters. Key names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_steps: usize,
    pub lr_backbone: f64,
    pub lr_custom: f64,
    pub weight_decay: f64,
    pub clip_value: f64,
    pub temperature: f64,
    pub seed: u64,
    pub loss: LossKind,
    /// Stop after this many optimizer steps, 0 for no limit.
    pub max_steps: usize,
    pub freeze_backbone: bool,
    pub freeze_custom: bool,
    /// Number of folds used when training on a fold complement.
    pub folds: usize,
    /// Drop pairs whose post fails the short / symbol-heavy filter.
    pub drop_noisy: bool,
    pub pooling: Pooling,
    pub dim: usize,
    pub hidden: usize,
    pub max_len: usize,
    pub min_count: usize,
}

impl TrainConfig {
    /// Same-language setting: batch 24, 20 epochs, 400 warmup steps.
    pub fn multilingual() -> Self {
        Self {
            batch_size: 24,
            epochs: 20,
            warmup_steps: 400,
            lr_backbone: 1e-4,
            lr_custom: 1e-4,
            weight_decay: 0.005,
            clip_value: 1.0,
            temperature: TEMPERATURE,
            seed: 42,
            loss: LossKind::Symmetric,
            max_steps: 0,
            freeze_backbone: false,
            freeze_custom: false,
            folds: 5,
            drop_noisy: true,
            pooling: Pooling::Mean,
            dim: 64,
            hidden: 32,
            max_len: 64,
            min_count: 1,
        }
    }

    /// Cross-language setting: batch 36, 10 epochs, 500 warmup steps.
    pub fn crosslingual() -> Self {
        Self {
            batch_size: 36,
            epochs: 10,
            warmup_steps: 500,
            ..Self::multilingual()
        }
    }

    pub fn optimizer(&self) -> OptimizerSettings {
        OptimizerSettings {
            lr_backbone: self.lr_backbone,
            lr_custom: self.lr_custom,
            weight_decay: self.weight_decay,
            freeze_backbone: self.freeze_backbone,
            freeze_custom: self.freeze_custom,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size as f64),
            ("lr_backbone", self.lr_backbone),
            ("lr_custom", self.lr_custom),
            ("clip_value", self.clip_value),
            ("temperature", self.temperature),
            ("dim", self.dim as f64),
            ("max_len", self.max_len as f64),
        ];
        for (name, v) in positive {
            if v.is_nan() || v <= 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if self.pooling == Pooling::Attention && self.hidden == 0 {
            return Err(Error::InvalidArgument(
                "attention pooling needs hidden > 0".into(),
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::multilingual()
    }
}

/// One post / gold fact-check pair with its cleaned texts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub post_id: u64,
    pub fact_check_id: u64,
    pub post_text: String,
    pub fact_check_text: String,
}

/// Pairs in mapping order. Pairs with an empty side are always dropped;
/// noisy posts are dropped when `drop_noisy` is set.
pub fn training_pairs(corpus: &Corpus, view: &TextView, drop_noisy: bool) -> Vec<TrainingPair> {
    corpus
        .mappings()
        .iter()
        .filter_map(|m| {
            let post = select_text(corpus.post(m.post_id)?, view);
            let fact_check = select_text(corpus.fact_check(m.fact_check_id)?, view);
            let keep = match post.quality {
                TextQuality::Ok => true,
                TextQuality::Noisy => !drop_noisy,
                TextQuality::Empty => false,
            };
            (keep && !fact_check.is_empty()).then_some(TrainingPair {
                post_id: m.post_id,
                fact_check_id: m.fact_check_id,
                post_text: post.text,
                fact_check_text: fact_check.text,
            })
        })
        .collect()
}

/// Tokenized in-batch training example.
#[derive(Debug, Clone)]
pub struct Batch {
    pub posts: Vec<TokenSequence>,
    pub fact_checks: Vec<TokenSequence>,
    /// `B x B`; `true` removes an off-diagonal false negative.
    pub exclude: Vec<bool>,
}

impl Batch {
    /// Build a batch, excluding in-batch duplicates of the same post or the
    /// same fact-check from each other's negatives.
    pub fn new(
        posts: Vec<TokenSequence>,
        fact_checks: Vec<TokenSequence>,
        post_ids: &[u64],
        fact_check_ids: &[u64],
    ) -> Result<Self> {
        let b = posts.len();
        if fact_checks.len() != b || post_ids.len() != b || fact_check_ids.len() != b {
            return Err(Error::Shape("batch sides differ in length".into()));
        }
        let mut exclude = vec![false; b * b];
        for i in 0..b {
            for j in 0..b {
                exclude[i * b + j] = i != j
                    && (post_ids[i] == post_ids[j] || fact_check_ids[i] == fact_check_ids[j]);
            }
        }
        Ok(Self {
            posts,
            fact_checks,
            exclude,
        })
    }

    pub fn len(&self) -> usize {
        self.posts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posts.is_empty()
    }
}

fn batch_forward(
    params: &EncoderParams,
    batch: &Batch,
) -> Result<(
    Vec<crate::encoder::SequenceForward>,
    Vec<crate::encoder::SequenceForward>,
)> {
    let q = batch
        .posts
        .iter()
        .map(|s| forward_sequence(params, s))
        .collect::<Result<Vec<_>>>()?;
    let c = batch
        .fact_checks
        .iter()
        .map(|s| forward_sequence(params, s))
        .collect::<Result<Vec<_>>>()?;
    Ok((q, c))
}

fn values(fwd: &[crate::encoder::SequenceForward]) -> Vec<Vec<f64>> {
    fwd.iter().map(|f| f.embedding().values.clone()).collect()
}

/// Loss of one batch under the current parameters.
pub fn batch_loss(
    params: &EncoderParams,
    batch: &Batch,
    temperature: f64,
    kind: LossKind,
) -> Result<f64> {
    let (q, c) = batch_forward(params, batch)?;
    let s = similarity_matrix(&values(&q), &values(&c), temperature)?;
    Ok(contrastive_loss(&s, kind, Some(&batch.exclude))?.loss)
}

/// Loss of one batch and its exact gradient wrt every parameter.
pub fn batch_loss_and_grad(
    params: &EncoderParams,
    batch: &Batch,
    temperature: f64,
    kind: LossKind,
) -> Result<(f64, ParamSet)> {
    let (q_fwd, c_fwd) = batch_forward(params, batch)?;
    let (q, c) = (values(&q_fwd), values(&c_fwd));
    let s = similarity_matrix(&q, &c, temperature)?;
    let out = contrastive_loss(&s, kind, Some(&batch.exclude))?;
    let (d_q, d_c) = similarity_backward(&q, &c, temperature, &out.grad)?;
    let forwards: Vec<_> = q_fwd.into_iter().chain(c_fwd).collect();
    let upstream: Vec<_> = d_q.into_iter().chain(d_c).collect();
    let grads = backward(params, &forwards, &upstream)?;
    Ok((out.loss, grads))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Mean pre-update batch loss over the epoch.
    pub loss: f64,
    pub lr_scale: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub step_losses: Vec<f64>,
}

impl TrainLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

impl fmt::Display for TrainLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.epochs {
            writeln!(
                f,
                "{}\t{}\t{:.6}\t{:.4}",
                e.epoch, e.step, e.loss, e.lr_scale
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub encoder: Encoder,
    pub log: TrainLog,
    /// Pairs used for training after filtering and fold exclusion.
    pub pairs: Vec<TrainingPair>,
}

/// Train an encoder on the corpus mappings, or on the complement of `fold`
/// when given (folds from [`kfold_split`] with `config.folds` and
/// `config.seed`).
pub fn train(
    corpus: &Corpus,
    view: &TextView,
    config: &TrainConfig,
    fold: Option<usize>,
) -> Result<TrainOutput> {
    config.validate()?;
    let all_pairs = training_pairs(corpus, view, config.drop_noisy);
    let pairs: Vec<TrainingPair> = match fold {
        None => all_pairs,
        Some(f) => {
            if f >= config.folds {
                return Err(Error::InvalidArgument(format!(
                    "fold {f} out of range for {} folds",
                    config.folds
                )));
            }
            let assignment = kfold_split(all_pairs.len(), config.folds, config.seed)?;
            assignment
                .complement(f)
                .into_iter()
                .map(|i| all_pairs[i].clone())
                .collect()
        }
    };
    if pairs.len() < config.batch_size.max(2) {
        return Err(Error::InsufficientData(format!(
            "{} training pairs for batch size {}",
            pairs.len(),
            config.batch_size
        )));
    }

    // Fact-check texts come from the whole corpus so that unseen candidates
    // still get their own token rows.
    let fact_check_texts: Vec<String> = corpus
        .fact_checks()
        .iter()
        .map(|f| select_text(f, view).text)
        .collect();
    let vocab = Vocabulary::build(
        pairs
            .iter()
            .map(|p| p.post_text.as_str())
            .chain(fact_check_texts.iter().map(String::as_str)),
        config.min_count,
    );
    let shape = EncoderShape {
        vocab_size: vocab.len(),
        dim: config.dim,
        hidden: config.hidden,
    };
    let mut params = EncoderParams::init(shape, config.pooling, config.seed);
    let post_seqs: Vec<TokenSequence> = pairs
        .iter()
        .map(|p| tokenize(&p.post_text, &vocab, config.max_len))
        .collect();
    let fc_seqs: Vec<TokenSequence> = pairs
        .iter()
        .map(|p| tokenize(&p.fact_check_text, &vocab, config.max_len))
        .collect();

    let settings = config.optimizer();
    let mut state = OptimizerState::new(&shape);
    let mut log = TrainLog::default();
    let mut step = 0usize;
    let limit = if config.max_steps == 0 {
        usize::MAX
    } else {
        config.max_steps
    };

    'epochs: for epoch in 0..config.epochs {
        if step >= limit {
            break;
        }
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(
            config.seed.wrapping_add(epoch as u64),
        ));
        let mut losses = Vec::new();
        let mut lr_scale = 0.0;
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            if step >= limit {
                log.epochs
                    .push(epoch_record(epoch, step, &losses, lr_scale));
                break 'epochs;
            }
            let batch = Batch::new(
                chunk.iter().map(|&i| post_seqs[i].clone()).collect(),
                chunk.iter().map(|&i| fc_seqs[i].clone()).collect(),
                &chunk.iter().map(|&i| pairs[i].post_id).collect::<Vec<_>>(),
                &chunk
                    .iter()
                    .map(|&i| pairs[i].fact_check_id)
                    .collect::<Vec<_>>(),
            )?;
            lr_scale = lr_schedule(step, config.warmup_steps);
            let (loss, mut grads) =
                batch_loss_and_grad(&params, &batch, config.temperature, config.loss)?;
            clip_gradients(&mut grads, config.clip_value);
            adamw_step(&mut params.weights, &grads, &mut state, &settings, lr_scale)?;
            step += 1;
            losses.push(loss);
            log.step_losses.push(loss);
        }
        let record = epoch_record(epoch, step, &losses, lr_scale);
        log::debug!(
            "epoch {} step {} loss {:.6} lr_scale {:.4}",
            record.epoch,
            record.step,
            record.loss,
            record.lr_scale
        );
        log.epochs.push(record);
    }

    Ok(TrainOutput {
        encoder: Encoder {
            vocab,
            params,
            max_len: config.max_len,
        },
        log,
        pairs,
    })
}

fn epoch_record(epoch: usize, step: usize, losses: &[f64], lr_scale: f64) -> EpochRecord {
    let loss = if losses.is_empty() {
        f64::NAN
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    };
    EpochRecord {
        epoch,
        step,
        loss,
        lr_scale,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let m = TrainConfig::multilingual();
        assert_eq!((m.batch_size, m.epochs, m.warmup_steps), (24, 20, 400));
        let c = TrainConfig::crosslingual();
        assert_eq!((c.batch_size, c.epochs, c.warmup_steps), (36, 10, 500));
        assert_eq!(c.weight_decay, 0.005);
        assert_eq!(c.clip_value, 1.0);
        assert_eq!(c.temperature, 0.05);
        assert_eq!(c.seed, 42);
    }

    #[test]
    fn batch_exclusion_mask() {
        let seq = TokenSequence::from_ids(vec![2]);
        let b = Batch::new(vec![seq.clone(); 3], vec![seq; 3], &[1, 2, 1], &[7, 7, 8]).unwrap();
        assert_eq!(
            b.exclude,
            vec![false, true, true, true, false, false, true, false, false]
        );
    }
}
