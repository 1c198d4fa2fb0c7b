//! Train, embed, index, retrieve and score in one call.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use crate::corpus::{select_text, Corpus, TextView};
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport, GoldMapping};
use crate::index::{build_index, RankedList, VectorIndex};
use crate::training::{
    kfold_split, sample_negative_pool, train, training_pairs, TrainConfig, TrainOutput,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub view: TextView,
    /// Hits kept per post.
    pub k: usize,
    /// Share of non-gold fact-checks kept in the candidate pool.
    pub negative_fraction: f64,
    /// Hold out this fold for evaluation; `None` evaluates on the training
    /// posts.
    pub fold: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            view: TextView::default(),
            k: 10,
            negative_fraction: 1.0,
            fold: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub train: TrainOutput,
    pub index: VectorIndex,
    pub predictions: BTreeMap<u64, RankedList>,
    pub report: EvalReport,
}

/// Embed the listed fact-checks in id order. Empty texts and degenerate
/// vectors are skipped with a warning since they cannot be indexed.
pub fn embed_fact_checks(
    encoder: &Encoder,
    corpus: &Corpus,
    view: &TextView,
    ids: &BTreeSet<u64>,
) -> Result<Vec<(u64, Vec<f64>)>> {
    let mut out = Vec::with_capacity(ids.len());
    for &id in ids {
        let fc = corpus
            .fact_check(id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fact-check {id}")))?;
        let text = select_text(fc, view);
        if text.is_empty() {
            log::warn!("fact-check {id} has no usable text, not indexed");
            continue;
        }
        let e = encoder.embed(&text.text)?;
        if e.degenerate {
            log::warn!("fact-check {id} embeds to a zero vector, not indexed");
            continue;
        }
        out.push((id, e.values));
    }
    Ok(out)
}

/// Embed and search every `(post_id, text)` query in parallel. Queries with
/// a degenerate embedding get an empty list.
pub fn retrieve(
    encoder: &Encoder,
    index: &VectorIndex,
    queries: &[(u64, String)],
    k: usize,
) -> Result<BTreeMap<u64, RankedList>> {
    let lists = queries
        .par_iter()
        .map(|(post_id, text)| {
            let e = encoder.embed(text)?;
            if e.degenerate {
                log::warn!("post {post_id} embeds to a zero vector");
                return Ok(RankedList::new(*post_id));
            }
            index.search(*post_id, &e.values, k)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(lists.into_iter().map(|l| (l.post_id, l)).collect())
}

/// Cleaned text of each post under `view`.
pub fn post_queries(corpus: &Corpus, view: &TextView, ids: &BTreeSet<u64>) -> Vec<(u64, String)> {
    ids.iter()
        .filter_map(|&id| corpus.post(id).map(|p| (id, select_text(p, view).text)))
        .collect()
}

pub fn run_pipeline(corpus: &Corpus, config: &PipelineConfig) -> Result<PipelineOutput> {
    let tc = &config.train;
    let eval_posts: BTreeSet<u64> = match config.fold {
        None => training_pairs(corpus, &config.view, tc.drop_noisy)
            .iter()
            .map(|p| p.post_id)
            .collect(),
        Some(f) => {
            let pairs = training_pairs(corpus, &config.view, tc.drop_noisy);
            let folds = kfold_split(pairs.len(), tc.folds, tc.seed)?;
            folds
                .members(f)
                .into_iter()
                .map(|i| pairs[i].post_id)
                .collect()
        }
    };
    let trained = train(corpus, &config.view, tc, config.fold)?;
    let pool = sample_negative_pool(corpus, &eval_posts, config.negative_fraction, tc.seed)?;
    let entries = embed_fact_checks(&trained.encoder, corpus, &config.view, &pool)?;
    let index = build_index(entries)?;
    let queries = post_queries(corpus, &config.view, &eval_posts);
    let predictions = retrieve(&trained.encoder, &index, &queries, config.k)?;
    let gold = GoldMapping::from_corpus(corpus).restrict(&eval_posts);
    let report = evaluate(&predictions, &gold, config.k)?;
    Ok(PipelineOutput {
        train: trained,
        index,
        predictions,
        report,
    })
}
