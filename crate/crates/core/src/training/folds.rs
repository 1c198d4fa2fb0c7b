use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

/// Fold id of every training pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of: Vec<usize>,
}

impl FoldAssignment {
    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    /// Pair indices in `fold`, ascending.
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] == fold)
            .collect()
    }

    /// Pair indices outside `fold`, ascending.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.fold_of.len())
            .filter(|&i| self.fold_of[i] != fold)
            .collect()
    }
}

/// Seeded shuffle, then round-robin assignment to `k` folds.
pub fn kfold_split(pair_count: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "k must be at least 2, got {k}"
        )));
    }
    if pair_count < k {
        return Err(Error::InsufficientData(format!(
            "{pair_count} pairs cannot fill {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..pair_count).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; pair_count];
    for (position, &pair) in order.iter().enumerate() {
        fold_of[pair] = position % k;
    }
    Ok(FoldAssignment { k, fold_of })
}

/// Evaluation candidates: every gold fact-check of `eval_posts` plus a seeded
/// uniform sample of `⌊fraction · N⌋` of the `N` remaining fact-checks.
pub fn sample_negative_pool(
    corpus: &Corpus,
    eval_posts: &BTreeSet<u64>,
    fraction: f64,
    seed: u64,
) -> Result<BTreeSet<u64>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "negative fraction must be in (0, 1], got {fraction}"
        )));
    }
    let gold: HashSet<u64> = corpus
        .mappings()
        .iter()
        .filter(|m| eval_posts.contains(&m.post_id))
        .map(|m| m.fact_check_id)
        .collect();
    let mut negatives: Vec<u64> = corpus
        .fact_checks()
        .iter()
        .map(|f| f.id)
        .filter(|id| !gold.contains(id))
        .collect();
    negatives.sort_unstable();
    let take = (fraction * negatives.len() as f64).floor() as usize;
    negatives.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    Ok(gold
        .into_iter()
        .chain(negatives.into_iter().take(take))
        .collect())
}
