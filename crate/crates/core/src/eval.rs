//! Success@K scoring and the shared-task prediction file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::corpus::{load_mappings, Corpus, MappingPair};
use crate::error::{Error, Result};
use crate::index::RankedList;

/// Gold fact-check ids and language of every evaluated post.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GoldMapping {
    pub gold: BTreeMap<u64, BTreeSet<u64>>,
    pub language: BTreeMap<u64, String>,
}

impl GoldMapping {
    /// Language is the post side of each pair's language code.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = &'a MappingPair>) -> Self {
        let mut out = GoldMapping::default();
        for m in pairs {
            out.gold
                .entry(m.post_id)
                .or_default()
                .insert(m.fact_check_id);
            out.language
                .entry(m.post_id)
                .or_insert_with(|| m.post_language().to_string());
        }
        out
    }

    pub fn from_corpus(corpus: &Corpus) -> Self {
        Self::from_pairs(corpus.mappings())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_pairs(&load_mappings(path)?))
    }

    /// Keep only the given posts.
    pub fn restrict(&self, posts: &BTreeSet<u64>) -> Self {
        Self {
            gold: self
                .gold
                .iter()
                .filter(|(p, _)| posts.contains(p))
                .map(|(p, g)| (*p, g.clone()))
                .collect(),
            language: self
                .language
                .iter()
                .filter(|(p, _)| posts.contains(p))
                .map(|(p, l)| (*p, l.clone()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.gold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gold.is_empty()
    }
}

/// Anything that yields fact-check ids in rank order.
pub trait HitIds {
    fn hit_ids(&self) -> Vec<u64>;
}

impl HitIds for RankedList {
    fn hit_ids(&self) -> Vec<u64> {
        self.ids().collect()
    }
}

impl HitIds for Vec<u64> {
    fn hit_ids(&self) -> Vec<u64> {
        self.clone()
    }
}

fn is_hit<P: HitIds>(
    predictions: &BTreeMap<u64, P>,
    post_id: u64,
    gold: &BTreeSet<u64>,
    k: usize,
) -> bool {
    match predictions.get(&post_id) {
        Some(p) => p.hit_ids().iter().take(k).any(|id| gold.contains(id)),
        None => {
            log::warn!("post {post_id} has no prediction, counted as a miss");
            false
        }
    }
}

fn check(gold: &GoldMapping, k: usize) -> Result<()> {
    if gold.is_empty() {
        return Err(Error::InsufficientData("empty gold mapping".into()));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    if let Some((p, _)) = gold.gold.iter().find(|(_, g)| g.is_empty()) {
        return Err(Error::InsufficientData(format!("post {p} has no gold id")));
    }
    Ok(())
}

/// Fraction of gold posts with any gold id among their first `k` hits.
pub fn success_at_k<P: HitIds>(
    predictions: &BTreeMap<u64, P>,
    gold: &GoldMapping,
    k: usize,
) -> Result<f64> {
    check(gold, k)?;
    let hits = gold
        .gold
        .iter()
        .filter(|(&p, g)| is_hit(predictions, p, g, k))
        .count();
    Ok(hits as f64 / gold.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LanguageScore {
    pub s_at_k: f64,
    pub post_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub k: usize,
    /// Micro average over posts.
    pub s_at_k_avg: f64,
    /// Macro average over languages.
    pub avg_by_language: f64,
    pub per_language: BTreeMap<String, LanguageScore>,
    pub total: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let header = format!("S@{}", self.k);
        let width = self
            .per_language
            .keys()
            .map(String::len)
            .chain(["avg_by_language".len()])
            .max()
            .unwrap_or(0);
        writeln!(f, "{:<width$}  {:>8}  {:>7}", "language", header, "posts")?;
        for (lang, s) in &self.per_language {
            writeln!(f, "{lang:<width$}  {:>8.6}  {:>7}", s.s_at_k, s.post_count)?;
        }
        writeln!(
            f,
            "{:<width$}  {:>8.6}  {:>7}",
            "avg", self.s_at_k_avg, self.total
        )?;
        writeln!(
            f,
            "{:<width$}  {:>8.6}  {:>7}",
            "avg_by_language",
            self.avg_by_language,
            self.per_language.len()
        )
    }
}

/// Overall and per-language Success@K.
pub fn evaluate<P: HitIds>(
    predictions: &BTreeMap<u64, P>,
    gold: &GoldMapping,
    k: usize,
) -> Result<EvalReport> {
    check(gold, k)?;
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut total_hits = 0;
    for (&post_id, g) in &gold.gold {
        let lang = gold
            .language
            .get(&post_id)
            .ok_or_else(|| Error::InvalidArgument(format!("post {post_id} has no language")))?;
        let hit = is_hit(predictions, post_id, g, k);
        let entry = counts.entry(lang.clone()).or_default();
        entry.0 += usize::from(hit);
        entry.1 += 1;
        total_hits += usize::from(hit);
    }
    let per_language: BTreeMap<String, LanguageScore> = counts
        .into_iter()
        .map(|(lang, (hits, n))| {
            (
                lang,
                LanguageScore {
                    s_at_k: hits as f64 / n as f64,
                    post_count: n,
                },
            )
        })
        .collect();
    let avg_by_language =
        per_language.values().map(|s| s.s_at_k).sum::<f64>() / per_language.len() as f64;
    Ok(EvalReport {
        k,
        s_at_k_avg: total_hits as f64 / gold.len() as f64,
        avg_by_language,
        per_language,
        total: gold.len(),
    })
}

/// `{"Post-<id>": [ids...], ...}` on one line, posts ascending.
pub fn encode_predictions<P: HitIds>(predictions: &BTreeMap<u64, P>, k: usize) -> Result<String> {
    let mut entries = Vec::with_capacity(predictions.len());
    for (post_id, p) in predictions {
        let ids = p.hit_ids();
        if ids.len() > k {
            return Err(Error::InvalidArgument(format!(
                "post {post_id}: {} predictions exceed k = {k}",
                ids.len()
            )));
        }
        let ids: Vec<String> = ids.iter().map(u64::to_string).collect();
        entries.push(format!("\"Post-{post_id}\": [{}]", ids.join(", ")));
    }
    Ok(format!("{{{}}}", entries.join(", ")))
}

pub fn write_predictions<P: HitIds>(
    predictions: &BTreeMap<u64, P>,
    k: usize,
    path: &Path,
) -> Result<()> {
    let mut text = encode_predictions(predictions, k)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn decode_predictions(text: &str) -> Result<BTreeMap<u64, Vec<u64>>> {
    let schema = |pointer: String, message: &str| Error::Schema {
        pointer,
        message: message.into(),
    };
    let value: Value =
        serde_json::from_str(text).map_err(|e| schema(String::new(), &e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| schema(String::new(), "expected an object"))?;
    let mut out = BTreeMap::new();
    for (key, ids) in object {
        let pointer = format!("/{key}");
        let post_id = key
            .strip_prefix("Post-")
            .and_then(|s| s.parse::<u64>().ok())
            .ok_or_else(|| schema(pointer.clone(), "key must be \"Post-<id>\""))?;
        let ids = ids
            .as_array()
            .ok_or_else(|| schema(pointer.clone(), "expected an array"))?
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.as_u64()
                    .ok_or_else(|| schema(format!("{pointer}/{i}"), "expected an integer id"))
            })
            .collect::<Result<Vec<u64>>>()?;
        if out.insert(post_id, ids).is_some() {
            return Err(schema(pointer, "duplicate post id"));
        }
    }
    Ok(out)
}

pub fn read_predictions(path: &Path) -> Result<BTreeMap<u64, Vec<u64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_predictions(&text)
}
