//! Score-level fusion of ranked lists from several runs.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::index::{top_k, RankedList};

/// Ranked lists of one model or fold, keyed by post id.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRun {
    pub name: String,
    pub lists: BTreeMap<u64, RankedList>,
}

impl ModelRun {
    pub fn new(name: impl Into<String>, lists: impl IntoIterator<Item = RankedList>) -> Self {
        Self {
            name: name.into(),
            lists: lists.into_iter().map(|l| (l.post_id, l)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    ScoreSum,
    Rrf,
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMethod::ScoreSum => "score_sum",
            FusionMethod::Rrf => "rrf",
        })
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score_sum" => Ok(FusionMethod::ScoreSum),
            "rrf" => Ok(FusionMethod::Rrf),
            other => Err(Error::InvalidArgument(format!(
                "unknown fusion method {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    pub method: FusionMethod,
    pub rrf_constant: f64,
    pub k_out: usize,
    /// Rescale each run's list to [0, 1] before summing.
    pub min_max: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            method: FusionMethod::ScoreSum,
            rrf_constant: 60.0,
            k_out: 10,
            min_max: false,
        }
    }
}

fn contributions(list: &RankedList, config: &FusionConfig) -> Vec<(u64, f64)> {
    match config.method {
        FusionMethod::Rrf => list
            .hits
            .iter()
            .enumerate()
            .map(|(rank, &(id, _))| (id, 1.0 / (config.rrf_constant + (rank + 1) as f64)))
            .collect(),
        FusionMethod::ScoreSum if config.min_max => {
            let (lo, hi) = list
                .hits
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, s)| {
                    (lo.min(s), hi.max(s))
                });
            list.hits
                .iter()
                .map(|&(id, s)| (id, if hi > lo { (s - lo) / (hi - lo) } else { 1.0 }))
                .collect()
        }
        FusionMethod::ScoreSum => list.hits.clone(),
    }
}

/// Fuse runs post by post. Candidates missing from a run's list get
/// nothing from that run.
pub fn fuse(runs: &[ModelRun], config: &FusionConfig) -> Result<BTreeMap<u64, RankedList>> {
    if runs.is_empty() {
        return Err(Error::InvalidArgument("no runs to fuse".into()));
    }
    if config.k_out == 0 {
        return Err(Error::InvalidArgument("k_out must be at least 1".into()));
    }
    if config.method == FusionMethod::Rrf
        && (config.rrf_constant.is_nan() || config.rrf_constant <= 0.0)
    {
        return Err(Error::InvalidArgument(
            "rrf_constant must be positive".into(),
        ));
    }
    let posts: BTreeSet<u64> = runs.iter().flat_map(|r| r.lists.keys().copied()).collect();
    for run in runs {
        if let Some(&post_id) = posts.iter().find(|p| !run.lists.contains_key(p)) {
            return Err(Error::MissingPost {
                post_id,
                run: run.name.clone(),
            });
        }
    }

    let mut out = BTreeMap::new();
    for &post_id in &posts {
        let mut parts: HashMap<u64, Vec<f64>> = HashMap::new();
        for run in runs {
            for (id, s) in contributions(&run.lists[&post_id], config) {
                parts.entry(id).or_default().push(s);
            }
        }
        // Summing in sorted order keeps the result independent of run order.
        let fused = parts
            .into_iter()
            .map(|(id, mut v)| {
                v.sort_unstable_by(f64::total_cmp);
                (id, v.into_iter().sum::<f64>())
            })
            .collect();
        out.insert(
            post_id,
            RankedList {
                post_id,
                hits: top_k(fused, config.k_out),
            },
        );
    }
    Ok(out)
}

/// JSON object keyed by decimal post id; scores keep 17 significant digits.
pub fn encode_run(run: &ModelRun) -> Result<String> {
    let mut s = String::from("{");
    for (i, (post_id, list)) in run.lists.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "\n  \"{post_id}\": [").unwrap();
        for (j, &(id, score)) in list.hits.iter().enumerate() {
            if !score.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "post {post_id}: non-finite score for {id}"
                )));
            }
            if j > 0 {
                s.push_str(", ");
            }
            write!(s, "[{id}, {score:.16e}]").unwrap();
        }
        s.push(']');
    }
    if !run.lists.is_empty() {
        s.push('\n');
    }
    s.push_str("}\n");
    Ok(s)
}

fn schema(pointer: String, message: &str) -> Error {
    Error::Schema {
        pointer,
        message: message.into(),
    }
}

pub fn decode_run(name: &str, text: &str) -> Result<ModelRun> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| schema(String::new(), &e.to_string()))?;
    let object = value
        .as_object()
        .ok_or_else(|| schema(String::new(), "expected an object"))?;
    let mut lists = BTreeMap::new();
    for (key, hits) in object {
        let pointer = format!("/{key}");
        let post_id: u64 = key
            .parse()
            .map_err(|_| schema(pointer.clone(), "post id is not an integer"))?;
        let hits = hits
            .as_array()
            .ok_or_else(|| schema(pointer.clone(), "expected an array"))?;
        let mut list = RankedList::new(post_id);
        for (i, hit) in hits.iter().enumerate() {
            let p = format!("{pointer}/{i}");
            let pair = hit
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| schema(p.clone(), "expected [fact_check_id, score]"))?;
            let id = pair[0]
                .as_u64()
                .ok_or_else(|| schema(format!("{p}/0"), "expected an unsigned integer"))?;
            let score = pair[1]
                .as_f64()
                .ok_or_else(|| schema(format!("{p}/1"), "expected a number"))?;
            list.hits.push((id, score));
        }
        list.validate()?;
        if lists.insert(post_id, list).is_some() {
            return Err(schema(pointer, "duplicate post id"));
        }
    }
    Ok(ModelRun {
        name: name.into(),
        lists,
    })
}

pub fn save_run(run: &ModelRun, path: &Path) -> Result<()> {
    std::fs::write(path, encode_run(run)?).map_err(|e| Error::io(path, e))
}

/// Load a run; its name is the file stem.
pub fn load_run(path: &Path) -> Result<ModelRun> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_run(&name, &text)
}
