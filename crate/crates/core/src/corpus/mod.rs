//! Dataset ingestion: posts, fact-checks and the gold mapping between them.

mod clean;

pub use clean::{
    contains_url, is_emoji, preprocess, CleaningConfig, TextQuality, IMG_PLACEHOLDER,
    URL_PLACEHOLDER,
};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FACT_CHECKS_FILE: &str = "fact_checks.csv";
pub const POSTS_FILE: &str = "posts.csv";
pub const MAPPING_FILE: &str = "fact_check_post_mapping.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactCheck {
    pub id: u64,
    pub claim: String,
    pub title: String,
    pub url: String,
    pub language: String,
    pub claim_en: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Post {
    pub id: u64,
    pub text: String,
    pub ocr_text: String,
    pub verdict: String,
    pub language: String,
    pub text_en: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingPair {
    pub post_id: u64,
    pub fact_check_id: u64,
    pub language_pair: String,
}

impl MappingPair {
    /// Source-side language of the pair, e.g. `spa` for `spa-eng`.
    pub fn post_language(&self) -> &str {
        self.language_pair
            .split('-')
            .next()
            .unwrap_or(&self.language_pair)
    }
}

/// Fully cross-referenced dataset. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    posts: Vec<Post>,
    fact_checks: Vec<FactCheck>,
    mappings: Vec<MappingPair>,
    post_index: HashMap<u64, usize>,
    fact_check_index: HashMap<u64, usize>,
}

impl Corpus {
    /// Build a corpus, checking id uniqueness and that every mapping resolves.
    pub fn new(
        posts: Vec<Post>,
        fact_checks: Vec<FactCheck>,
        mappings: Vec<MappingPair>,
    ) -> Result<Self> {
        let post_index = index_ids(posts.iter().map(|p| p.id), "post")?;
        let fact_check_index = index_ids(fact_checks.iter().map(|f| f.id), "fact-check")?;
        let mut seen = HashSet::new();
        for (row, m) in mappings.iter().enumerate() {
            // header is line 1
            let line = row as u64 + 2;
            if !post_index.contains_key(&m.post_id) {
                return Err(dangling(line, "post", m.post_id));
            }
            if !fact_check_index.contains_key(&m.fact_check_id) {
                return Err(dangling(line, "fact-check", m.fact_check_id));
            }
            if !seen.insert((m.post_id, m.fact_check_id)) {
                return Err(Error::MalformedRow {
                    file: MAPPING_FILE.into(),
                    line,
                    message: format!("duplicate mapping ({}, {})", m.post_id, m.fact_check_id),
                });
            }
        }
        Ok(Self {
            posts,
            fact_checks,
            mappings,
            post_index,
            fact_check_index,
        })
    }

    pub fn posts(&self) -> &[Post] {
        &self.posts
    }

    pub fn fact_checks(&self) -> &[FactCheck] {
        &self.fact_checks
    }

    pub fn mappings(&self) -> &[MappingPair] {
        &self.mappings
    }

    pub fn post(&self, id: u64) -> Option<&Post> {
        self.post_index.get(&id).map(|&i| &self.posts[i])
    }

    pub fn fact_check(&self, id: u64) -> Option<&FactCheck> {
        self.fact_check_index
            .get(&id)
            .map(|&i| &self.fact_checks[i])
    }

    /// Gold fact-check ids per post, ordered by post id.
    pub fn gold(&self) -> BTreeMap<u64, Vec<u64>> {
        let mut gold: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
        for m in &self.mappings {
            gold.entry(m.post_id).or_default().push(m.fact_check_id);
        }
        gold
    }

    pub fn stats(&self) -> CorpusStats {
        fn row<'a>(
            rows: &'a mut BTreeMap<String, LanguageCounts>,
            lang: &str,
        ) -> &'a mut LanguageCounts {
            rows.entry(lang.to_string())
                .or_insert_with(|| LanguageCounts {
                    language: lang.to_string(),
                    ..Default::default()
                })
        }
        let mut rows = BTreeMap::new();
        for p in &self.posts {
            row(&mut rows, &p.language).posts += 1;
        }
        for f in &self.fact_checks {
            row(&mut rows, &f.language).fact_checks += 1;
        }
        for m in &self.mappings {
            let lang = &self.post(m.post_id).expect("validated").language;
            row(&mut rows, lang).mappings += 1;
        }
        CorpusStats {
            rows: rows.into_values().collect(),
        }
    }
}

fn dangling(line: u64, kind: &'static str, id: u64) -> Error {
    Error::DanglingId {
        file: MAPPING_FILE.into(),
        line,
        kind,
        id,
    }
}

fn index_ids(ids: impl Iterator<Item = u64>, kind: &'static str) -> Result<HashMap<u64, usize>> {
    let mut index = HashMap::new();
    for (i, id) in ids.enumerate() {
        if index.insert(id, i).is_some() {
            return Err(Error::DuplicateId { kind, id });
        }
    }
    Ok(index)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct LanguageCounts {
    pub language: String,
    pub posts: usize,
    pub fact_checks: usize,
    pub mappings: usize,
}

/// Per-language counts, rendered as an aligned text table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub rows: Vec<LanguageCounts>,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<10} {:>10} {:>14} {:>10}",
            "language", "post ids", "fact-check ids", "mappings"
        )?;
        let mut total = LanguageCounts::default();
        for r in &self.rows {
            writeln!(
                f,
                "{:<10} {:>10} {:>14} {:>10}",
                r.language, r.posts, r.fact_checks, r.mappings
            )?;
            total.posts += r.posts;
            total.fact_checks += r.fact_checks;
            total.mappings += r.mappings;
        }
        writeln!(
            f,
            "{:<10} {:>10} {:>14} {:>10}",
            "total", total.posts, total.fact_checks, total.mappings
        )
    }
}

// ---------------------------------------------------------------------------
// CSV I/O
// ---------------------------------------------------------------------------

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map(|p| p.line()).unwrap_or(0);
    let message = err.to_string();
    match err.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        _ => Error::MalformedRow {
            file: file_name(path),
            line,
            message,
        },
    }
}

fn read_rows<T>(path: &Path, mut check: impl FnMut(&T) -> Option<String>) -> Result<Vec<T>>
where
    T: for<'de> Deserialize<'de>,
{
    let mut reader = open_reader(path)?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: T = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::MalformedRow {
                file: file_name(path),
                line,
                message: e.to_string(),
            })?;
        if let Some(message) = check(&row) {
            return Err(Error::MalformedRow {
                file: file_name(path),
                line,
                message,
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_fact_checks(path: &Path) -> Result<Vec<FactCheck>> {
    read_rows(path, |f: &FactCheck| {
        f.claim
            .trim()
            .is_empty()
            .then(|| format!("fact-check {} has an empty claim", f.id))
    })
}

pub fn load_posts(path: &Path) -> Result<Vec<Post>> {
    read_rows(path, |p: &Post| {
        (p.text.trim().is_empty() && p.ocr_text.trim().is_empty())
            .then(|| format!("post {} has neither text nor ocr_text", p.id))
    })
}

pub fn load_mappings(path: &Path) -> Result<Vec<MappingPair>> {
    read_rows(path, |_: &MappingPair| None)
}

/// Load `fact_checks.csv`, `posts.csv` and `fact_check_post_mapping.csv`
/// from `dir`.
pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let fact_checks = load_fact_checks(&dir.join(FACT_CHECKS_FILE))?;
    let posts = load_posts(&dir.join(POSTS_FILE))?;
    let mappings = load_mappings(&dir.join(MAPPING_FILE))?;
    Corpus::new(posts, fact_checks, mappings)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    if rows.is_empty() {
        writer
            .write_record(header)
            .map_err(|e| csv_error(path, e))?;
    }
    for row in rows {
        writer.serialize(row).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

/// Write the three dataset files into `dir` (created if needed).
pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_rows(
        &dir.join(FACT_CHECKS_FILE),
        corpus.fact_checks(),
        &["id", "claim", "title", "url", "language", "claim_en"],
    )?;
    write_rows(
        &dir.join(POSTS_FILE),
        corpus.posts(),
        &["id", "text", "ocr_text", "verdict", "language", "text_en"],
    )?;
    write_rows(
        &dir.join(MAPPING_FILE),
        corpus.mappings(),
        &["post_id", "fact_check_id", "language_pair"],
    )
}

// ---------------------------------------------------------------------------
// Text views
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewMode {
    /// Original-language fields.
    Source,
    /// English translation fields.
    English,
}

/// Which fields are encoded for posts and fact-checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextView {
    pub mode: ViewMode,
    /// Append the fact-check title after the claim (source mode only; titles
    /// carry no translation).
    pub include_title: bool,
    pub cleaning: CleaningConfig,
}

impl TextView {
    pub fn new(mode: ViewMode) -> Self {
        Self {
            mode,
            include_title: true,
            cleaning: CleaningConfig::default(),
        }
    }
}

impl Default for TextView {
    fn default() -> Self {
        Self::new(ViewMode::Source)
    }
}

/// Cleaned text plus its quality classification. Callers decide whether to
/// skip `Empty` or `Noisy` items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectedText {
    pub text: String,
    pub quality: TextQuality,
}

impl SelectedText {
    pub fn is_empty(&self) -> bool {
        self.quality == TextQuality::Empty
    }
}

/// Something that can be rendered under a [`TextView`].
pub trait TextSource {
    /// Raw fields in concatenation order. The boolean marks OCR output, which
    /// is dropped on its own when it fails the noise filter.
    fn fields(&self, view: &TextView) -> Vec<(&str, bool)>;
}

impl TextSource for Post {
    fn fields(&self, view: &TextView) -> Vec<(&str, bool)> {
        match view.mode {
            ViewMode::Source => vec![(&self.text, false), (&self.ocr_text, true)],
            ViewMode::English => vec![(&self.text_en, false)],
        }
    }
}

impl TextSource for FactCheck {
    fn fields(&self, view: &TextView) -> Vec<(&str, bool)> {
        match view.mode {
            ViewMode::Source if view.include_title => {
                vec![(&self.claim, false), (&self.title, false)]
            }
            ViewMode::Source => vec![(&self.claim, false)],
            ViewMode::English => vec![(&self.claim_en, false)],
        }
    }
}

pub fn select_text(item: &impl TextSource, view: &TextView) -> SelectedText {
    let mut parts = Vec::new();
    for (raw, is_ocr) in item.fields(view) {
        let cleaned = preprocess(raw);
        if cleaned.is_empty() {
            continue;
        }
        if is_ocr && view.cleaning.assess(&cleaned) != TextQuality::Ok {
            continue;
        }
        parts.push(cleaned);
    }
    let text = parts.join(" ");
    let quality = view.cleaning.assess(&text);
    SelectedText { text, quality }
}
