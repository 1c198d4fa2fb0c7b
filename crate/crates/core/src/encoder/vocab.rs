use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::corpus::{IMG_PLACEHOLDER, URL_PLACEHOLDER};
use crate::error::{Error, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Token to id map. Ids are dense in `0..len()`; 0 is padding and 1 is the
/// unknown token. The cleaning placeholders are ordinary entries matched
/// verbatim.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    /// Vocabulary holding pad and unk followed by `tokens` in order.
    /// Repeated or reserved entries are ignored.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut vocab = Self {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for t in [PAD_TOKEN, UNK_TOKEN] {
            vocab.push(t.to_string());
        }
        for t in tokens {
            vocab.push(t.into());
        }
        vocab
    }

    fn push(&mut self, token: String) {
        if !self.ids.contains_key(&token) {
            self.ids.insert(token.clone(), self.tokens.len());
            self.tokens.push(token);
        }
    }

    /// Build from cleaned texts, keeping tokens seen at least `min_count`
    /// times. Order is by descending frequency, then lexicographic; the two
    /// placeholders always follow.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for piece in split_tokens(text) {
                if let Piece::Word(w) = piece {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_count.max(1))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Self::from_tokens(
            ranked
                .into_iter()
                .map(|(t, _)| t)
                .chain([URL_PLACEHOLDER.to_string(), IMG_PLACEHOLDER.to_string()]),
        )
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// One token per line; the line number is the id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = String::new();
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        file.write_all(out.as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for line in BufReader::new(file).lines() {
            tokens.push(line.map_err(|e| Error::io(path, e))?);
        }
        let reserved = [PAD_TOKEN, UNK_TOKEN];
        if tokens.len() < reserved.len() || tokens[..reserved.len()] != reserved {
            return Err(Error::Corrupt {
                offset: 0,
                message: format!("{} does not start with the reserved tokens", path.display()),
            });
        }
        let vocab = Self::from_tokens(tokens.iter().skip(reserved.len()).cloned());
        if vocab.len() != tokens.len() {
            return Err(Error::Corrupt {
                offset: 0,
                message: format!("{} contains duplicate tokens", path.display()),
            });
        }
        Ok(vocab)
    }
}

enum Piece {
    Word(String),
    Placeholder(&'static str),
}

/// Lowercased alphanumeric runs plus verbatim placeholders;
/// whitespace and punctuation separate tokens and are dropped.
fn split_tokens(text: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    for chunk in text.split_whitespace() {
        let mut rest = chunk;
        while !rest.is_empty() {
            let next = [URL_PLACEHOLDER, IMG_PLACEHOLDER]
                .into_iter()
                .filter_map(|p| rest.find(p).map(|pos| (pos, p)))
                .min_by_key(|(pos, _)| *pos);
            let (head, special) = match next {
                Some((pos, p)) => {
                    let head = &rest[..pos];
                    rest = &rest[pos + p.len()..];
                    (head, Some(p))
                }
                None => {
                    let head = rest;
                    rest = "";
                    (head, None)
                }
            };
            for word in head.split(|c: char| !c.is_alphanumeric()) {
                if !word.is_empty() {
                    pieces.push(Piece::Word(word.to_lowercase()));
                }
            }
            if let Some(p) = special {
                pieces.push(Piece::Placeholder(p));
            }
        }
    }
    pieces
}

/// Token ids with the matching attention mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub mask: Vec<u8>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of unmasked positions.
    pub fn active(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0).count()
    }

    /// Sequence from raw ids; pad ids get mask 0.
    pub fn from_ids(ids: Vec<usize>) -> Self {
        let mask = ids.iter().map(|&i| u8::from(i != PAD_ID)).collect();
        Self { ids, mask }
    }
}

pub fn tokenize(text: &str, vocab: &Vocabulary, max_len: usize) -> TokenSequence {
    let mut ids: Vec<usize> = split_tokens(text)
        .into_iter()
        .map(|p| match p {
            Piece::Word(w) => vocab.id(&w),
            Piece::Placeholder(p) => vocab.id(p),
        })
        .take(max_len)
        .collect();
    ids.resize(max_len, PAD_ID);
    TokenSequence::from_ids(ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_vocab() -> Vocabulary {
        Vocabulary::from_tokens(["hello", "world", URL_PLACEHOLDER, IMG_PLACEHOLDER])
    }

    #[test]
    fn maps_and_pads() {
        let v = small_vocab();
        let s = tokenize("hello world", &v, 4);
        assert_eq!(s.ids, vec![2, 3, 0, 0]);
        assert_eq!(s.mask, vec![1, 1, 0, 0]);
    }

    #[test]
    fn unknown_and_empty() {
        let v = small_vocab();
        assert_eq!(tokenize("zzz", &v, 4).ids, vec![UNK_ID, 0, 0, 0]);
        let empty = tokenize("", &v, 4);
        assert_eq!(empty.ids, vec![0; 4]);
        assert_eq!(empty.mask, vec![0; 4]);
    }

    #[test]
    fn placeholders_punctuation_case_truncation() {
        let v = small_vocab();
        let s = tokenize("Hello, WORLD! see:<URL> <IMG>", &v, 5);
        assert_eq!(s.ids, vec![2, 3, UNK_ID, 4, 5]);
        assert_eq!(tokenize("hello hello hello", &v, 2).ids, vec![2, 2]);
        let bare = Vocabulary::from_tokens(["hello"]);
        assert_eq!(tokenize("<URL>", &bare, 1).ids, vec![UNK_ID]);
    }

    #[test]
    fn build_orders_by_frequency() {
        let v = Vocabulary::build(["b a", "a c", "a b"], 1);
        assert_eq!(v.token(2), Some("a"));
        assert_eq!(v.token(3), Some("b"));
        assert_eq!(v.token(4), Some("c"));
        assert_eq!(v.token(5), Some(URL_PLACEHOLDER));
        let v2 = Vocabulary::build(["b a", "a c", "a b"], 2);
        assert_eq!(v2.len(), 6);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::build(["x y z", "é ü"], 1);
        v.save(&path).unwrap();
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
    }
}
