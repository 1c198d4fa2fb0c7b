//! Social-media text normalization.
//!
//! Cleaning runs in a fixed order so the result is idempotent:
//! punctuation folding, emoji removal, image-reference and URL placeholders,
//! then whitespace collapse. Later stages never produce input that an
//! earlier stage would rewrite.

use std::sync::LazyLock;

use regex::Regex;

pub const URL_PLACEHOLDER: &str = "<URL>";
pub const IMG_PLACEHOLDER: &str = "<IMG>";

static IMG_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:https?://)?(?:www\.)?pic\.twitter\.com/\S*").expect("valid regex")
});

static URL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:https?://|www\.)\S+").expect("valid regex"));

/// Returns true if `text` contains something the URL grammar would rewrite.
pub fn contains_url(text: &str) -> bool {
    URL_RE.is_match(text) || IMG_RE.is_match(text)
}

/// Codepoints treated as emoji: pictograph blocks, dingbats, regional
/// indicators, skin-tone modifiers, variation selectors, tag characters and
/// the zero-width joiner that glues sequences together.
pub fn is_emoji(c: char) -> bool {
    matches!(c as u32,
        0x1F300..=0x1F5FF   // misc symbols & pictographs (incl. skin tones)
        | 0x1F600..=0x1F64F // emoticons
        | 0x1F680..=0x1F6FF // transport & map
        | 0x1F900..=0x1F9FF // supplemental symbols & pictographs
        | 0x1FA70..=0x1FAFF // symbols & pictographs extended-A
        | 0x1F1E6..=0x1F1FF // regional indicators (flags)
        | 0x2600..=0x26FF   // misc symbols
        | 0x2700..=0x27BF   // dingbats
        | 0xFE00..=0xFE0F   // variation selectors
        | 0xE0020..=0xE007F // tags
        | 0x200D            // zero-width joiner
        | 0x20E3 // combining enclosing keycap
    )
}

fn fold_punctuation(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for c in raw.chars() {
        match c {
            '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{201B}' | '\u{2032}' => out.push('\''),
            '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{201F}' | '\u{00AB}' | '\u{00BB}'
            | '\u{2033}' => out.push('"'),
            '\u{2010}'..='\u{2015}' | '\u{2212}' => out.push('-'),
            '\u{2026}' => out.push_str("..."),
            '\u{200B}' | '\u{2060}' | '\u{FEFF}' => out.push(' '),
            _ => out.push(c),
        }
    }
    out
}

/// Clean raw post or fact-check text.
///
/// Total and idempotent: `preprocess(&preprocess(x)) == preprocess(x)`.
pub fn preprocess(raw: &str) -> String {
    let folded = fold_punctuation(raw);
    let no_emoji: String = folded.chars().filter(|&c| !is_emoji(c)).collect();
    let with_img = IMG_RE.replace_all(&no_emoji, IMG_PLACEHOLDER);
    let with_url = URL_RE.replace_all(&with_img, URL_PLACEHOLDER);
    with_url.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Thresholds for the short / symbol-heavy text filter.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CleaningConfig {
    /// Minimum number of tokens carrying at least one alphanumeric character.
    pub min_tokens: usize,
    /// Minimum share of alphanumeric characters among non-space characters.
    pub min_alnum_ratio: f64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            min_tokens: 3,
            min_alnum_ratio: 0.4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextQuality {
    Ok,
    /// Nothing left after cleaning.
    Empty,
    /// Too short or dominated by symbols.
    Noisy,
}

impl CleaningConfig {
    /// Classify already-cleaned text.
    pub fn assess(&self, cleaned: &str) -> TextQuality {
        if cleaned.is_empty() {
            return TextQuality::Empty;
        }
        let mut word_tokens = 0usize;
        let mut alnum = 0usize;
        let mut visible = 0usize;
        for token in cleaned
            .split_whitespace()
            .filter(|t| *t != URL_PLACEHOLDER && *t != IMG_PLACEHOLDER)
        {
            let mut has_alnum = false;
            for c in token.chars() {
                visible += 1;
                if c.is_alphanumeric() {
                    alnum += 1;
                    has_alnum = true;
                }
            }
            if has_alnum {
                word_tokens += 1;
            }
        }
        if word_tokens < self.min_tokens
            || visible == 0
            || (alnum as f64) < self.min_alnum_ratio * visible as f64
        {
            TextQuality::Noisy
        } else {
            TextQuality::Ok
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rewrites_short_url() {
        assert_eq!(
            preprocess("check   this https://t.co/ab12 now"),
            "check this <URL> now"
        );
    }

    #[test]
    fn empty_stays_empty() {
        assert_eq!(preprocess(""), "");
        assert_eq!(preprocess(" \t\n "), "");
    }

    #[test]
    fn image_reference_and_emoji() {
        assert_eq!(preprocess("pic.twitter.com/xyz 🔥 hoax!"), "<IMG> hoax!");
        assert_eq!(
            preprocess("see https://pic.twitter.com/AbC now"),
            "see <IMG> now"
        );
    }

    #[test]
    fn www_and_uppercase_scheme() {
        assert_eq!(preprocess("go www.example.org/a?b=1"), "go <URL>");
        assert_eq!(preprocess("HTTPS://EXAMPLE.COM"), "<URL>");
    }

    #[test]
    fn emoji_sequences_removed() {
        // family ZWJ sequence, flag, heart with variation selector
        assert_eq!(preprocess("a 👨‍👩‍👧 b 🇪🇸 c ❤️ d"), "a b c d");
    }

    #[test]
    fn punctuation_folded() {
        assert_eq!(preprocess("“quoted” \u{2014} it’s…"), "\"quoted\" - it's...");
    }

    #[test]
    fn quality_rules() {
        let cfg = CleaningConfig::default();
        assert_eq!(cfg.assess(""), TextQuality::Empty);
        assert_eq!(cfg.assess("two words"), TextQuality::Noisy);
        assert_eq!(cfg.assess("three real words"), TextQuality::Ok);
        assert_eq!(cfg.assess("<URL> <IMG> <URL> hi"), TextQuality::Noisy);
        assert_eq!(
            cfg.assess("a1 b2 c3 #### $$$$ %%%% &&&&"),
            TextQuality::Noisy
        );
    }

    fn fragment() -> impl Strategy<Value = String> {
        prop_oneof![
            Just("https://".to_string()),
            Just("http://t.co/x".to_string()),
            Just("www.".to_string()),
            Just("pic.twitter.com/".to_string()),
            Just("…".to_string()),
            Just("🔥".to_string()),
            Just("\u{200D}".to_string()),
            Just("\u{200B}".to_string()),
            Just(" ".to_string()),
            Just("<URL>".to_string()),
            "[a-z.:/]{0,4}".prop_map(|s| s),
            any::<String>(),
        ]
    }

    proptest! {
        #[test]
        fn idempotent_on_unicode(s in any::<String>()) {
            let once = preprocess(&s);
            prop_assert_eq!(preprocess(&once), once);
        }

        #[test]
        fn idempotent_on_url_fragments(parts in proptest::collection::vec(fragment(), 0..8)) {
            let s: String = parts.concat();
            let once = preprocess(&s);
            prop_assert_eq!(preprocess(&once), once.clone());
            prop_assert!(!contains_url(&once), "raw url left in {:?}", once);
        }
    }
}
