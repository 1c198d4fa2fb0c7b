//! Small separable corpora for tests, benches and smoke runs.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Corpus, FactCheck, MappingPair, Post};

const LANGUAGES: [&str; 2] = ["eng", "spa"];

/// Post ids start here so they never collide with fact-check ids.
pub const POST_ID_BASE: u64 = 100_000;

fn words(prefix: &str, group: usize, count: usize) -> Vec<String> {
    (0..count).map(|j| format!("{prefix}{group}x{j}")).collect()
}

fn sentence(mut tokens: Vec<String>, rng: &mut ChaCha8Rng) -> String {
    tokens.shuffle(rng);
    tokens.join(" ")
}

/// `pairs` post/claim pairs plus `distractors` unmatched fact-checks. Every
/// pair draws from its own token set, disjoint from all others: the post and
/// its claim share two anchor words and each adds two words of its own.
/// Fact-check ids are `0..pairs+distractors`; post `i` has id
/// `POST_ID_BASE + i` and is mapped to fact-check `i`.
pub fn separable_corpus(pairs: usize, distractors: usize, seed: u64) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut posts = Vec::with_capacity(pairs);
    let mut fact_checks = Vec::with_capacity(pairs + distractors);
    let mut mappings = Vec::with_capacity(pairs);
    for i in 0..pairs {
        let lang = LANGUAGES[i % LANGUAGES.len()];
        let anchor = words("a", i, 2);
        let mut post_tokens = anchor.clone();
        post_tokens.extend(words("p", i, 2));
        let mut claim_tokens = anchor;
        claim_tokens.extend(words("c", i, 2));
        let text = sentence(post_tokens, &mut rng);
        let claim = sentence(claim_tokens, &mut rng);
        posts.push(Post {
            id: POST_ID_BASE + i as u64,
            text_en: text.clone(),
            text,
            ocr_text: String::new(),
            verdict: String::new(),
            language: lang.into(),
        });
        fact_checks.push(FactCheck {
            id: i as u64,
            claim_en: claim.clone(),
            claim,
            title: String::new(),
            url: String::new(),
            language: lang.into(),
        });
        mappings.push(MappingPair {
            post_id: POST_ID_BASE + i as u64,
            fact_check_id: i as u64,
            language_pair: format!("{lang}-{lang}"),
        });
    }
    for j in 0..distractors {
        let claim = sentence(words("d", j, 4), &mut rng);
        fact_checks.push(FactCheck {
            id: (pairs + j) as u64,
            claim_en: claim.clone(),
            claim,
            title: String::new(),
            url: String::new(),
            language: LANGUAGES[j % LANGUAGES.len()].into(),
        });
    }
    Corpus::new(posts, fact_checks, mappings).expect("generated corpus is consistent")
}
