//! Tokenization and set-overlap helpers shared by the lexical channels,
//! fingerprint matching and the heuristic idea scorer.

use std::collections::{BTreeMap, BTreeSet};

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "can", "for", "from", "has", "have", "in", "into", "is", "it",
    "its", "of", "on", "or", "that", "the", "their", "this", "to", "was", "were", "which", "with", "we", "via",
    "between", "both", "these", "those", "using",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Lower-cased alphanumeric tokens in document order, stopwords included.
pub fn raw_tokens(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).map(|t| t.to_lowercase()).collect()
}

/// Lower-cased alphanumeric tokens with stopwords removed.
pub fn tokens(text: &str) -> Vec<String> {
    raw_tokens(text).into_iter().filter(|t| !is_stopword(t)).collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokens(text).into_iter().collect()
}

pub fn token_counts(text: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for t in tokens(text) {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
}

/// Jaccard index of two sets; two empty sets score 0.
pub fn jaccard<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// True when `phrase` occurs in `haystack_tokens` as a contiguous token run.
pub fn contains_phrase(haystack_tokens: &[String], phrase: &[String]) -> bool {
    if phrase.is_empty() || phrase.len() > haystack_tokens.len() {
        return false;
    }
    haystack_tokens.windows(phrase.len()).any(|w| w.iter().zip(phrase).all(|(a, b)| a == b))
}

/// Split body text into sentences on terminal punctuation.
pub fn sentences(text: &str) -> Vec<&str> {
    text.split_inclusive(['.', '!', '?']).map(str::trim).filter(|s| s.chars().any(char::is_alphanumeric)).collect()
}

/// Most frequent non-stopword tokens across `texts`, ties broken alphabetically.
pub fn salient_terms<'a, I>(texts: I, limit: usize) -> Vec<String>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for text in texts {
        for t in tokens(text) {
            if t.len() < 3 || t.chars().all(|c| c.is_ascii_digit()) {
                continue;
            }
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(limit).map(|(t, _)| t).collect()
}
