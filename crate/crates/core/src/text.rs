//! Token normalization shared by retrieval, the simulator's leakage checks
//! and the value normalizer.

use std::collections::BTreeSet;

/// Function words dropped before lexical scoring. Kept small: the goal is
/// only to stop "the"/"my" from dominating overlap scores.
const STOPWORDS: &[&str] = &[
    "a", "about", "after", "all", "also", "am", "an", "and", "any", "are", "as", "at", "be",
    "been", "but", "by", "can", "could", "did", "do", "does", "for", "from", "get", "got", "had",
    "has", "have", "he", "her", "his", "how", "i", "if", "in", "into", "is", "it", "its", "just",
    "me", "my", "of", "on", "or", "our", "out", "she", "so", "some", "that", "the", "their",
    "them", "then", "there", "these", "they", "this", "to", "up", "us", "was", "we", "were",
    "what", "when", "which", "will", "with", "would", "you", "your",
];

pub fn is_stopword(token: &str) -> bool {
    STOPWORDS.binary_search(&token).is_ok()
}

/// Lowercases and splits on anything that is not ASCII alphanumeric, dropping
/// stopwords. Order and duplicates are preserved.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_ascii_lowercase)
        .filter(|t| !is_stopword(t))
        .collect()
}

pub fn token_set(text: &str) -> BTreeSet<String> {
    tokenize(text).into_iter().collect()
}

/// Canonical form of a proposition value: trimmed, lowercase, inner
/// whitespace collapsed to `_`.
pub fn normalize_value(raw: &str) -> String {
    raw.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join("_")
}

/// Tokens of a normalized value, split on `_`. Used by the refinement
/// predicate (`leg` is a token-prefix of `leg_fracture`).
pub fn value_tokens(value: &str) -> Vec<&str> {
    value.split('_').filter(|t| !t.is_empty()).collect()
}

pub fn is_token_prefix(prefix: &str, value: &str) -> bool {
    let p = value_tokens(prefix);
    let v = value_tokens(value);
    p.len() < v.len() && v.starts_with(&p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stopwords_sorted() {
        let mut sorted = STOPWORDS.to_vec();
        sorted.sort_unstable();
        assert_eq!(sorted, STOPWORDS);
    }

    #[test]
    fn tokenize_drops_stopwords_and_punctuation() {
        assert_eq!(
            tokenize("Does the user still commute by Bicycle?"),
            vec!["user", "still", "commute", "bicycle"]
        );
        assert_eq!(tokenize("leg_fracture"), vec!["leg", "fracture"]);
        assert!(tokenize("  ,,, ").is_empty());
    }

    #[test]
    fn normalize() {
        assert_eq!(normalize_value("  New  York "), "new_york");
        assert_eq!(normalize_value(""), "");
    }

    #[test]
    fn token_prefix() {
        assert!(is_token_prefix("leg", "leg_fracture"));
        assert!(!is_token_prefix("le", "leg_fracture"));
        assert!(!is_token_prefix("leg_fracture", "leg_fracture"));
        assert!(!is_token_prefix("arm", "leg_fracture"));
    }
}
