//! Glob-style value patterns used by knowledge rules.
//!
//! A pattern is one or more alternatives separated by `|`. Each alternative
//! may use `*` (any run of characters, including empty) and `?` (exactly one
//! character). Matching is total: every value either matches or does not.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ValuePattern {
    source: String,
    alternatives: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid pattern {0:?}: empty alternative")]
pub struct PatternError(pub String);

impl ValuePattern {
    pub fn parse(source: &str) -> Result<Self, PatternError> {
        let alternatives: Vec<String> = source.split('|').map(|a| a.trim().to_string()).collect();
        if alternatives.iter().any(String::is_empty) {
            return Err(PatternError(source.to_string()));
        }
        Ok(Self {
            source: source.to_string(),
            alternatives,
        })
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }

    pub fn matches(&self, value: &str) -> bool {
        self.alternatives
            .iter()
            .any(|alt| glob_match(alt.as_bytes(), value.as_bytes()))
    }
}

impl TryFrom<String> for ValuePattern {
    type Error = PatternError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        Self::parse(&s)
    }
}

impl From<ValuePattern> for String {
    fn from(p: ValuePattern) -> Self {
        p.source
    }
}

impl fmt::Display for ValuePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

// Iterative matcher with single-star backtracking; linear in practice.
fn glob_match(pattern: &[u8], text: &[u8]) -> bool {
    let (mut p, mut t) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while t < text.len() {
        if p < pattern.len() && (pattern[p] == b'?' || pattern[p] == text[t]) {
            p += 1;
            t += 1;
        } else if p < pattern.len() && pattern[p] == b'*' {
            star = Some((p, t));
            p += 1;
        } else if let Some((sp, st)) = star {
            p = sp + 1;
            t = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    pattern[p..].iter().all(|&c| c == b'*')
}
