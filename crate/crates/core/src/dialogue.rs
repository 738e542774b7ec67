//! Dialogue sessions: the unit of ingestion.
//!
//! Turns carry optional structured annotations ([`TaggedSpan`]) naming the
//! state proposition a span of text expresses. The structural extractor and
//! the conflict oracle both read these tags; the surface text is cosmetic.

use crate::schema::{Polarity, Proposition, SlotRef};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionKind {
    OldEvidence,
    NewEvidence,
    Distractor,
    /// An inserted session that explicitly negates an earlier belief.
    Correction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSpan {
    pub slot: SlotRef,
    pub value: String,
    #[serde(default = "default_polarity")]
    pub polarity: Polarity,
    /// Mentions of a past state ("back when I lived in ...") that do not
    /// describe the current one.
    #[serde(default, skip_serializing_if = "is_false")]
    pub historical: bool,
    /// The utterance names the attribute itself while stating the value, as
    /// in a direct correction.
    #[serde(default, skip_serializing_if = "is_false")]
    pub explicit_mention: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub inferred: bool,
}

fn default_polarity() -> Polarity {
    Polarity::Assert
}

fn is_false(b: &bool) -> bool {
    !*b
}

impl TaggedSpan {
    pub fn assert(slot: SlotRef, value: &str) -> Self {
        Self {
            slot,
            value: value.to_string(),
            polarity: Polarity::Assert,
            historical: false,
            explicit_mention: false,
            inferred: false,
        }
    }

    pub fn deny(slot: SlotRef, value: &str) -> Self {
        Self {
            polarity: Polarity::Deny,
            explicit_mention: true,
            ..Self::assert(slot, value)
        }
    }

    pub fn proposition(&self) -> Result<Proposition, crate::schema::SchemaError> {
        Proposition::new(self.slot.clone(), &self.value, self.polarity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub spans: Vec<TaggedSpan>,
}

impl Turn {
    pub fn user(text: impl Into<String>, spans: Vec<TaggedSpan>) -> Self {
        Self {
            speaker: Speaker::User,
            text: text.into(),
            spans,
        }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self {
            speaker: Speaker::Assistant,
            text: text.into(),
            spans: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    pub kind: SessionKind,
    pub turns: Vec<Turn>,
}

impl Session {
    /// All tagged spans with their turn index, in order.
    pub fn spans(&self) -> impl Iterator<Item = (usize, &Turn, &TaggedSpan)> {
        self.turns
            .iter()
            .enumerate()
            .flat_map(|(i, t)| t.spans.iter().map(move |s| (i, t, s)))
    }

    pub fn text(&self) -> String {
        self.turns
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}
