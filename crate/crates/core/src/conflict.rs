//! Implicit-conflict oracle over structured observation histories.
//!
//! A pair `(o, n)` is an implicit conflict when some belief asserted at `o`
//! is ruled out by what `n` asserts (belief incompatibility), and no
//! observation in `(o, n]` explicitly negates or corrects that belief
//! (non-explicit invalidation). Conflicts are classified as Type I when the
//! incompatible values sit in the same slot and Type II when the change
//! cascades from a different slot through a dependency rule.
//!
//! This module is deliberately independent of the write pipeline: it is the
//! ground truth the pipeline and the simulator are checked against.

use crate::dialogue::Session;
use crate::schema::{
    Cardinality, KnowledgeBase, KnowledgeRule, Polarity, Proposition, SchemaError, SlotRef,
    StateSchema,
};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationFlags {
    /// Slots the utterance names outright (as opposed to implying).
    #[serde(default)]
    pub mentions_target_attribute: BTreeMap<SlotRef, bool>,
    /// Beliefs the utterance explicitly negates, in asserted form.
    #[serde(default)]
    pub explicit_negation_of: Vec<Proposition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    pub assertions: Vec<Proposition>,
    #[serde(default)]
    pub flags: ObservationFlags,
}

impl Observation {
    /// Reads the tagged spans of a session. Historical mentions are
    /// ignored; DENY spans become explicit negations.
    pub fn from_session(session: &Session) -> Result<Self, SchemaError> {
        let mut obs = Observation {
            session_id: session.session_id.clone(),
            timestamp: session.timestamp,
            assertions: Vec::new(),
            flags: ObservationFlags::default(),
        };
        for (_, _, span) in session.spans() {
            if span.historical {
                continue;
            }
            let p = span.proposition()?;
            if span.explicit_mention {
                obs.flags
                    .mentions_target_attribute
                    .insert(p.attribute.clone(), true);
            }
            match p.polarity {
                Polarity::Assert => obs.assertions.push(p),
                Polarity::Deny => obs.flags.explicit_negation_of.push(p.asserted()),
            }
        }
        Ok(obs)
    }

    fn mentions(&self, slot: &SlotRef) -> bool {
        self.flags
            .mentions_target_attribute
            .get(slot)
            .copied()
            .unwrap_or(false)
    }
}

/// Why an update rules out an old belief.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "condition", rename_all = "snake_case")]
pub enum FiringCondition {
    /// Distinct values in a SINGLE slot.
    SingleSlot,
    Rule { rule_id: String, same_slot: bool },
}

impl FiringCondition {
    pub fn is_same_slot(&self) -> bool {
        match self {
            FiringCondition::SingleSlot => true,
            FiringCondition::Rule { same_slot, .. } => *same_slot,
        }
    }

    pub fn rule_id(&self) -> Option<&str> {
        match self {
            FiringCondition::SingleSlot => None,
            FiringCondition::Rule { rule_id, .. } => Some(rule_id),
        }
    }
}

/// Every `(update index, condition)` under which an update rules out `old`.
pub fn incompatibilities(
    old: &Proposition,
    updates: &[Proposition],
    knowledge: &KnowledgeBase,
    schema: &StateSchema,
) -> Vec<(usize, FiringCondition)> {
    let mut out = Vec::new();
    if old.polarity != Polarity::Assert {
        return out;
    }
    for (i, u) in updates.iter().enumerate() {
        if u.polarity != Polarity::Assert {
            continue;
        }
        if u.attribute == old.attribute
            && u.value != old.value
            && schema.slot_cardinality(&u.attribute) == Ok(Cardinality::Single)
        {
            out.push((i, FiringCondition::SingleSlot));
        }
        for rule in knowledge.rules() {
            if rule.fires(u, old) {
                let same_slot = matches!(rule, KnowledgeRule::IncompatSameSlot { .. });
                out.push((
                    i,
                    FiringCondition::Rule {
                        rule_id: rule.rule_id().to_string(),
                        same_slot,
                    },
                ));
            }
        }
    }
    out
}

/// Does any update render `old` invalid? Same-slot conditions are reported
/// in preference to dependency rules.
pub fn belief_incompatible(
    old: &Proposition,
    updates: &[Proposition],
    knowledge: &KnowledgeBase,
    schema: &StateSchema,
) -> Option<FiringCondition> {
    let all = incompatibilities(old, updates, knowledge, schema);
    all.iter()
        .find(|(_, c)| c.is_same_slot())
        .or_else(|| all.first())
        .map(|(_, c)| c.clone())
}

/// Whether any observation in `segment` explicitly negates `belief`, or
/// names its attribute while stating a different value (a direct
/// correction). Indirect implication never counts.
pub fn explicitly_invalidated(segment: &[Observation], belief: &Proposition) -> bool {
    let belief = belief.asserted();
    segment.iter().any(|obs| {
        obs.flags
            .explicit_negation_of
            .iter()
            .any(|p| p.asserted() == belief)
            || (obs.mentions(&belief.attribute)
                && obs
                    .assertions
                    .iter()
                    .any(|a| a.attribute == belief.attribute && a.value != belief.value))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ConflictKind {
    None,
    #[serde(rename = "TYPE_I")]
    TypeI,
    #[serde(rename = "TYPE_II")]
    TypeII,
}

/// Which type wins when one pair supports both.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum TypePrecedence {
    /// Same-slot evidence is the more direct witness.
    #[default]
    TypeIFirst,
    TypeIIFirst,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictWitness {
    pub kind: ConflictKind,
    pub old_index: usize,
    pub new_index: usize,
    /// The invalidated belief.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief: Option<Proposition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_slot: Option<SlotRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upstream_slot: Option<SlotRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
}

impl ConflictWitness {
    fn none(o: usize, n: usize) -> Self {
        Self {
            kind: ConflictKind::None,
            old_index: o,
            new_index: n,
            belief: None,
            target_slot: None,
            upstream_slot: None,
            rule_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConflictError {
    #[error("invalid observation pair ({old}, {new}) for history of length {len}")]
    IndexError { old: usize, new: usize, len: usize },
}

pub fn classify_conflict(
    history: &[Observation],
    o: usize,
    n: usize,
    knowledge: &KnowledgeBase,
    schema: &StateSchema,
) -> Result<ConflictWitness, ConflictError> {
    classify_conflict_with(history, o, n, knowledge, schema, TypePrecedence::default())
}

pub fn classify_conflict_with(
    history: &[Observation],
    o: usize,
    n: usize,
    knowledge: &KnowledgeBase,
    schema: &StateSchema,
    precedence: TypePrecedence,
) -> Result<ConflictWitness, ConflictError> {
    if o >= n || n >= history.len() {
        return Err(ConflictError::IndexError {
            old: o,
            new: n,
            len: history.len(),
        });
    }
    let new_obs = &history[n];
    let between = &history[o + 1..=n];
    let mut type_i = None;
    let mut type_ii = None;
    for belief in &history[o].assertions {
        if explicitly_invalidated(between, belief) {
            continue;
        }
        for (u, cond) in incompatibilities(belief, &new_obs.assertions, knowledge, schema) {
            let update = &new_obs.assertions[u];
            let slot_matches = update.attribute == belief.attribute;
            let witness = ConflictWitness {
                kind: if slot_matches {
                    ConflictKind::TypeI
                } else {
                    ConflictKind::TypeII
                },
                old_index: o,
                new_index: n,
                belief: Some(belief.clone()),
                target_slot: Some(belief.attribute.clone()),
                upstream_slot: (!slot_matches).then(|| update.attribute.clone()),
                rule_id: cond.rule_id().map(str::to_string),
            };
            let slot = if slot_matches { &mut type_i } else { &mut type_ii };
            if slot.is_none() {
                *slot = Some(witness);
            }
        }
    }
    let chosen = match precedence {
        TypePrecedence::TypeIFirst => type_i.or(type_ii),
        TypePrecedence::TypeIIFirst => type_ii.or(type_i),
    };
    Ok(chosen.unwrap_or_else(|| ConflictWitness::none(o, n)))
}

/// Classifies every ordered pair `o < n` and returns the conflicts found,
/// ordered by `o` then `n`.
pub fn brute_force_scan(
    history: &[Observation],
    knowledge: &KnowledgeBase,
    schema: &StateSchema,
) -> Vec<ConflictWitness> {
    let mut out = Vec::new();
    for o in 0..history.len() {
        for n in o + 1..history.len() {
            let w = classify_conflict(history, o, n, knowledge, schema)
                .expect("indices are in range by construction");
            if w.kind != ConflictKind::None {
                out.push(w);
            }
        }
    }
    out
}
