//! Query-time readout over the adjudicated store.
//!
//! A probe is analysed into its presupposed propositions and the slots its
//! answer depends on. Premises are checked against the store, and answers
//! are assembled from ACTIVE items only. STALE items surface as historical
//! context and never as a choice.

use crate::schema::{Proposition, SlotRef, StateSchema};
use crate::store::{ItemId, MemoryItem, Store};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReadoutError {
    #[error("malformed probe `{probe}`: {message}")]
    MalformedProbe { probe: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Dimension {
    /// State resolution: is the old belief still valid?
    Sr,
    /// Premise resistance: reject a query built on the stale state.
    Pr,
    /// Implicit policy adaptation: act on the current state unprompted.
    Ipa,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Sr, Dimension::Pr, Dimension::Ipa];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Sr => "SR",
            Dimension::Pr => "PR",
            Dimension::Ipa => "IPA",
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sr" => Ok(Dimension::Sr),
            "pr" => Ok(Dimension::Pr),
            "ipa" => Ok(Dimension::Ipa),
            _ => Err(format!("unknown dimension `{s}` (expected sr, pr or ipa)")),
        }
    }
}

/// A structured query. `presupposed` carries the propositions the query
/// takes for granted; for SR the first one is the belief being probed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Probe {
    pub id: String,
    pub dimension: Dimension,
    pub text: String,
    pub intent: String,
    pub action: String,
    #[serde(default)]
    pub presupposed: Vec<Proposition>,
    #[serde(default)]
    pub basis_slots: Vec<SlotRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryAnalysis {
    pub intent: String,
    pub presupposed: Vec<Proposition>,
    pub basis_slots: Vec<SlotRef>,
    pub action: String,
    pub dimension_hint: Option<Dimension>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PremiseStatus {
    Supported,
    Outdated,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "ref", rename_all = "snake_case")]
pub enum Witness {
    Item(ItemId),
    Marker(SlotRef),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PremiseVerdict {
    pub premise: Proposition,
    pub verdict: PremiseStatus,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CurrentBasis {
    pub active_grounding: Vec<MemoryItem>,
    pub historical_context: Vec<MemoryItem>,
    pub blocked_premises: Vec<PremiseVerdict>,
    pub unknown_slots: Vec<SlotRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum StateAnswer {
    StillValid,
    NoLongerValid,
    Unresolved,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PremiseAnswer {
    PremiseRejected,
    PremiseFollowed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "propositions", rename_all = "UPPERCASE")]
pub enum SlotChoice {
    Chosen(Vec<Proposition>),
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyChoice {
    pub slot: SlotRef,
    pub choice: SlotChoice,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "dimension", content = "state")]
pub enum AnswerState {
    #[serde(rename = "SR")]
    Sr(StateAnswer),
    #[serde(rename = "PR")]
    Pr(PremiseAnswer),
    #[serde(rename = "IPA")]
    Ipa(Vec<PolicyChoice>),
}

impl AnswerState {
    pub fn dimension(&self) -> Dimension {
        match self {
            AnswerState::Sr(_) => Dimension::Sr,
            AnswerState::Pr(_) => Dimension::Pr,
            AnswerState::Ipa(_) => Dimension::Ipa,
        }
    }

    /// Every proposition the answer commits to as current.
    pub fn chosen_propositions(&self) -> Vec<&Proposition> {
        match self {
            AnswerState::Ipa(choices) => choices
                .iter()
                .flat_map(|c| match &c.choice {
                    SlotChoice::Chosen(ps) => ps.iter().collect(),
                    SlotChoice::Unknown => Vec::new(),
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundedAnswer {
    pub probe_id: String,
    pub verdicts: Vec<PremiseVerdict>,
    pub basis: CurrentBasis,
    pub answer: AnswerState,
}

fn malformed(probe: &Probe, message: impl Into<String>) -> ReadoutError {
    ReadoutError::MalformedProbe {
        probe: probe.id.clone(),
        message: message.into(),
    }
}

pub fn analyze_query(
    probe: &Probe,
    schema: &StateSchema,
    dimension: Option<Dimension>,
) -> Result<QueryAnalysis, ReadoutError> {
    let dim = dimension.unwrap_or(probe.dimension);
    for p in &probe.presupposed {
        if !schema.contains_slot(&p.attribute) {
            return Err(malformed(probe, format!("undeclared slot `{}`", p.attribute)));
        }
    }
    for s in &probe.basis_slots {
        if !schema.contains_slot(s) {
            return Err(malformed(probe, format!("undeclared slot `{s}`")));
        }
    }
    match dim {
        Dimension::Sr | Dimension::Pr if probe.presupposed.is_empty() => {
            return Err(malformed(probe, format!("{dim} probe presupposes nothing")));
        }
        Dimension::Ipa if probe.basis_slots.is_empty() => {
            return Err(malformed(probe, "IPA probe has no basis slots"));
        }
        Dimension::Ipa if !probe.presupposed.is_empty() => {
            return Err(malformed(probe, "IPA probe must not presuppose state"));
        }
        _ => {}
    }
    Ok(QueryAnalysis {
        intent: probe.intent.clone(),
        presupposed: probe.presupposed.clone(),
        basis_slots: probe.basis_slots.clone(),
        action: probe.action.clone(),
        dimension_hint: Some(dim),
    })
}

pub fn verify_premises(store: &Store, analysis: &QueryAnalysis) -> Vec<PremiseVerdict> {
    analysis
        .presupposed
        .iter()
        .map(|premise| {
            let same = |i: &&MemoryItem| i.proposition == *premise;
            let (verdict, witness) = if let Some(a) = store.active_items().find(same) {
                (PremiseStatus::Supported, Some(Witness::Item(a.id)))
            } else if let Some(s) = store.items().filter(same).max_by_key(|i| (i.timestamp(), i.id)) {
                (PremiseStatus::Outdated, Some(Witness::Item(s.id)))
            } else if store.marker(&premise.attribute).is_some() {
                (PremiseStatus::Unresolved, Some(Witness::Marker(premise.attribute.clone())))
            } else {
                (PremiseStatus::Unresolved, None)
            };
            PremiseVerdict {
                premise: premise.clone(),
                verdict,
                witness,
            }
        })
        .collect()
}

pub fn assemble_basis(store: &Store, analysis: &QueryAnalysis, verdicts: &[PremiseVerdict]) -> CurrentBasis {
    let slots: BTreeSet<&SlotRef> = analysis
        .basis_slots
        .iter()
        .chain(analysis.presupposed.iter().map(|p| &p.attribute))
        .collect();
    let active_grounding = store
        .active_items()
        .filter(|i| slots.contains(i.slot()))
        .cloned()
        .collect();
    let historical_context = verdicts
        .iter()
        .filter(|v| v.verdict == PremiseStatus::Outdated)
        .filter_map(|v| match &v.witness {
            Some(Witness::Item(id)) => store.item(*id).cloned(),
            _ => None,
        })
        .collect();
    let blocked_premises = verdicts
        .iter()
        .filter(|v| v.verdict != PremiseStatus::Supported)
        .cloned()
        .collect();
    let mut unknown_slots = Vec::new();
    for s in &analysis.basis_slots {
        if (store.marker(s).is_some() || store.active_in_slot(s).next().is_none()) && !unknown_slots.contains(s) {
            unknown_slots.push(s.clone());
        }
    }
    CurrentBasis {
        active_grounding,
        historical_context,
        blocked_premises,
        unknown_slots,
    }
}

/// Answers `probe` from the current basis. Never mutates the store.
pub fn answer_query(
    store: &Store,
    probe: &Probe,
    dimension: Option<Dimension>,
) -> Result<GroundedAnswer, ReadoutError> {
    let analysis = analyze_query(probe, store.schema(), dimension)?;
    let verdicts = verify_premises(store, &analysis);
    let basis = assemble_basis(store, &analysis, &verdicts);
    let answer = match analysis.dimension_hint.unwrap_or(probe.dimension) {
        Dimension::Sr => AnswerState::Sr(match verdicts[0].verdict {
            PremiseStatus::Supported => StateAnswer::StillValid,
            PremiseStatus::Outdated => StateAnswer::NoLongerValid,
            PremiseStatus::Unresolved => StateAnswer::Unresolved,
        }),
        Dimension::Pr => AnswerState::Pr(if basis.blocked_premises.is_empty() {
            PremiseAnswer::PremiseFollowed
        } else {
            PremiseAnswer::PremiseRejected
        }),
        Dimension::Ipa => AnswerState::Ipa(
            analysis
                .basis_slots
                .iter()
                .map(|slot| PolicyChoice {
                    slot: slot.clone(),
                    choice: if basis.unknown_slots.contains(slot) {
                        SlotChoice::Unknown
                    } else {
                        SlotChoice::Chosen(
                            basis
                                .active_grounding
                                .iter()
                                .filter(|i| i.slot() == slot)
                                .map(|i| i.proposition.clone())
                                .collect(),
                        )
                    },
                })
                .collect(),
        ),
    };
    Ok(GroundedAnswer {
        probe_id: probe.id.clone(),
        verdicts,
        basis,
        answer,
    })
}
