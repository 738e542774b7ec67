use super::eval::{RetrievedItem, SystemUnderTest};
use crate::dialogue::Session;
use crate::engine::TRACE_DEPTH;
use crate::readout::{
    analyze_query, AnswerState, CurrentBasis, Dimension, GroundedAnswer, PolicyChoice, PremiseAnswer, Probe,
    SlotChoice, StateAnswer,
};
use crate::schema::{Polarity, SlotRef, StateSchema};
use crate::store::{rank_lexical, EvidenceSpan, ItemId, ItemStatus, MemoryItem, Provenance, SourceKind};
use crate::text::tokenize;
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// Retrieval-only memory: every asserted span is appended as an ACTIVE
/// item and nothing is ever invalidated. Answers read the lexically
/// top-ranked item of the probed slot.
pub struct NaiveSystem {
    schema: Arc<StateSchema>,
    items: Vec<MemoryItem>,
    trace: Vec<RetrievedItem>,
}

impl NaiveSystem {
    pub fn new(schema: Arc<StateSchema>) -> Self {
        Self {
            schema,
            items: Vec::new(),
            trace: Vec::new(),
        }
    }

    fn top_in_slot(&self, terms: &[String], slot: &SlotRef) -> Option<&MemoryItem> {
        rank_lexical(terms, self.items.iter().filter(|i| i.slot() == slot), 1)
            .first()
            .map(|(i, _)| *i)
    }
}

impl SystemUnderTest for NaiveSystem {
    fn name(&self) -> &str {
        "naive-retrieval"
    }

    fn reset(&mut self) {
        self.items.clear();
        self.trace.clear();
    }

    fn ingest(&mut self, session: &Session) -> Result<(), String> {
        for (turn_index, turn, span) in session.spans() {
            if span.historical || span.polarity != Polarity::Assert {
                continue;
            }
            if !self.schema.contains_slot(&span.slot) {
                return Err(format!("undeclared slot `{}`", span.slot));
            }
            let proposition = span.proposition().map_err(|e| e.to_string())?;
            self.items.push(MemoryItem {
                id: ItemId(self.items.len() as u64 + 1),
                proposition,
                status: ItemStatus::Active,
                provenance: Provenance {
                    session_id: session.session_id.clone(),
                    timestamp: session.timestamp,
                    source_kind: SourceKind::Direct,
                },
                evidence: vec![EvidenceSpan {
                    session_id: session.session_id.clone(),
                    turn_index,
                    text: turn.text.clone(),
                    tagged_slot: Some(span.slot.clone()),
                }],
                staled_by: None,
            });
        }
        Ok(())
    }

    fn answer(&mut self, probe: &Probe) -> Result<GroundedAnswer, String> {
        let analysis = analyze_query(probe, &self.schema, None).map_err(|e| e.to_string())?;
        let terms = tokenize(&probe.text);
        self.trace = rank_lexical(&terms, self.items.iter(), TRACE_DEPTH)
            .into_iter()
            .filter(|(_, score)| *score > 0.0)
            .map(|(i, _)| RetrievedItem {
                item: i.id,
                session_id: i.provenance.session_id.clone(),
                slot: i.slot().clone(),
                value: i.proposition.value.clone(),
                status: i.status,
            })
            .collect();
        let mut grounding = Vec::new();
        let answer = match probe.dimension {
            Dimension::Sr | Dimension::Pr => {
                let premise = &analysis.presupposed[0];
                let top = self.top_in_slot(&terms, &premise.attribute);
                grounding.extend(top.cloned());
                let matches = top.map(|i| i.proposition == *premise);
                if probe.dimension == Dimension::Sr {
                    AnswerState::Sr(match matches {
                        Some(true) => StateAnswer::StillValid,
                        Some(false) => StateAnswer::NoLongerValid,
                        None => StateAnswer::Unresolved,
                    })
                } else {
                    AnswerState::Pr(match matches {
                        Some(false) => PremiseAnswer::PremiseRejected,
                        _ => PremiseAnswer::PremiseFollowed,
                    })
                }
            }
            Dimension::Ipa => AnswerState::Ipa(
                analysis
                    .basis_slots
                    .iter()
                    .map(|slot| {
                        let top = self.top_in_slot(&terms, slot);
                        grounding.extend(top.cloned());
                        PolicyChoice {
                            slot: slot.clone(),
                            choice: match top {
                                Some(i) => SlotChoice::Chosen(vec![i.proposition.clone()]),
                                None => SlotChoice::Unknown,
                            },
                        }
                    })
                    .collect(),
            ),
        };
        Ok(GroundedAnswer {
            probe_id: probe.id.clone(),
            verdicts: Vec::new(),
            basis: CurrentBasis {
                active_grounding: grounding,
                ..CurrentBasis::default()
            },
            answer,
        })
    }

    fn last_retrieval_trace(&self) -> Vec<RetrievedItem> {
        self.trace.clone()
    }

    fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(&self.items).expect("items serialize");
        hex::encode(Sha256::digest(bytes))
    }
}
