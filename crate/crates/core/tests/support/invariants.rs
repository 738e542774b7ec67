//! Store and readout invariants over random session histories, shared by
//! the property tests and the acceptance harness.

use chrono::{Duration, TimeZone, Utc};
use proptest::prelude::*;
use statemem::adjudicator::{AdjudicationContext, Adjudicator, AdjudicatorFault, RuleBasedAdjudicator};
use statemem::dialogue::{Session, SessionKind, TaggedSpan, Turn};
use statemem::pipeline::{AdjudicationDecision, PipelineError};
use statemem::readout::{answer_query, AnswerState, Dimension, Probe};
use statemem::schema::{default_knowledge, default_schema, Cardinality, Proposition, SlotRef};
use statemem::store::{ItemStatus, Store, StoreError};
use statemem::{Engine, KnowledgeBase};
use std::collections::BTreeMap;
use std::sync::Arc;

const UNIVERSE: &[(&str, &[&str])] = &[
    ("location_and_living/current_base_location", &["seattle", "portland", "phoenix", "denver"]),
    ("routine_and_transport/current_commute_mode", &["bicycle", "bus", "walking", "driving"]),
    ("health_and_mobility/functional_limitation", &["leg_fracture", "knee_sprain", "wrist_strain"]),
    ("health_and_mobility/current_health_state", &["knee_surgery_recovery", "healthy"]),
    ("weather_and_environment/environmental_condition", &["desert_heat", "coastal_fog"]),
    ("work_and_schedule/work_transition_or_change", &["fully_remote", "new_manager"]),
    ("stable_preferences/enduring_preference", &["vegetarian_diet", "steak_dinners", "spicy_food"]),
    ("stable_preferences/habitual_choice_pattern", &["fine_dining_weekly", "morning_coffee_ritual"]),
    ("finance_and_resources/financial_constraint", &["job_loss", "strict_budget_mode"]),
    ("current_focus_and_goals/short_horizon_goal", &["marathon_training", "learn_sourdough"]),
];

#[derive(Debug, Clone)]
pub struct SpanSpec {
    slot: usize,
    value: usize,
    deny: bool,
}

fn span_strategy() -> impl Strategy<Value = SpanSpec> {
    (0..UNIVERSE.len(), 0..4usize, prop::bool::weighted(0.1)).prop_map(|(slot, value, deny)| SpanSpec {
        slot,
        value: value % UNIVERSE[slot].1.len(),
        deny,
    })
}

pub fn history_strategy() -> impl Strategy<Value = History> {
    prop::collection::vec((prop::collection::vec(span_strategy(), 0..3), 1..40i64), 1..9)
}

fn sessions(history: &[(Vec<SpanSpec>, i64)]) -> Vec<Session> {
    let mut t = Utc.with_ymd_and_hms(2027, 1, 1, 0, 0, 0).unwrap();
    history.iter()
        .enumerate()
        .map(|(i, (spans, step))| {
            t += Duration::hours(*step);
            let tagged = spans
                .iter()
                .map(|s| {
                    let (slot, values) = UNIVERSE[s.slot];
                    let slot: SlotRef = slot.parse().unwrap();
                    if s.deny {
                        TaggedSpan::deny(slot, values[s.value])
                    } else {
                        TaggedSpan::assert(slot, values[s.value])
                    }
                })
                .collect();
            Session {
                session_id: format!("s{i}"),
                timestamp: t,
                kind: SessionKind::Distractor,
                turns: vec![Turn::user(format!("update {i}"), tagged)],
            }
        })
        .collect()
}

fn engine() -> Engine {
    let schema = Arc::new(default_schema());
    let knowledge = Arc::new(default_knowledge(&schema));
    Engine::new(schema, knowledge)
}

fn check_single_uniqueness(store: &Store) -> Result<(), TestCaseError> {
    let schema = store.schema().clone();
    let mut single: BTreeMap<SlotRef, usize> = BTreeMap::new();
    for item in store.active_items() {
        if schema.slot_cardinality(item.slot()) == Ok(Cardinality::Single) {
            *single.entry(item.slot().clone()).or_default() += 1;
        }
    }
    prop_assert!(single.values().all(|&n| n <= 1), "SINGLE slot holds several ACTIVE items: {single:?}");
    Ok(())
}

fn check_causality(store: &Store) -> Result<(), TestCaseError> {
    for item in store.items() {
        match item.status {
            ItemStatus::Active => prop_assert!(item.staled_by.is_none()),
            ItemStatus::Stale => {
                let cause = item.staled_by.as_ref().expect("stale items carry a cause");
                prop_assert!(cause.timestamp > item.timestamp(), "item {} staled no later than written", item.id);
            }
        }
    }
    Ok(())
}

fn check_store(store: &Store) -> Result<(), TestCaseError> {
    check_single_uniqueness(store)?;
    check_causality(store)
}

fn check_archive_monotone(before: &Store, after: &Store) -> Result<(), TestCaseError> {
    prop_assert!(after.len() >= before.len());
    for old in before.items() {
        let now = after.item(old.id).expect("items are never removed");
        if old.status == ItemStatus::Stale {
            prop_assert_eq!(old, now);
        } else {
            prop_assert_eq!(&old.proposition, &now.proposition);
            prop_assert_eq!(&old.provenance, &now.provenance);
        }
    }
    Ok(())
}

fn check_readout_excludes_stale(store: &Store) -> Result<(), TestCaseError> {
    for (slot, values) in UNIVERSE {
        let slot: SlotRef = slot.parse().unwrap();
        let ipa = Probe {
            id: "ipa".into(),
            dimension: Dimension::Ipa,
            text: "what should I plan".into(),
            intent: "plan".into(),
            action: "recommend".into(),
            presupposed: vec![],
            basis_slots: vec![slot.clone()],
        };
        let hash = store.persist_hash();
        let a = answer_query(store, &ipa, None).unwrap();
        prop_assert_eq!(store.persist_hash(), hash);
        prop_assert!(a.basis.active_grounding.iter().all(|i| i.is_active()));
        for p in a.answer.chosen_propositions() {
            prop_assert!(
                store.active_items().any(|i| &i.proposition == p),
                "IPA chose {p:?} without an ACTIVE item"
            );
        }
        for v in *values {
            let pr = Probe {
                id: "pr".into(),
                dimension: Dimension::Pr,
                text: format!("given {v}"),
                intent: "plan".into(),
                action: "recommend".into(),
                presupposed: vec![Proposition::assert(slot.clone(), v)],
                basis_slots: vec![slot.clone()],
            };
            let a = answer_query(store, &pr, None).unwrap();
            prop_assert!(a.basis.active_grounding.iter().all(|i| i.is_active()));
            prop_assert!(matches!(a.answer, AnswerState::Pr(_)));
        }
    }
    Ok(())
}

/// Ingests `session`; a session that contradicts itself within one slot is
/// rejected as a causality violation and must leave the store untouched.
fn ingest_checked(e: &mut Engine, session: &Session) -> Result<(), TestCaseError> {
    let before = e.store().to_bytes();
    match e.ingest(session) {
        Ok(_) => Ok(()),
        Err(PipelineError::Store(StoreError::TemporalCausalityViolation { .. })) => {
            prop_assert_eq!(e.store().to_bytes(), before);
            Ok(())
        }
        Err(other) => Err(TestCaseError::fail(format!("unexpected ingest error: {other}"))),
    }
}

/// Rule-based decisions, except that some items deterministically fail.
struct Flaky {
    inner: RuleBasedAdjudicator,
    salt: u64,
}

impl Adjudicator for Flaky {
    fn decide(&self, ctx: &AdjudicationContext) -> Result<AdjudicationDecision, AdjudicatorFault> {
        if (ctx.old_item.id.0 + self.salt).is_multiple_of(3) {
            return Err(AdjudicatorFault("injected fault".into()));
        }
        self.inner.decide(ctx)
    }
}


pub type History = Vec<(Vec<SpanSpec>, i64)>;

fn replay(history: &History, mut each: impl FnMut(&Store, &Store) -> Result<(), TestCaseError>) -> Result<Engine, TestCaseError> {
    let mut e = engine();
    for s in sessions(history) {
        let before = e.store().clone();
        ingest_checked(&mut e, &s)?;
        each(&before, e.store())?;
    }
    Ok(e)
}

/// At most one ACTIVE item per SINGLE slot after every session.
pub fn single_slot_uniqueness(history: &History) -> Result<(), TestCaseError> {
    replay(history, |_, after| check_single_uniqueness(after)).map(drop)
}

/// Every stale mark postdates the item it retires.
pub fn temporal_causality(history: &History) -> Result<(), TestCaseError> {
    replay(history, |_, after| check_causality(after)).map(drop)
}

/// Items are never removed and archived items never change.
pub fn monotone_archive(history: &History) -> Result<(), TestCaseError> {
    replay(history, check_archive_monotone).map(drop)
}

/// Readout grounds only on ACTIVE items and leaves the store unchanged.
pub fn stale_exclusion(history: &History) -> Result<(), TestCaseError> {
    let e = replay(history, |_, _| Ok(()))?;
    check_readout_excludes_stale(e.store())
}

/// A faulting adjudicator rejects the session without touching the store.
pub fn ingest_atomicity(history: &History, salt: u64) -> Result<(), TestCaseError> {
    let schema = Arc::new(default_schema());
    let knowledge: Arc<KnowledgeBase> = Arc::new(default_knowledge(&schema));
    let flaky = Flaky { inner: RuleBasedAdjudicator::new(knowledge.clone()), salt };
    let mut e = Engine::new(schema, knowledge).with_adjudicator(Box::new(flaky));
    for s in sessions(history) {
        let before = e.store().to_bytes();
        match e.ingest(&s) {
            Ok(_) => check_store(e.store())?,
            Err(_) => prop_assert_eq!(e.store().to_bytes(), before),
        }
    }
    Ok(())
}

/// Persisting and reloading yields an identical store and identical bytes.
pub fn persistence_round_trip(history: &History) -> Result<(), TestCaseError> {
    let e = replay(history, |_, _| Ok(()))?;
    let bytes = e.store().to_bytes();
    let back = Store::from_bytes(&bytes, e.store().schema().clone()).unwrap();
    prop_assert_eq!(&back, e.store());
    prop_assert_eq!(back.to_bytes(), bytes);
    Ok(())
}
