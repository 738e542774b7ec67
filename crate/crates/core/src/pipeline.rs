//! Write-time consolidation and invalidation.
//!
//! Ingesting a session runs, in order:
//!
//! 1. **extract** state-update candidates from the session's tagged spans;
//! 2. **local update** per candidate: same-slot ADD / REFINE / REPLACE /
//!    NO_OP;
//! 3. **revision candidates**: ACTIVE items in touched domains (direct),
//!    in dependency-neighbor domains (affected), plus a bounded lexical
//!    fallback (global);
//! 4. **proposals** for every candidate item some update rules out;
//! 5. **adjudication** of each proposal into KEEP / STALE / REPLACE /
//!    UNKNOWN, and application of the verdicts.
//!
//! All mutations of one session are staged on a copy of the store and
//! committed together, so a failure anywhere leaves the store untouched.

use crate::adjudicator::{AdjudicationContext, Adjudicator, AdjudicatorFault};
use crate::dialogue::Session;
use crate::schema::{Cardinality, KnowledgeBase, KnowledgeRule, Polarity, Proposition, SlotRef, StateSchema};
use crate::store::{
    EvidenceSpan, ItemDraft, ItemId, Provenance, SourceKind, StaleCause, Store, StoreError,
};
use crate::text::{is_token_prefix, tokenize};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

pub const DEFAULT_GLOBAL_K: usize = 5;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("session `{session_id}` at {timestamp} arrives before store clock {clock}")]
    OutOfOrderSession {
        session_id: String,
        timestamp: DateTime<Utc>,
        clock: DateTime<Utc>,
    },
    #[error("extractor failure: {0}")]
    ExtractorFailure(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Adjudicator(#[from] AdjudicatorFault),
    #[error("ill-formed decision for item {item}: {message}")]
    InvalidDecision { item: ItemId, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateCandidate {
    pub proposition: Proposition,
    pub origin: SourceKind,
    pub confidence: f64,
    pub timestamp: DateTime<Utc>,
    pub evidence: Vec<EvidenceSpan>,
}

impl UpdateCandidate {
    pub fn slot(&self) -> &SlotRef {
        &self.proposition.attribute
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LocalActionKind {
    Add,
    Refine,
    Replace,
    NoOp,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocalAction {
    pub kind: LocalActionKind,
    pub slot: SlotRef,
    /// The existing same-slot item acted on (REFINE / REPLACE / matching NO_OP).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<ItemId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub written: Option<ItemId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CandidateTag {
    Direct,
    Affected,
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerCondition {
    /// Distinct value asserted in the same SINGLE slot.
    SingleSlotConflict,
    IncompatibleRule { rule_id: String },
    DependencyRule { rule_id: String },
    /// The session explicitly negates the item's proposition.
    ExplicitNegation,
    None,
}

impl TriggerCondition {
    fn rank(&self) -> u8 {
        match self {
            TriggerCondition::SingleSlotConflict => 0,
            TriggerCondition::IncompatibleRule { .. } => 1,
            TriggerCondition::DependencyRule { .. } => 2,
            TriggerCondition::ExplicitNegation => 3,
            TriggerCondition::None => 4,
        }
    }

    pub fn rule_id(&self) -> Option<&str> {
        match self {
            TriggerCondition::IncompatibleRule { rule_id }
            | TriggerCondition::DependencyRule { rule_id } => Some(rule_id),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevisionProposal {
    pub old_item: ItemId,
    pub tag: CandidateTag,
    pub condition: TriggerCondition,
    pub supporting_updates: Vec<UpdateCandidate>,
    pub rationale: String,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub triggering_rule: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Keep,
    Stale,
    Replace,
    Unknown,
}

impl Verdict {
    pub const ALL: [Verdict; 4] = [Verdict::Keep, Verdict::Stale, Verdict::Replace, Verdict::Unknown];

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Keep => "KEEP",
            Verdict::Stale => "STALE",
            Verdict::Replace => "REPLACE",
            Verdict::Unknown => "UNKNOWN",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationDecision {
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replacement: Option<Proposition>,
    pub rationale: String,
}

impl AdjudicationDecision {
    pub fn keep(rationale: impl Into<String>) -> Self {
        Self::plain(Verdict::Keep, rationale)
    }

    pub fn stale(rationale: impl Into<String>) -> Self {
        Self::plain(Verdict::Stale, rationale)
    }

    pub fn unknown(rationale: impl Into<String>) -> Self {
        Self::plain(Verdict::Unknown, rationale)
    }

    pub fn replace(replacement: Proposition, rationale: impl Into<String>) -> Self {
        Self {
            verdict: Verdict::Replace,
            replacement: Some(replacement),
            rationale: rationale.into(),
        }
    }

    /// KEEP, STALE or UNKNOWN. REPLACE needs a replacement; see [`Self::replace`].
    pub fn plain(verdict: Verdict, rationale: impl Into<String>) -> Self {
        debug_assert!(verdict != Verdict::Replace);
        Self {
            verdict,
            replacement: None,
            rationale: rationale.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub item: ItemId,
    pub slot: SlotRef,
    pub decision: AdjudicationDecision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub session_id: String,
    pub timestamp: DateTime<Utc>,
    pub candidates_extracted: usize,
    pub local_actions: Vec<LocalAction>,
    pub revision_candidates: Vec<(ItemId, CandidateTag)>,
    pub proposals: Vec<RevisionProposal>,
    pub decisions: Vec<DecisionRecord>,
    pub items_added: Vec<ItemId>,
    pub items_staled: Vec<ItemId>,
    pub markers_set: Vec<SlotRef>,
}

// ---------------------------------------------------------------------------
// Extraction
// ---------------------------------------------------------------------------

pub trait Extractor: Send + Sync {
    fn extract(&self, session: &Session, schema: &StateSchema) -> Result<Vec<UpdateCandidate>, PipelineError>;
}

/// Reads candidates straight from tagged spans. Historical mentions are
/// filtered; untagged turns (task wrappers, chit-chat) produce nothing.
#[derive(Debug, Clone, Copy, Default)]
pub struct StructuralExtractor;

impl Extractor for StructuralExtractor {
    fn extract(&self, session: &Session, schema: &StateSchema) -> Result<Vec<UpdateCandidate>, PipelineError> {
        let mut out = Vec::new();
        for (turn_index, turn, span) in session.spans() {
            if span.historical {
                continue;
            }
            let proposition = span.proposition().map_err(|e| {
                PipelineError::ExtractorFailure(format!("session `{}` turn {turn_index}: {e}", session.session_id))
            })?;
            if !schema.contains_slot(&proposition.attribute) {
                return Err(PipelineError::ExtractorFailure(format!(
                    "session `{}` turn {turn_index}: undeclared slot `{}`",
                    session.session_id, proposition.attribute
                )));
            }
            out.push(UpdateCandidate {
                evidence: vec![EvidenceSpan {
                    session_id: session.session_id.clone(),
                    turn_index,
                    text: turn.text.clone(),
                    tagged_slot: Some(proposition.attribute.clone()),
                }],
                proposition,
                origin: if span.inferred {
                    SourceKind::Inferred
                } else {
                    SourceKind::Direct
                },
                confidence: 1.0,
                timestamp: session.timestamp,
            });
        }
        Ok(out)
    }
}

pub fn extract_candidates(
    session: &Session,
    schema: &StateSchema,
    extractor: &dyn Extractor,
) -> Result<Vec<UpdateCandidate>, PipelineError> {
    extractor.extract(session, schema)
}

// ---------------------------------------------------------------------------
// Local update
// ---------------------------------------------------------------------------

/// Refinement predicate: the old value is a strict token-prefix of the new.
pub fn is_refinement(old: &str, new: &str) -> bool {
    is_token_prefix(old, new)
}

fn draft_from(candidate: &UpdateCandidate, session_id: &str) -> ItemDraft {
    ItemDraft {
        proposition: candidate.proposition.clone(),
        provenance: Provenance {
            session_id: session_id.to_string(),
            timestamp: candidate.timestamp,
            source_kind: candidate.origin,
        },
        evidence: candidate.evidence.clone(),
    }
}

fn session_of(candidate: &UpdateCandidate) -> String {
    candidate
        .evidence
        .first()
        .map(|e| e.session_id.clone())
        .unwrap_or_default()
}

/// Same-slot revision for one candidate. DENY candidates never write here;
/// explicit negations are handled as revision proposals.
pub fn local_update(store: &mut Store, candidate: &UpdateCandidate) -> Result<LocalAction, PipelineError> {
    let slot = candidate.slot().clone();
    let cardinality = store
        .schema()
        .slot_cardinality(&slot)
        .map_err(|_| StoreError::UnknownSlot(slot.clone()))?;
    let action = |kind, target, written| LocalAction {
        kind,
        slot: slot.clone(),
        target,
        written,
    };
    if candidate.proposition.polarity == Polarity::Deny {
        return Ok(action(LocalActionKind::NoOp, None, None));
    }
    let value = &candidate.proposition.value;
    let active: Vec<(ItemId, String)> = store
        .active_in_slot(&slot)
        .map(|i| (i.id, i.proposition.value.clone()))
        .collect();
    if let Some((id, _)) = active.iter().find(|(_, v)| v == value) {
        return Ok(action(LocalActionKind::NoOp, Some(*id), None));
    }
    let session_id = session_of(candidate);
    let supersede = |store: &mut Store, old: ItemId, why: String| -> Result<ItemId, PipelineError> {
        store.mark_stale(
            old,
            StaleCause {
                session_id: session_id.clone(),
                timestamp: candidate.timestamp,
                rationale: why,
                rule_id: None,
            },
        )?;
        Ok(store.insert_item(draft_from(candidate, &session_id))?)
    };
    match cardinality {
        Cardinality::Single => match active.first() {
            Some((old, old_value)) => {
                let written = supersede(store, *old, format!("replaced by `{value}` in SINGLE slot (was `{old_value}`)"))?;
                Ok(action(LocalActionKind::Replace, Some(*old), Some(written)))
            }
            None => {
                let written = store.insert_item(draft_from(candidate, &session_id))?;
                Ok(action(LocalActionKind::Add, None, Some(written)))
            }
        },
        Cardinality::Multi => match active.iter().find(|(_, v)| is_refinement(v, value)) {
            Some((old, old_value)) => {
                let written = supersede(store, *old, format!("refined from `{old_value}` to `{value}`"))?;
                Ok(action(LocalActionKind::Refine, Some(*old), Some(written)))
            }
            None => {
                let written = store.insert_item(draft_from(candidate, &session_id))?;
                Ok(action(LocalActionKind::Add, None, Some(written)))
            }
        },
    }
}

// ---------------------------------------------------------------------------
// Revision candidate set
// ---------------------------------------------------------------------------

fn touched_domains(updates: &[UpdateCandidate]) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for u in updates {
        out.insert(u.slot().domain.clone());
        for e in &u.evidence {
            if let Some(s) = &e.tagged_slot {
                out.insert(s.domain.clone());
            }
        }
    }
    out
}

/// Slots of every domain reachable over dependency edges from the domains
/// the updates touch. One hop unless `transitive`.
pub fn affected_regions(schema: &StateSchema, updates: &[UpdateCandidate], transitive: bool) -> BTreeSet<SlotRef> {
    let touched = touched_domains(updates);
    let mut reached: BTreeSet<String> = BTreeSet::new();
    let mut queue: VecDeque<String> = touched.iter().cloned().collect();
    let mut expanded: BTreeSet<String> = BTreeSet::new();
    while let Some(domain) = queue.pop_front() {
        if !expanded.insert(domain.clone()) {
            continue;
        }
        let Ok(neighbors) = schema.dependency_neighbors(&domain) else {
            continue;
        };
        for n in neighbors {
            if transitive {
                queue.push_back(n.clone());
            }
            reached.insert(n);
        }
    }
    reached
        .iter()
        .flat_map(|d| schema.domain_slots(d).unwrap_or_default())
        .collect()
}

/// The bounded set of ACTIVE items that may need revision. `exclude` holds
/// the items just written by this session. Precedence when an item is
/// reachable several ways: DIRECT, then AFFECTED, then GLOBAL.
pub fn build_revision_candidates(
    store: &Store,
    updates: &[UpdateCandidate],
    schema: &StateSchema,
    k: usize,
    exclude: &BTreeSet<ItemId>,
    transitive: bool,
) -> BTreeMap<ItemId, CandidateTag> {
    let mut out = BTreeMap::new();
    if updates.is_empty() {
        return out;
    }
    let touched = touched_domains(updates);
    let affected = affected_regions(schema, updates, transitive);
    for item in store.active_items() {
        if exclude.contains(&item.id) {
            continue;
        }
        if touched.contains(&item.slot().domain) {
            out.insert(item.id, CandidateTag::Direct);
        } else if affected.contains(item.slot()) {
            out.insert(item.id, CandidateTag::Affected);
        }
    }
    let mut terms = Vec::new();
    for u in updates {
        terms.extend(tokenize(&u.proposition.value));
        for e in &u.evidence {
            terms.extend(tokenize(&e.text));
        }
    }
    let global = store.retrieve_lexical_where(&terms, k, |i| {
        i.is_active() && !exclude.contains(&i.id) && !out.contains_key(&i.id)
    });
    let global: Vec<ItemId> = global.into_iter().map(|(i, _)| i.id).collect();
    for id in global {
        out.insert(id, CandidateTag::Global);
    }
    out
}

// ---------------------------------------------------------------------------
// Proposals
// ---------------------------------------------------------------------------

fn conditions_for(
    old: &Proposition,
    update: &UpdateCandidate,
    knowledge: &KnowledgeBase,
    schema: &StateSchema,
) -> Vec<TriggerCondition> {
    let u = &update.proposition;
    let mut out = Vec::new();
    if u.polarity == Polarity::Deny {
        if u.asserted() == *old {
            out.push(TriggerCondition::ExplicitNegation);
        }
        return out;
    }
    if u.attribute == old.attribute
        && u.value != old.value
        && schema.slot_cardinality(&u.attribute) == Ok(Cardinality::Single)
    {
        out.push(TriggerCondition::SingleSlotConflict);
    }
    for rule in knowledge.rules() {
        if rule.fires(u, old) {
            let rule_id = rule.rule_id().to_string();
            out.push(match rule {
                KnowledgeRule::IncompatSameSlot { .. } => TriggerCondition::IncompatibleRule { rule_id },
                KnowledgeRule::Dependency { .. } => TriggerCondition::DependencyRule { rule_id },
            });
        }
    }
    out
}

/// One proposal per candidate item that some update rules out. Updates not
/// strictly later than the item are ignored (only later evidence revises).
pub fn propose_revisions(
    store: &Store,
    candidates: &BTreeMap<ItemId, CandidateTag>,
    updates: &[UpdateCandidate],
    knowledge: &KnowledgeBase,
    schema: &StateSchema,
) -> Vec<RevisionProposal> {
    let mut out = Vec::new();
    for (&id, &tag) in candidates {
        let Some(item) = store.item(id).filter(|i| i.is_active()) else {
            continue;
        };
        let mut primary: Option<TriggerCondition> = None;
        let mut supporting = Vec::new();
        for u in updates.iter().filter(|u| u.timestamp > item.timestamp()) {
            let conds = conditions_for(&item.proposition, u, knowledge, schema);
            if conds.is_empty() {
                continue;
            }
            supporting.push(u.clone());
            for c in conds {
                if primary.as_ref().is_none_or(|p| c.rank() < p.rank()) {
                    primary = Some(c);
                }
            }
        }
        let Some(condition) = primary else {
            continue;
        };
        let confidence = supporting
            .iter()
            .map(|u| u.confidence)
            .fold(1.0_f64, f64::min);
        let rationale = match &condition {
            TriggerCondition::SingleSlotConflict => format!(
                "`{}` conflicts with a new value in SINGLE slot `{}`",
                item.proposition.value,
                item.slot()
            ),
            TriggerCondition::IncompatibleRule { rule_id } => {
                format!("rule `{rule_id}` marks `{}` incompatible with a new value", item.proposition.value)
            }
            TriggerCondition::DependencyRule { rule_id } => {
                format!("rule `{rule_id}` propagates a change onto `{}`", item.slot())
            }
            TriggerCondition::ExplicitNegation => {
                format!("`{}` explicitly negated", item.proposition.value)
            }
            TriggerCondition::None => String::new(),
        };
        out.push(RevisionProposal {
            old_item: id,
            tag,
            triggering_rule: condition.rule_id().map(str::to_string),
            condition,
            supporting_updates: supporting,
            rationale,
            confidence,
        });
    }
    out
}

// ---------------------------------------------------------------------------
// Orchestration
// ---------------------------------------------------------------------------

pub struct IngestConfig<'a> {
    pub extractor: &'a dyn Extractor,
    pub adjudicator: &'a dyn Adjudicator,
    pub knowledge: &'a KnowledgeBase,
    pub global_k: usize,
    /// Follow dependency edges past the first hop.
    pub transitive: bool,
}

pub fn ingest_session(
    store: &mut Store,
    session: &Session,
    config: &IngestConfig<'_>,
) -> Result<IngestReport, PipelineError> {
    if let Some(clock) = store.clock() {
        if session.timestamp < clock {
            return Err(PipelineError::OutOfOrderSession {
                session_id: session.session_id.clone(),
                timestamp: session.timestamp,
                clock,
            });
        }
    }
    let schema = store.schema().clone();
    let candidates = extract_candidates(session, &schema, config.extractor)?;
    let mut report = IngestReport {
        session_id: session.session_id.clone(),
        timestamp: session.timestamp,
        candidates_extracted: candidates.len(),
        local_actions: Vec::new(),
        revision_candidates: Vec::new(),
        proposals: Vec::new(),
        decisions: Vec::new(),
        items_added: Vec::new(),
        items_staled: Vec::new(),
        markers_set: Vec::new(),
    };
    if candidates.is_empty() {
        return Ok(report);
    }

    let mut staged = store.clone();
    let mut written = BTreeSet::new();
    for c in &candidates {
        let action = local_update(&mut staged, c)?;
        if let Some(w) = action.written {
            written.insert(w);
            report.items_added.push(w);
        }
        if matches!(action.kind, LocalActionKind::Replace | LocalActionKind::Refine) {
            report.items_staled.extend(action.target);
        }
        report.local_actions.push(action);
    }

    let revision = build_revision_candidates(&staged, &candidates, &schema, config.global_k, &written, config.transitive);
    report.revision_candidates = revision.iter().map(|(id, t)| (*id, *t)).collect();
    let proposals = propose_revisions(&staged, &revision, &candidates, config.knowledge, &schema);

    let session_text = session.text();
    let contexts: Vec<AdjudicationContext> = proposals
        .iter()
        .map(|p| AdjudicationContext {
            proposal: p.clone(),
            old_item: staged.item(p.old_item).expect("proposal targets stored item").clone(),
            session_text: Some(session_text.clone()),
            schema_version: schema.version().to_string(),
        })
        .collect();
    let decisions = config.adjudicator.decide_batch(&contexts);

    for (proposal, decision) in proposals.iter().zip(decisions) {
        let decision = decision?;
        let old = staged.item(proposal.old_item).expect("proposal targets stored item").clone();
        let cause = StaleCause {
            session_id: session.session_id.clone(),
            timestamp: session.timestamp,
            rationale: decision.rationale.clone(),
            rule_id: proposal.triggering_rule.clone(),
        };
        match decision.verdict {
            Verdict::Keep => {}
            Verdict::Stale => {
                staged.mark_stale(old.id, cause)?;
                report.items_staled.push(old.id);
            }
            Verdict::Replace => {
                let replacement = match &decision.replacement {
                    Some(r) if r.attribute == *old.slot() && r.polarity == Polarity::Assert => r.clone(),
                    _ => {
                        return Err(PipelineError::InvalidDecision {
                            item: old.id,
                            message: "REPLACE needs an asserted replacement in the old item's slot".into(),
                        })
                    }
                };
                staged.mark_stale(old.id, cause)?;
                report.items_staled.push(old.id);
                let already = staged.active_in_slot(old.slot()).any(|i| i.proposition == replacement);
                if !already {
                    let id = staged.insert_item(ItemDraft {
                        proposition: replacement,
                        provenance: Provenance {
                            session_id: session.session_id.clone(),
                            timestamp: session.timestamp,
                            source_kind: SourceKind::Inferred,
                        },
                        evidence: proposal
                            .supporting_updates
                            .iter()
                            .flat_map(|u| u.evidence.iter().cloned())
                            .collect(),
                    })?;
                    report.items_added.push(id);
                }
            }
            Verdict::Unknown => {
                staged.mark_stale(old.id, cause)?;
                report.items_staled.push(old.id);
                staged.set_unknown_current(old.slot(), session.timestamp, decision.rationale.clone())?;
                if !report.markers_set.contains(old.slot()) {
                    report.markers_set.push(old.slot().clone());
                }
            }
        }
        report.decisions.push(DecisionRecord {
            item: old.id,
            slot: old.slot().clone(),
            decision,
        });
    }
    report.proposals = proposals;
    *store = staged;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjudicator::RuleBasedAdjudicator;
    use crate::dialogue::{SessionKind, TaggedSpan, Turn};
    use crate::schema::{default_knowledge, default_schema, load_knowledge};
    use chrono::TimeZone;
    use std::sync::Arc;

    const COMMUTE: &str = "routine_and_transport/current_commute_mode";
    const LIMIT: &str = "health_and_mobility/functional_limitation";
    const LOCATION: &str = "location_and_living/current_base_location";

    fn slot(s: &str) -> SlotRef {
        s.parse().unwrap()
    }

    fn at(m: u32, d: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2027, m, d, 0, 0, 0).unwrap()
    }

    fn session(id: &str, t: DateTime<Utc>, spans: Vec<TaggedSpan>) -> Session {
        Session {
            session_id: id.into(),
            timestamp: t,
            kind: SessionKind::Distractor,
            turns: vec![
                Turn::user(format!("utterance for {id}"), spans),
                Turn::assistant("Noted."),
            ],
        }
    }

    fn cand(s: &str, v: &str, t: DateTime<Utc>) -> UpdateCandidate {
        UpdateCandidate {
            proposition: Proposition::assert(slot(s), v),
            origin: SourceKind::Direct,
            confidence: 1.0,
            timestamp: t,
            evidence: vec![EvidenceSpan {
                session_id: format!("s-{v}"),
                turn_index: 0,
                text: v.replace('_', " "),
                tagged_slot: Some(slot(s)),
            }],
        }
    }

    struct Fixture {
        schema: Arc<StateSchema>,
        knowledge: KnowledgeBase,
        adjudicator: RuleBasedAdjudicator,
    }

    impl Fixture {
        fn new() -> Self {
            let schema = Arc::new(default_schema());
            let knowledge = default_knowledge(&schema);
            let adjudicator = RuleBasedAdjudicator::new(Arc::new(knowledge.clone()));
            Self {
                schema,
                knowledge,
                adjudicator,
            }
        }

        fn config(&self) -> IngestConfig<'_> {
            IngestConfig {
                extractor: &StructuralExtractor,
                adjudicator: &self.adjudicator,
                knowledge: &self.knowledge,
                global_k: DEFAULT_GLOBAL_K,
                transitive: false,
            }
        }

        fn store(&self) -> Store {
            Store::new(self.schema.clone())
        }
    }

    #[test]
    fn extraction() {
        let f = Fixture::new();
        let s = session("inj", at(6, 10), vec![TaggedSpan::assert(slot(LIMIT), "leg_fracture")]);
        let c = extract_candidates(&s, &f.schema, &StructuralExtractor).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].origin, SourceKind::Direct);
        assert_eq!(c[0].confidence, 1.0);
        assert_eq!(c[0].timestamp, at(6, 10));
        assert_eq!(c[0].proposition, Proposition::assert(slot(LIMIT), "leg_fracture"));

        let empty = session("chat", at(6, 10), vec![]);
        assert!(extract_candidates(&empty, &f.schema, &StructuralExtractor).unwrap().is_empty());

        let mut hist = TaggedSpan::assert(slot(LIMIT), "leg_fracture");
        hist.historical = true;
        let h = session("hist", at(6, 10), vec![hist]);
        assert!(extract_candidates(&h, &f.schema, &StructuralExtractor).unwrap().is_empty());

        let bad = session("bad", at(6, 10), vec![TaggedSpan::assert(slot("health_and_mobility/nope"), "x")]);
        assert!(matches!(
            extract_candidates(&bad, &f.schema, &StructuralExtractor),
            Err(PipelineError::ExtractorFailure(_))
        ));
    }

    #[test]
    fn local_update_actions() {
        let f = Fixture::new();
        let mut store = f.store();
        let a = local_update(&mut store, &cand(LOCATION, "seattle", at(1, 1))).unwrap();
        assert_eq!(a.kind, LocalActionKind::Add);
        let seattle = a.written.unwrap();

        let same = local_update(&mut store, &cand(LOCATION, "seattle", at(2, 1))).unwrap();
        assert_eq!(same.kind, LocalActionKind::NoOp);
        assert_eq!(same.target, Some(seattle));

        let r = local_update(&mut store, &cand(LOCATION, "portland", at(3, 1))).unwrap();
        assert_eq!(r.kind, LocalActionKind::Replace);
        assert_eq!(r.target, Some(seattle));
        assert!(!store.item(seattle).unwrap().is_active());

        let leg = local_update(&mut store, &cand(LIMIT, "leg", at(3, 1))).unwrap();
        assert_eq!(leg.kind, LocalActionKind::Add);
        let refine = local_update(&mut store, &cand(LIMIT, "leg_fracture", at(4, 1))).unwrap();
        assert_eq!(refine.kind, LocalActionKind::Refine);
        assert_eq!(refine.target, leg.written);
        let add = local_update(&mut store, &cand(LIMIT, "wrist_sprain", at(4, 1))).unwrap();
        assert_eq!(add.kind, LocalActionKind::Add);

        // Replacing with evidence that is not strictly later.
        let err = local_update(&mut store, &cand(LOCATION, "austin", at(3, 1))).unwrap_err();
        assert!(matches!(err, PipelineError::Store(StoreError::TemporalCausalityViolation { .. })));
    }

    #[test]
    fn affected_regions_one_hop() {
        let f = Fixture::new();
        let inj = [cand(LIMIT, "leg_fracture", at(6, 10))];
        let regions = affected_regions(&f.schema, &inj, false);
        let expected: BTreeSet<SlotRef> = f
            .schema
            .domain_slots("routine_and_transport")
            .unwrap()
            .into_iter()
            .chain(f.schema.domain_slots("current_focus_and_goals").unwrap())
            .collect();
        assert_eq!(regions, expected);
        assert!(regions.contains(&slot(COMMUTE)));

        let goal = [cand("current_focus_and_goals/current_primary_focus", "x", at(1, 1))];
        assert!(affected_regions(&f.schema, &goal, false).is_empty());

        // weather -> location and location -> routine; one hop from weather
        // reaches only location, transitive reaches routine as well.
        let weather = [cand("weather_and_environment/environmental_condition", "desert_heat", at(1, 1))];
        let one = affected_regions(&f.schema, &weather, false);
        assert!(one.contains(&slot(LOCATION)));
        assert!(!one.contains(&slot(COMMUTE)));
        assert!(affected_regions(&f.schema, &weather, true).contains(&slot(COMMUTE)));

        // Two touched domains sharing routine_and_transport: union, no duplicates.
        let both = [
            cand(LIMIT, "leg_fracture", at(6, 10)),
            cand("work_and_schedule/current_workload", "heavy", at(6, 10)),
        ];
        let regions = affected_regions(&f.schema, &both, false);
        let routine = f.schema.domain_slots("routine_and_transport").unwrap();
        assert_eq!(regions.iter().filter(|s| routine.contains(s)).count(), routine.len());
    }

    #[test]
    fn revision_candidates_tags() {
        let f = Fixture::new();
        let mut store = f.store();
        let bike = store
            .insert_item(draft_from(&cand(COMMUTE, "bicycle", at(3, 1)), "s0"))
            .unwrap();
        let knee = store
            .insert_item(draft_from(&cand(LIMIT, "knee_pain", at(3, 1)), "s0"))
            .unwrap();
        let inj = [cand(LIMIT, "leg_fracture", at(6, 10))];
        let set = build_revision_candidates(&store, &inj, &f.schema, 0, &BTreeSet::new(), false);
        assert_eq!(set.get(&bike), Some(&CandidateTag::Affected));
        assert_eq!(set.get(&knee), Some(&CandidateTag::Direct));

        // Excluding the just-written item.
        let excl: BTreeSet<ItemId> = [knee].into();
        let set = build_revision_candidates(&store, &inj, &f.schema, 0, &excl, false);
        assert!(!set.contains_key(&knee));

        let goal = [cand("current_focus_and_goals/current_primary_focus", "piano", at(7, 1))];
        let set = build_revision_candidates(&f.store(), &goal, &f.schema, 0, &BTreeSet::new(), false);
        assert!(set.is_empty());

        // Item in a domain that is both touched and a dependency neighbour
        // appears once, tagged DIRECT.
        let both = [
            cand(LIMIT, "leg_fracture", at(6, 10)),
            cand("routine_and_transport/routine_shift", "later_start", at(6, 10)),
        ];
        let set = build_revision_candidates(&store, &both, &f.schema, 0, &BTreeSet::new(), false);
        assert_eq!(set.get(&bike), Some(&CandidateTag::Direct));
    }

    #[test]
    fn global_fallback_is_bounded() {
        let f = Fixture::new();
        let mut store = f.store();
        let mut c = cand("finance_and_resources/resource_availability", "spare_bicycle", at(1, 1));
        c.evidence[0].text = "I keep a spare bicycle in the garage".into();
        let spare = store.insert_item(draft_from(&c, "s0")).unwrap();
        store
            .insert_item(draft_from(&cand("family_and_caregiving/household_obligation", "dog_walking", at(1, 1)), "s0"))
            .unwrap();
        let upd = [cand("current_focus_and_goals/current_primary_focus", "bicycle_repair", at(2, 1))];
        let set = build_revision_candidates(&store, &upd, &f.schema, 1, &BTreeSet::new(), false);
        assert_eq!(set.len(), 1);
        assert_eq!(set.get(&spare), Some(&CandidateTag::Global));
    }

    #[test]
    fn proposals_follow_conditions() {
        let f = Fixture::new();
        let mut store = f.store();
        let bike = store
            .insert_item(draft_from(&cand(COMMUTE, "bicycle", at(3, 1)), "s0"))
            .unwrap();
        let focus = store
            .insert_item(draft_from(&cand("routine_and_transport/routine_shift", "early_gym", at(3, 1)), "s0"))
            .unwrap();
        let inj = [cand(LIMIT, "leg_fracture", at(6, 10))];
        let cands: BTreeMap<ItemId, CandidateTag> =
            [(bike, CandidateTag::Affected), (focus, CandidateTag::Affected)].into();
        let props = propose_revisions(&store, &cands, &inj, &f.knowledge, &f.schema);
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].old_item, bike);
        assert_eq!(props[0].triggering_rule.as_deref(), Some("leg_injury_blocks_active_commute"));
        assert_eq!(props[0].confidence, 1.0);

        // GLOBAL tag does not suppress a same-slot SINGLE conflict.
        let bus = [cand(COMMUTE, "bus", at(6, 10))];
        let cands: BTreeMap<ItemId, CandidateTag> = [(bike, CandidateTag::Global)].into();
        let props = propose_revisions(&store, &cands, &bus, &f.knowledge, &f.schema);
        assert_eq!(props.len(), 1);
        assert_eq!(props[0].condition, TriggerCondition::SingleSlotConflict);
        assert_eq!(props[0].tag, CandidateTag::Global);

        // Updates not strictly later than the item are ignored.
        let early = [cand(LIMIT, "leg_fracture", at(3, 1))];
        let cands: BTreeMap<ItemId, CandidateTag> = [(bike, CandidateTag::Affected)].into();
        assert!(propose_revisions(&store, &cands, &early, &f.knowledge, &f.schema).is_empty());
    }

    #[test]
    fn confidence_is_min_over_support() {
        let f = Fixture::new();
        let mut store = f.store();
        let bike = store
            .insert_item(draft_from(&cand(COMMUTE, "bicycle", at(3, 1)), "s0"))
            .unwrap();
        let mut a = cand(LIMIT, "leg_fracture", at(6, 10));
        a.confidence = 0.8;
        let mut b = cand(LIMIT, "knee_strain", at(6, 10));
        b.confidence = 0.6;
        let cands: BTreeMap<ItemId, CandidateTag> = [(bike, CandidateTag::Affected)].into();
        let props = propose_revisions(&store, &cands, &[a, b], &f.knowledge, &f.schema);
        assert_eq!(props[0].supporting_updates.len(), 2);
        assert_eq!(props[0].confidence, 0.6);
    }

    #[test]
    fn type_i_session_replaces() {
        let f = Fixture::new();
        let mut store = f.store();
        let cfg = f.config();
        ingest_session(&mut store, &session("o", at(1, 5), vec![TaggedSpan::assert(slot(LOCATION), "seattle")]), &cfg).unwrap();
        let r = ingest_session(&mut store, &session("n", at(4, 5), vec![TaggedSpan::assert(slot(LOCATION), "portland")]), &cfg).unwrap();
        assert_eq!(r.local_actions[0].kind, LocalActionKind::Replace);
        let items: Vec<_> = store.retrieve_same_slot(&slot(LOCATION)).unwrap();
        assert_eq!(items[0].proposition.value, "portland");
        assert!(items[0].is_active());
        assert_eq!(items[1].proposition.value, "seattle");
        assert!(!items[1].is_active());
        assert_eq!(items[1].staled_by.as_ref().unwrap().session_id, "n");
        assert_eq!(r.items_staled, vec![items[1].id]);
    }

    #[test]
    fn distractor_session_is_noop() {
        let f = Fixture::new();
        let mut store = f.store();
        let cfg = f.config();
        ingest_session(&mut store, &session("o", at(1, 5), vec![TaggedSpan::assert(slot(LOCATION), "seattle")]), &cfg).unwrap();
        let before = store.to_bytes();
        let r = ingest_session(&mut store, &session("chat", at(2, 5), vec![]), &cfg).unwrap();
        assert_eq!(r.candidates_extracted, 0);
        assert_eq!(store.to_bytes(), before);
    }

    #[test]
    fn type_ii_session_marks_unknown() {
        let f = Fixture::new();
        let mut store = f.store();
        let cfg = f.config();
        ingest_session(&mut store, &session("o", at(3, 1), vec![TaggedSpan::assert(slot(COMMUTE), "bicycle")]), &cfg).unwrap();
        let r = ingest_session(&mut store, &session("n", at(6, 10), vec![TaggedSpan::assert(slot(LIMIT), "leg_fracture")]), &cfg).unwrap();
        assert_eq!(r.decisions.len(), 1);
        assert_eq!(r.decisions[0].decision.verdict, Verdict::Unknown);
        assert_eq!(r.markers_set, vec![slot(COMMUTE)]);
        assert_eq!(store.active_in_slot(&slot(COMMUTE)).count(), 0);
        assert!(store.marker(&slot(COMMUTE)).is_some());
        let bike = store.items().find(|i| i.proposition.value == "bicycle").unwrap();
        assert_eq!(bike.staled_by.as_ref().unwrap().rule_id.as_deref(), Some("leg_injury_blocks_active_commute"));
    }

    #[test]
    fn explicit_negation_stales_and_blocks() {
        let f = Fixture::new();
        let mut store = f.store();
        let cfg = f.config();
        ingest_session(&mut store, &session("o", at(3, 1), vec![TaggedSpan::assert(slot(COMMUTE), "bicycle")]), &cfg).unwrap();
        let r = ingest_session(&mut store, &session("neg", at(4, 1), vec![TaggedSpan::deny(slot(COMMUTE), "bicycle")]), &cfg).unwrap();
        assert_eq!(r.local_actions[0].kind, LocalActionKind::NoOp);
        assert_eq!(r.proposals[0].condition, TriggerCondition::ExplicitNegation);
        assert!(store.marker(&slot(COMMUTE)).is_some());
        let later = ingest_session(&mut store, &session("n", at(6, 10), vec![TaggedSpan::assert(slot(LIMIT), "leg_fracture")]), &cfg).unwrap();
        assert!(later.items_staled.is_empty());
    }

    #[test]
    fn replacement_rule_inserts_inferred_item() {
        let schema = Arc::new(default_schema());
        let doc = r#"
[[knowledge_rules]]
rule_id = "remote_job_means_no_commute"
kind = "dependency"
source_slot = "work_and_schedule/work_transition_or_change"
source_pattern = "fully_remote*"
target_slot = "routine_and_transport/current_commute_mode"
target_pattern = "*"
replacement = "no_commute"
"#;
        let knowledge = load_knowledge(doc, &schema).unwrap();
        let adj = RuleBasedAdjudicator::new(Arc::new(knowledge.clone()));
        let cfg = IngestConfig {
            extractor: &StructuralExtractor,
            adjudicator: &adj,
            knowledge: &knowledge,
            global_k: 5,
            transitive: false,
        };
        let mut store = Store::new(schema);
        ingest_session(&mut store, &session("o", at(3, 1), vec![TaggedSpan::assert(slot(COMMUTE), "subway")]), &cfg).unwrap();
        let r = ingest_session(
            &mut store,
            &session("n", at(5, 1), vec![TaggedSpan::assert(slot("work_and_schedule/work_transition_or_change"), "fully_remote")]),
            &cfg,
        )
        .unwrap();
        assert_eq!(r.decisions[0].decision.verdict, Verdict::Replace);
        let commute = slot(COMMUTE);
        let active: Vec<_> = store.active_in_slot(&commute).collect();
        assert_eq!(active.len(), 1);
        assert_eq!(active[0].proposition.value, "no_commute");
        assert_eq!(active[0].provenance.source_kind, SourceKind::Inferred);
    }

    #[test]
    fn out_of_order_rejected() {
        let f = Fixture::new();
        let mut store = f.store();
        let cfg = f.config();
        ingest_session(&mut store, &session("a", at(5, 1), vec![TaggedSpan::assert(slot(LOCATION), "seattle")]), &cfg).unwrap();
        let err = ingest_session(&mut store, &session("b", at(4, 1), vec![]), &cfg).unwrap_err();
        assert!(matches!(err, PipelineError::OutOfOrderSession { ref session_id, .. } if session_id == "b"));
    }

    #[test]
    fn failing_adjudicator_leaves_store_untouched() {
        struct Broken;
        impl Adjudicator for Broken {
            fn decide(&self, _: &AdjudicationContext) -> Result<AdjudicationDecision, AdjudicatorFault> {
                Err(AdjudicatorFault("injected".into()))
            }
        }
        let f = Fixture::new();
        let mut store = f.store();
        let ok = f.config();
        ingest_session(&mut store, &session("o", at(3, 1), vec![TaggedSpan::assert(slot(COMMUTE), "bicycle")]), &ok).unwrap();
        let before = store.to_bytes();
        let cfg = IngestConfig {
            adjudicator: &Broken,
            ..f.config()
        };
        let err = ingest_session(&mut store, &session("n", at(6, 10), vec![TaggedSpan::assert(slot(LIMIT), "leg_fracture")]), &cfg);
        assert!(matches!(err, Err(PipelineError::Adjudicator(_))));
        assert_eq!(store.to_bytes(), before);
    }
}
