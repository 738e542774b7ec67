use super::catalog::{self, render, PropagationTopic, SameSlotTopic, ASSISTANT_REPLIES};
use super::{days, kind_tag, SimulatorError};
use crate::conflict::{classify_conflict, ConflictKind, Observation};
use crate::dialogue::{Session, SessionKind, TaggedSpan, Turn};
use crate::readout::{Dimension, PremiseAnswer, Probe, StateAnswer};
use crate::schema::{Cardinality, KnowledgeBase, KnowledgeRule, Proposition, SlotRef, StateSchema};
use crate::text::token_set;
use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioProbes {
    pub sr: Probe,
    pub pr: Probe,
    pub ipa: Probe,
}

impl ScenarioProbes {
    pub fn all(&self) -> [&Probe; 3] {
        [&self.sr, &self.pr, &self.ipa]
    }

    pub fn get(&self, dimension: Dimension) -> &Probe {
        match dimension {
            Dimension::Sr => &self.sr,
            Dimension::Pr => &self.pr,
            Dimension::Ipa => &self.ipa,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub old_invalid: bool,
    pub expected_sr: StateAnswer,
    pub expected_pr: PremiseAnswer,
    /// Propositions an IPA answer must never choose.
    pub ipa_forbidden: Vec<Proposition>,
    /// The settled replacement, when the new evidence determines one.
    pub ipa_required: Option<Proposition>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub seed: u64,
    pub conflict_type: ConflictKind,
    pub target_slot: SlotRef,
    pub old_belief: Proposition,
    /// What the new observation asserts: the new value (Type I) or the
    /// upstream change (Type II).
    pub new_assertion: Proposition,
    pub rule_id: Option<String>,
    pub m_o: Session,
    pub m_n: Session,
    pub gap_seconds: i64,
    pub probes: ScenarioProbes,
    pub ground_truth: GroundTruth,
}

impl Scenario {
    pub fn gap(&self) -> Duration {
        Duration::seconds(self.gap_seconds)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorConfig {
    pub gap_min: Duration,
    pub gap_max: Duration,
    /// Restrict generation to scenarios whose invalidated belief sits here.
    pub target_slot: Option<SlotRef>,
    pub max_attempts: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            gap_min: days(30),
            gap_max: days(180),
            target_slot: None,
            max_attempts: 64,
        }
    }
}

/// Timestamp evidence sessions carry until a schedule is assigned.
pub(crate) fn placeholder_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2000, 1, 1, 0, 0, 0).unwrap()
}

fn evidence_session(id: String, kind: SessionKind, text: String, span: TaggedSpan, rng: &mut ChaCha8Rng) -> Session {
    let reply = ASSISTANT_REPLIES.choose(rng).expect("non-empty");
    Session {
        session_id: id,
        timestamp: placeholder_time(),
        kind,
        turns: vec![Turn::user(text, vec![span]), Turn::assistant(*reply)],
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [&'a str]) -> &'a str {
    items.choose(rng).expect("catalog lists are non-empty")
}

/// One concrete draw before validation.
struct Draft {
    target_slot: SlotRef,
    old_belief: Proposition,
    new_assertion: Proposition,
    rule_id: Option<String>,
    old_text: String,
    new_text: String,
    sr_text: String,
    pr_text: String,
    ipa_text: String,
    intent: &'static str,
    action: &'static str,
}

fn draw_same_slot(topic: &SameSlotTopic, rng: &mut ChaCha8Rng) -> Option<Draft> {
    let slot: SlotRef = topic.slot.parse().ok()?;
    let old = pick(rng, topic.old_values);
    let pool = if topic.new_values.is_empty() {
        topic.old_values
    } else {
        topic.new_values
    };
    let choices: Vec<&str> = pool.iter().copied().filter(|v| *v != old).collect();
    let new = *choices.choose(rng)?;
    Some(Draft {
        old_belief: Proposition::assert(slot.clone(), old),
        new_assertion: Proposition::assert(slot.clone(), new),
        target_slot: slot,
        rule_id: None,
        old_text: render(pick(rng, topic.old_templates), old),
        new_text: render(pick(rng, topic.new_templates), new),
        sr_text: render(topic.sr, old),
        pr_text: render(pick(rng, topic.pr_templates), old),
        ipa_text: pick(rng, topic.ipa_templates).to_string(),
        intent: topic.intent,
        action: topic.action,
    })
}

fn draw_propagation(topic: &PropagationTopic, rule: &KnowledgeRule, rng: &mut ChaCha8Rng) -> Option<Draft> {
    let KnowledgeRule::Dependency {
        source_slot,
        target_slot,
        ..
    } = rule
    else {
        return None;
    };
    let old = pick(rng, topic.target_values);
    let upstream = pick(rng, topic.upstream_values);
    Some(Draft {
        target_slot: target_slot.clone(),
        old_belief: Proposition::assert(target_slot.clone(), old),
        new_assertion: Proposition::assert(source_slot.clone(), upstream),
        rule_id: Some(topic.rule_id.to_string()),
        old_text: render(pick(rng, topic.old_templates), old),
        new_text: render(pick(rng, topic.upstream_templates), upstream),
        sr_text: render(topic.sr, old),
        pr_text: render(pick(rng, topic.pr_templates), old),
        ipa_text: pick(rng, topic.ipa_templates).to_string(),
        intent: topic.intent,
        action: topic.action,
    })
}

/// Tokens the new observation brings that the old one did not.
pub(crate) fn introduced_tokens(old_text: &str, old: &Proposition, new_text: &str, new: &Proposition) -> BTreeSet<String> {
    let mut before = token_set(old_text);
    before.extend(token_set(&old.value));
    let mut after = token_set(new_text);
    after.extend(token_set(&new.value));
    after.difference(&before).cloned().collect()
}

/// Structural stand-ins for plausibility, conflict and implicitness
/// judging. Returns the first violated check.
fn check_draft(d: &Draft, kind: ConflictKind, schema: &StateSchema, knowledge: &KnowledgeBase) -> Result<(), String> {
    let old_value = token_set(&d.old_belief.value);
    let new_value = token_set(&d.new_assertion.value);
    let new_text = token_set(&d.new_text);
    let old_text = token_set(&d.old_text);

    if !new_text.is_disjoint(&old_value) {
        return Err("new observation mentions the old value".into());
    }
    let pr = token_set(&d.pr_text);
    let leaked = introduced_tokens(&d.old_text, &d.old_belief, &d.new_text, &d.new_assertion);
    if let Some(t) = pr.intersection(&leaked).next() {
        return Err(format!("premise probe leaks `{t}` from the new observation"));
    }
    if !old_value.is_subset(&pr) || !old_value.is_subset(&token_set(&d.sr_text)) {
        return Err("premise or resolution probe does not name the old value".into());
    }
    let ipa = token_set(&d.ipa_text);
    if !ipa.is_disjoint(&new_text) || !ipa.is_disjoint(&new_value) || !ipa.is_disjoint(&old_value) {
        return Err("implicit probe mentions old or new evidence".into());
    }
    if ipa.is_disjoint(&old_text) {
        return Err("implicit probe shares no topic with the old observation".into());
    }

    let obs = |text: &str, p: &Proposition| Observation {
        session_id: text.to_string(),
        timestamp: placeholder_time(),
        assertions: vec![p.clone()],
        flags: Default::default(),
    };
    let history = [obs("o", &d.old_belief), obs("n", &d.new_assertion)];
    let witness = classify_conflict(&history, 0, 1, knowledge, schema).map_err(|e| e.to_string())?;
    if witness.kind != kind {
        return Err(format!("oracle classifies the pair as {:?}", witness.kind));
    }
    Ok(())
}

fn same_slot_applicable(topic: &SameSlotTopic, schema: &StateSchema, knowledge: &KnowledgeBase) -> bool {
    let Ok(slot) = topic.slot.parse::<SlotRef>() else {
        return false;
    };
    match schema.slot_cardinality(&slot) {
        Ok(Cardinality::Single) => true,
        Ok(Cardinality::Multi) => knowledge
            .rules()
            .iter()
            .any(|r| matches!(r, KnowledgeRule::IncompatSameSlot { slot: s, .. } if *s == slot)),
        Err(_) => false,
    }
}

/// Generates one scenario of `kind`, deterministic in `seed`.
pub fn generate_scenario(
    seed: u64,
    schema: &StateSchema,
    knowledge: &KnowledgeBase,
    kind: ConflictKind,
    config: &GeneratorConfig,
) -> Result<Scenario, SimulatorError> {
    if config.gap_min > config.gap_max || config.gap_min <= Duration::zero() {
        return Err(SimulatorError::InvalidConfig(format!(
            "gap range [{}, {}] is empty or non-positive",
            config.gap_min, config.gap_max
        )));
    }
    let exhausted = |attempts, reason: String| SimulatorError::GenerationExhausted {
        kind,
        attempts,
        reason,
    };
    let wants = |slot: &SlotRef| config.target_slot.as_ref().is_none_or(|t| t == slot);

    let same: Vec<&SameSlotTopic> = catalog::same_slot_topics()
        .iter()
        .filter(|t| same_slot_applicable(t, schema, knowledge))
        .filter(|t| t.slot.parse().is_ok_and(|s: SlotRef| wants(&s)))
        .collect();
    let propagated: Vec<(&PropagationTopic, &KnowledgeRule)> = catalog::propagation_topics()
        .iter()
        .filter_map(|t| knowledge.rule(t.rule_id).map(|r| (t, r)))
        .filter(|(_, r)| matches!(r, KnowledgeRule::Dependency { target_slot, .. } if wants(target_slot)))
        .collect();
    match kind {
        ConflictKind::TypeI if same.is_empty() => return Err(exhausted(0, "no applicable same-slot topic".into())),
        ConflictKind::TypeII if propagated.is_empty() => {
            return Err(exhausted(0, "no applicable dependency rule".into()))
        }
        ConflictKind::None => return Err(exhausted(0, "scenarios need a conflict type".into())),
        _ => {}
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut last = String::new();
    for _ in 0..config.max_attempts {
        let draft = match kind {
            ConflictKind::TypeI => draw_same_slot(same.choose(&mut rng).expect("non-empty"), &mut rng),
            _ => {
                let (t, r) = propagated.choose(&mut rng).expect("non-empty");
                draw_propagation(t, r, &mut rng)
            }
        };
        let Some(draft) = draft else {
            last = "topic admits no value pair".into();
            continue;
        };
        if let Err(e) = check_draft(&draft, kind, schema, knowledge) {
            last = e;
            continue;
        }
        let gap_seconds = rng.gen_range(config.gap_min.num_seconds()..=config.gap_max.num_seconds());
        return Ok(assemble(seed, kind, draft, gap_seconds, &mut rng));
    }
    Err(exhausted(config.max_attempts, last))
}

fn assemble(seed: u64, kind: ConflictKind, d: Draft, gap_seconds: i64, rng: &mut ChaCha8Rng) -> Scenario {
    let id = format!("{}-{seed:016x}", kind_tag(kind));
    let m_o = evidence_session(
        format!("{id}-old"),
        SessionKind::OldEvidence,
        d.old_text,
        TaggedSpan::assert(d.old_belief.attribute.clone(), &d.old_belief.value),
        rng,
    );
    let m_n = evidence_session(
        format!("{id}-new"),
        SessionKind::NewEvidence,
        d.new_text,
        TaggedSpan::assert(d.new_assertion.attribute.clone(), &d.new_assertion.value),
        rng,
    );
    let probe = |dim: Dimension, text: String, presupposed: Vec<Proposition>, basis: Vec<SlotRef>| Probe {
        id: format!("{id}-{}", dim.as_str().to_lowercase()),
        dimension: dim,
        text,
        intent: d.intent.to_string(),
        action: d.action.to_string(),
        presupposed,
        basis_slots: basis,
    };
    let probes = ScenarioProbes {
        sr: probe(Dimension::Sr, d.sr_text, vec![d.old_belief.clone()], vec![]),
        pr: probe(Dimension::Pr, d.pr_text, vec![d.old_belief.clone()], vec![]),
        ipa: probe(Dimension::Ipa, d.ipa_text, vec![], vec![d.target_slot.clone()]),
    };
    let ground_truth = GroundTruth {
        old_invalid: true,
        expected_sr: StateAnswer::NoLongerValid,
        expected_pr: PremiseAnswer::PremiseRejected,
        ipa_forbidden: vec![d.old_belief.clone()],
        ipa_required: (kind == ConflictKind::TypeI).then(|| d.new_assertion.clone()),
    };
    Scenario {
        id,
        seed,
        conflict_type: kind,
        target_slot: d.target_slot,
        old_belief: d.old_belief,
        new_assertion: d.new_assertion,
        rule_id: d.rule_id,
        m_o,
        m_n,
        gap_seconds,
        probes,
        ground_truth,
    }
}
