use super::distractors::{builtin_distractor_pool, filter_safe_distractors};
use super::generate::{generate_scenario, GeneratorConfig, Scenario};
use super::haystack::{build_haystack, Haystack};
use super::schedule::{schedule_timestamps, ScheduleConfig};
use super::{days, scenario_kinds, SimulatorError};
use crate::conflict::{ConflictKind, Observation};
use crate::dialogue::{Session, SessionKind, TaggedSpan, Turn};
use crate::schema::{KnowledgeBase, SchemaError, StateSchema};
use chrono::Duration;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// A scenario with its scheduled haystack. The scenario's evidence
/// sessions carry the scheduled timestamps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalCase {
    pub scenario: Scenario,
    pub haystack: Haystack,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteConfig {
    pub seed: u64,
    pub count_per_type: usize,
    pub kinds: Vec<ConflictKind>,
    pub n_sessions: usize,
    pub generator: GeneratorConfig,
    pub target_year: i32,
    pub audit_margin: Duration,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count_per_type: 100,
            kinds: scenario_kinds().to_vec(),
            n_sessions: 10,
            generator: GeneratorConfig::default(),
            target_year: 2027,
            audit_margin: days(1),
        }
    }
}

/// Generates, embeds and schedules one scenario.
pub fn build_case(
    seed: u64,
    kind: ConflictKind,
    schema: &StateSchema,
    knowledge: &KnowledgeBase,
    config: &SuiteConfig,
) -> Result<EvalCase, SimulatorError> {
    let mut scenario = generate_scenario(seed, schema, knowledge, kind, &config.generator)?;
    let pool = filter_safe_distractors(&builtin_distractor_pool(), &scenario, schema, knowledge);
    let haystack = build_haystack(&scenario, &pool, config.n_sessions, seed, schema, knowledge)?;
    let schedule = ScheduleConfig {
        audit_margin: config.audit_margin,
        ..ScheduleConfig::exact(scenario.gap(), config.target_year)
    };
    let haystack = schedule_timestamps(&haystack, &schedule, seed)?;
    scenario.m_o.timestamp = haystack.old_session().timestamp;
    scenario.m_n.timestamp = haystack.new_session().timestamp;
    Ok(EvalCase { scenario, haystack })
}

/// `count_per_type` cases for each configured kind, in kind order then
/// generation order. Per-case seeds derive from the suite seed.
pub fn build_suite(
    config: &SuiteConfig,
    schema: &StateSchema,
    knowledge: &KnowledgeBase,
) -> Result<Vec<EvalCase>, SimulatorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let jobs: Vec<(ConflictKind, u64)> = config
        .kinds
        .iter()
        .flat_map(|&k| (0..config.count_per_type).map(move |_| k))
        .map(|k| (k, rng.gen()))
        .collect();
    jobs.par_iter()
        .map(|&(kind, seed)| build_case(seed, kind, schema, knowledge, config))
        .collect()
}

/// The haystack as an observation history for the conflict oracle.
pub fn observations(haystack: &Haystack) -> Result<Vec<Observation>, SchemaError> {
    haystack.sessions.iter().map(Observation::from_session).collect()
}

/// A copy of `case` with a correction session, explicitly denying the old
/// belief, inserted midway between the two evidence sessions.
pub fn insert_explicit_negation(case: &EvalCase) -> EvalCase {
    let h = &case.haystack;
    let t_o = h.old_session().timestamp;
    let t_n = h.new_session().timestamp;
    let at = t_o + (t_n - t_o) / 2;
    let old = &case.scenario.old_belief;
    let correction = Session {
        session_id: format!("{}-correction", case.scenario.id),
        timestamp: at,
        kind: SessionKind::Correction,
        turns: vec![
            Turn::user(
                format!(
                    "Correction about my {}: {} is no longer true.",
                    old.attribute.slot.replace('_', " "),
                    old.value.replace('_', " ")
                ),
                vec![TaggedSpan::deny(old.attribute.clone(), &old.value)],
            ),
            Turn::assistant("Thanks, I have noted the correction."),
        ],
    };
    let position = (h.old_index + 1..=h.new_index)
        .find(|&i| h.sessions[i].timestamp > at)
        .expect("the new evidence follows the midpoint");
    let mut haystack = h.clone();
    haystack.sessions.insert(position, correction);
    haystack.new_index += 1;
    EvalCase {
        scenario: case.scenario.clone(),
        haystack,
    }
}
