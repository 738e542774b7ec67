//! Seeded implicit-conflict scenarios and the harness that scores systems
//! on them.
//!
//! A scenario pairs an old observation with a later one that implicitly
//! invalidates it, either in the same slot (Type I) or through a dependency
//! rule (Type II). It is wrapped into a haystack of distractor sessions,
//! given a timeline, and probed three ways: state resolution, premise
//! resistance and implicit policy adaptation.

mod baseline;
mod catalog;
mod distractors;
mod eval;
mod generate;
mod haystack;
mod records;
mod schedule;
mod suite;

pub use baseline::NaiveSystem;
pub use catalog::{propagation_topics, same_slot_topics, PropagationTopic, SameSlotTopic};
pub use distractors::{builtin_distractor_pool, filter_safe_distractors, is_safe_distractor};
pub use eval::{
    run_evaluation, score_answer, CellMetrics, Diagnostics, EngineSystem, EvalMetrics, EvalRun, ProbeOutcome, Rate,
    RetrievedItem, ScenarioOutcome, SystemFactory, SystemUnderTest,
};
pub use generate::{generate_scenario, GeneratorConfig, GroundTruth, Scenario, ScenarioProbes};
pub use haystack::{build_haystack, Haystack};
pub use records::{read_cases, read_sessions, write_cases, ScenarioRecord};
pub use schedule::{schedule_timestamps, ScheduleConfig};
pub use suite::{build_case, build_suite, insert_explicit_negation, observations, EvalCase, SuiteConfig};

use crate::conflict::ConflictKind;
use chrono::Duration;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimulatorError {
    #[error("scenario generation exhausted for {kind:?} after {attempts} attempt(s): {reason}")]
    GenerationExhausted {
        kind: ConflictKind,
        attempts: usize,
        reason: String,
    },
    #[error("distractor pool too small: need {needed}, have {available}")]
    PoolTooSmall { needed: usize, available: usize },
    #[error("distractor `{session_id}` is unsafe: {reason}")]
    UnsafeDistractor { session_id: String, reason: String },
    #[error("infeasible schedule: {0}")]
    InfeasibleSchedule(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed scenario file at line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// The two conflict types a scenario can be built around.
pub fn scenario_kinds() -> [ConflictKind; 2] {
    [ConflictKind::TypeI, ConflictKind::TypeII]
}

pub(crate) fn kind_tag(kind: ConflictKind) -> &'static str {
    match kind {
        ConflictKind::TypeI => "t1",
        ConflictKind::TypeII => "t2",
        ConflictKind::None => "t0",
    }
}

pub(crate) fn days(n: i64) -> Duration {
    Duration::days(n)
}
