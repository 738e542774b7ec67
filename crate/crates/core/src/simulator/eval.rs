use super::generate::GroundTruth;
use super::scenario_kinds;
use super::suite::EvalCase;
use crate::conflict::ConflictKind;
use crate::dialogue::Session;
use crate::engine::Engine;
use crate::readout::{AnswerState, Dimension, GroundedAnswer, Probe};
use crate::schema::SlotRef;
use crate::store::{ItemId, ItemStatus};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// One entry of a diagnostic retrieval trace, in rank order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievedItem {
    pub item: ItemId,
    pub session_id: String,
    pub slot: SlotRef,
    pub value: String,
    pub status: ItemStatus,
}

/// A memory system the harness can drive.
pub trait SystemUnderTest: Send {
    fn name(&self) -> &str;
    fn reset(&mut self);
    fn ingest(&mut self, session: &Session) -> Result<(), String>;
    fn answer(&mut self, probe: &Probe) -> Result<GroundedAnswer, String>;
    /// Trace recorded by the most recent `answer` call.
    fn last_retrieval_trace(&self) -> Vec<RetrievedItem>;
    /// Digest of the memory contents; probing must not change it.
    fn fingerprint(&self) -> String;
}

/// Builds a fresh system for each scenario.
pub type SystemFactory<'a> = dyn Fn() -> Box<dyn SystemUnderTest> + Send + Sync + 'a;

/// The memory engine behind the harness interface.
pub struct EngineSystem {
    name: String,
    engine: Engine,
    trace: Vec<RetrievedItem>,
}

impl EngineSystem {
    pub fn new(name: impl Into<String>, engine: Engine) -> Self {
        Self {
            name: name.into(),
            engine,
            trace: Vec::new(),
        }
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }
}

impl SystemUnderTest for EngineSystem {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.engine.reset();
        self.trace.clear();
    }

    fn ingest(&mut self, session: &Session) -> Result<(), String> {
        self.engine.ingest(session).map(|_| ()).map_err(|e| e.to_string())
    }

    fn answer(&mut self, probe: &Probe) -> Result<GroundedAnswer, String> {
        let store = self.engine.store();
        self.trace = self
            .engine
            .retrieval_trace(probe)
            .into_iter()
            .filter_map(|id| store.item(id))
            .map(|i| RetrievedItem {
                item: i.id,
                session_id: i.provenance.session_id.clone(),
                slot: i.slot().clone(),
                value: i.proposition.value.clone(),
                status: i.status,
            })
            .collect();
        self.engine.answer(probe, None).map_err(|e| e.to_string())
    }

    fn last_retrieval_trace(&self) -> Vec<RetrievedItem> {
        self.trace.clone()
    }

    fn fingerprint(&self) -> String {
        self.engine.store().persist_hash()
    }
}

/// Whether `answer` is correct for a scenario whose old belief is invalid.
pub fn score_answer(dimension: Dimension, answer: &AnswerState, truth: &GroundTruth) -> bool {
    match (dimension, answer) {
        (Dimension::Sr, AnswerState::Sr(a)) => *a == truth.expected_sr,
        (Dimension::Pr, AnswerState::Pr(a)) => *a == truth.expected_pr,
        (Dimension::Ipa, AnswerState::Ipa(_)) => {
            let chosen = answer.chosen_propositions();
            chosen.iter().all(|p| !truth.ipa_forbidden.contains(p))
                && truth.ipa_required.as_ref().is_none_or(|r| chosen.contains(&r))
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub probe_id: String,
    pub dimension: Dimension,
    pub passed: bool,
    pub answer: Option<AnswerState>,
    pub error: Option<String>,
    pub trace: Vec<RetrievedItem>,
    pub old_retrieved: bool,
    pub new_retrieved: bool,
    pub old_top1: bool,
    pub new_top1: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub scenario_id: String,
    pub conflict_type: ConflictKind,
    /// Set when ingestion failed or probing changed memory; every probe
    /// then counts as failed.
    pub fault: Option<String>,
    pub probes: Vec<ProbeOutcome>,
}

/// `count / denominator`, undefined on an empty denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub count: usize,
    pub denominator: usize,
    pub rate: Option<f64>,
}

impl Rate {
    pub fn new(count: usize, denominator: usize) -> Self {
        Self {
            count,
            denominator,
            rate: (denominator > 0).then(|| count as f64 / denominator as f64),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub conflict_type: ConflictKind,
    pub dimension: Dimension,
    pub accuracy: Rate,
}

/// Retrieval diagnostics for one dimension over the top-20 traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub dimension: Dimension,
    pub new_evidence_retrieved: Rate,
    pub old_and_new_both_retrieved: Rate,
    pub old_top1: Rate,
    pub new_top1: Rate,
    /// Failures among probes whose trace contained the new evidence.
    pub failure_despite_new_evidence: Rate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub system: String,
    pub scenarios: usize,
    pub faults: usize,
    pub cells: Vec<CellMetrics>,
    /// Mean of the defined cell accuracies.
    pub overall: Option<f64>,
    pub diagnostics: Vec<Diagnostics>,
}

impl EvalMetrics {
    pub fn cell(&self, kind: ConflictKind, dimension: Dimension) -> Option<&CellMetrics> {
        self.cells
            .iter()
            .find(|c| c.conflict_type == kind && c.dimension == dimension)
    }

    pub fn diagnostics(&self, dimension: Dimension) -> Option<&Diagnostics> {
        self.diagnostics.iter().find(|d| d.dimension == dimension)
    }

    /// Plain-text accuracy and diagnostics tables.
    pub fn summary(&self) -> String {
        let pct = |r: Option<f64>| r.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}", v * 100.0));
        let mut out = String::new();
        let _ = writeln!(out, "system: {}", self.system);
        let _ = writeln!(out, "scenarios: {} (faults: {})", self.scenarios, self.faults);
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>8}", "type", "SR", "PR", "IPA");
        for kind in scenario_kinds() {
            let row: Vec<String> = Dimension::ALL
                .iter()
                .map(|&d| pct(self.cell(kind, d).and_then(|c| c.accuracy.rate)))
                .collect();
            let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>8}", type_label(kind), row[0], row[1], row[2]);
        }
        let _ = writeln!(out, "overall: {}", pct(self.overall));
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "{:<5} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "dim", "new_ret", "both_ret", "old_top1", "new_top1", "fail|new"
        );
        for d in &self.diagnostics {
            let _ = writeln!(
                out,
                "{:<5} {:>9} {:>9} {:>9} {:>9} {:>9}",
                d.dimension.as_str(),
                pct(d.new_evidence_retrieved.rate),
                pct(d.old_and_new_both_retrieved.rate),
                pct(d.old_top1.rate),
                pct(d.new_top1.rate),
                pct(d.failure_despite_new_evidence.rate)
            );
        }
        out
    }
}

fn type_label(kind: ConflictKind) -> &'static str {
    match kind {
        ConflictKind::TypeI => "Type I",
        ConflictKind::TypeII => "Type II",
        ConflictKind::None => "none",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRun {
    pub metrics: EvalMetrics,
    pub outcomes: Vec<ScenarioOutcome>,
}

fn failed_probe(probe: &Probe, error: String) -> ProbeOutcome {
    ProbeOutcome {
        probe_id: probe.id.clone(),
        dimension: probe.dimension,
        passed: false,
        answer: None,
        error: Some(error),
        trace: Vec::new(),
        old_retrieved: false,
        new_retrieved: false,
        old_top1: false,
        new_top1: false,
    }
}

fn run_case(system: &mut dyn SystemUnderTest, case: &EvalCase) -> ScenarioOutcome {
    let scenario = &case.scenario;
    let probes = scenario.probes.all();
    let faulted = |fault: String| ScenarioOutcome {
        scenario_id: scenario.id.clone(),
        conflict_type: scenario.conflict_type,
        probes: probes.iter().map(|p| failed_probe(p, fault.clone())).collect(),
        fault: Some(fault),
    };
    system.reset();
    for session in &case.haystack.sessions {
        if let Err(e) = system.ingest(session) {
            return faulted(format!("ingest of `{}` failed: {e}", session.session_id));
        }
    }
    let old_id = &case.haystack.old_session().session_id;
    let new_id = &case.haystack.new_session().session_id;
    let before = system.fingerprint();
    let outcomes: Vec<ProbeOutcome> = probes
        .iter()
        .map(|probe| match system.answer(probe) {
            Ok(answer) => {
                let trace = system.last_retrieval_trace();
                let has = |id: &str| trace.iter().any(|t| t.session_id == id);
                let top = trace.first().map(|t| t.session_id.as_str());
                ProbeOutcome {
                    probe_id: probe.id.clone(),
                    dimension: probe.dimension,
                    passed: score_answer(probe.dimension, &answer.answer, &scenario.ground_truth),
                    old_retrieved: has(old_id),
                    new_retrieved: has(new_id),
                    old_top1: top == Some(old_id.as_str()),
                    new_top1: top == Some(new_id.as_str()),
                    answer: Some(answer.answer),
                    error: None,
                    trace,
                }
            }
            Err(e) => failed_probe(probe, e),
        })
        .collect();
    if system.fingerprint() != before {
        return faulted("memory changed while answering probes".into());
    }
    ScenarioOutcome {
        scenario_id: scenario.id.clone(),
        conflict_type: scenario.conflict_type,
        fault: None,
        probes: outcomes,
    }
}

/// Runs every case against a fresh system from `factory`, in parallel
/// across scenarios. Outcomes keep case order.
pub fn run_evaluation(factory: &SystemFactory<'_>, cases: &[EvalCase]) -> EvalRun {
    let name = factory().name().to_string();
    let outcomes: Vec<ScenarioOutcome> = cases
        .par_iter()
        .map(|case| run_case(factory().as_mut(), case))
        .collect();
    EvalRun {
        metrics: aggregate(name, &outcomes),
        outcomes,
    }
}

fn aggregate(system: String, outcomes: &[ScenarioOutcome]) -> EvalMetrics {
    let probes = |dim: Dimension| {
        outcomes
            .iter()
            .flat_map(|o| o.probes.iter())
            .filter(move |p| p.dimension == dim)
    };
    let cells: Vec<CellMetrics> = scenario_kinds()
        .into_iter()
        .flat_map(|kind| Dimension::ALL.into_iter().map(move |d| (kind, d)))
        .map(|(kind, dimension)| {
            let of_cell: Vec<&ProbeOutcome> = outcomes
                .iter()
                .filter(|o| o.conflict_type == kind)
                .flat_map(|o| o.probes.iter())
                .filter(|p| p.dimension == dimension)
                .collect();
            CellMetrics {
                conflict_type: kind,
                dimension,
                accuracy: Rate::new(of_cell.iter().filter(|p| p.passed).count(), of_cell.len()),
            }
        })
        .collect();
    let defined: Vec<f64> = cells.iter().filter_map(|c| c.accuracy.rate).collect();
    let overall = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let diagnostics = Dimension::ALL
        .into_iter()
        .map(|dimension| {
            let total = probes(dimension).count();
            let count = |f: &dyn Fn(&ProbeOutcome) -> bool| probes(dimension).filter(|p| f(p)).count();
            let with_new = count(&|p| p.new_retrieved);
            Diagnostics {
                dimension,
                new_evidence_retrieved: Rate::new(with_new, total),
                old_and_new_both_retrieved: Rate::new(count(&|p| p.old_retrieved && p.new_retrieved), total),
                old_top1: Rate::new(count(&|p| p.old_top1), total),
                new_top1: Rate::new(count(&|p| p.new_top1), total),
                failure_despite_new_evidence: Rate::new(count(&|p| p.new_retrieved && !p.passed), with_new),
            }
        })
        .collect();
    EvalMetrics {
        system,
        scenarios: outcomes.len(),
        faults: outcomes.iter().filter(|o| o.fault.is_some()).count(),
        cells,
        overall,
        diagnostics,
    }
}
