use super::generate::{GroundTruth, Scenario, ScenarioProbes};
use super::haystack::Haystack;
use super::suite::EvalCase;
use super::SimulatorError;
use crate::conflict::ConflictKind;
use crate::dialogue::Session;
use crate::readout::{Dimension, Probe};
use crate::schema::{Proposition, SlotRef};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Scenario header line; its sessions and probes follow it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub seed: u64,
    pub conflict_type: ConflictKind,
    pub target_slot: SlotRef,
    pub old_belief: Proposition,
    pub new_assertion: Proposition,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
    pub gap_seconds: i64,
    pub ground_truth: GroundTruth,
    pub session_count: usize,
    pub old_index: usize,
    pub new_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_time: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Scenario(Box<ScenarioRecord>),
    Session { scenario_id: String, session: Session },
    Probe { scenario_id: String, probe: Probe },
}

/// Writes each case as a scenario line, its sessions in haystack order and
/// its three probes, one JSON object per line.
pub fn write_cases(cases: &[EvalCase], mut sink: impl Write) -> std::io::Result<()> {
    for case in cases {
        let sc = &case.scenario;
        let h = &case.haystack;
        let mut lines = vec![Record::Scenario(Box::new(ScenarioRecord {
            id: sc.id.clone(),
            seed: sc.seed,
            conflict_type: sc.conflict_type,
            target_slot: sc.target_slot.clone(),
            old_belief: sc.old_belief.clone(),
            new_assertion: sc.new_assertion.clone(),
            rule_id: sc.rule_id.clone(),
            gap_seconds: sc.gap_seconds,
            ground_truth: sc.ground_truth.clone(),
            session_count: h.sessions.len(),
            old_index: h.old_index,
            new_index: h.new_index,
            query_time: h.query_time,
        }))];
        lines.extend(h.sessions.iter().map(|s| Record::Session {
            scenario_id: sc.id.clone(),
            session: s.clone(),
        }));
        lines.extend(sc.probes.all().into_iter().map(|p| Record::Probe {
            scenario_id: sc.id.clone(),
            probe: p.clone(),
        }));
        for line in lines {
            serde_json::to_writer(&mut sink, &line)?;
            sink.write_all(b"\n")?;
        }
    }
    sink.flush()
}

struct Partial {
    header: ScenarioRecord,
    sessions: Vec<Session>,
    probes: Vec<Probe>,
    line: usize,
}

fn finish(p: Partial) -> Result<EvalCase, SimulatorError> {
    let bad = |message: String| SimulatorError::Malformed { line: p.line, message };
    let h = &p.header;
    if p.sessions.len() != h.session_count {
        return Err(bad(format!(
            "scenario `{}` declares {} session(s) but has {}",
            h.id,
            h.session_count,
            p.sessions.len()
        )));
    }
    if h.old_index >= h.new_index || h.new_index >= p.sessions.len() {
        return Err(bad(format!("scenario `{}` has invalid evidence indices", h.id)));
    }
    let probe = |dim: Dimension| {
        let mut found = p.probes.iter().filter(|q| q.dimension == dim);
        match (found.next(), found.next()) {
            (Some(q), None) => Ok(q.clone()),
            _ => Err(bad(format!("scenario `{}` needs exactly one {dim} probe", h.id))),
        }
    };
    let probes = ScenarioProbes {
        sr: probe(Dimension::Sr)?,
        pr: probe(Dimension::Pr)?,
        ipa: probe(Dimension::Ipa)?,
    };
    let scenario = Scenario {
        id: h.id.clone(),
        seed: h.seed,
        conflict_type: h.conflict_type,
        target_slot: h.target_slot.clone(),
        old_belief: h.old_belief.clone(),
        new_assertion: h.new_assertion.clone(),
        rule_id: h.rule_id.clone(),
        m_o: p.sessions[h.old_index].clone(),
        m_n: p.sessions[h.new_index].clone(),
        gap_seconds: h.gap_seconds,
        probes,
        ground_truth: h.ground_truth.clone(),
    };
    let haystack = Haystack {
        scenario_id: h.id.clone(),
        old_index: h.old_index,
        new_index: h.new_index,
        query_time: h.query_time,
        sessions: p.sessions,
    };
    Ok(EvalCase { scenario, haystack })
}

/// Reads cases written by [`write_cases`]. Blank lines are skipped.
pub fn read_cases(source: impl BufRead) -> Result<Vec<EvalCase>, SimulatorError> {
    let mut cases = Vec::new();
    let mut current: Option<Partial> = None;
    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let malformed = |message: String| SimulatorError::Malformed { line: line_no, message };
        let line = line.map_err(|e| malformed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        match record {
            Record::Scenario(header) => {
                if let Some(done) = current.take() {
                    cases.push(finish(done)?);
                }
                current = Some(Partial {
                    header: *header,
                    sessions: Vec::new(),
                    probes: Vec::new(),
                    line: line_no,
                });
            }
            Record::Session { scenario_id, session } => match current.as_mut() {
                Some(p) if p.header.id == scenario_id => p.sessions.push(session),
                _ => return Err(malformed(format!("session for `{scenario_id}` outside its scenario"))),
            },
            Record::Probe { scenario_id, probe } => match current.as_mut() {
                Some(p) if p.header.id == scenario_id => p.probes.push(probe),
                _ => return Err(malformed(format!("probe for `{scenario_id}` outside its scenario"))),
            },
        }
    }
    if let Some(done) = current {
        cases.push(finish(done)?);
    }
    Ok(cases)
}

/// Sessions from a JSONL stream holding either session records or bare
/// session objects.
pub fn read_sessions(source: impl BufRead) -> Result<Vec<Session>, SimulatorError> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let malformed = |message: String| SimulatorError::Malformed { line: i + 1, message };
        let line = line.map_err(|e| malformed(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if let Ok(record) = serde_json::from_str::<Record>(&line) {
            if let Record::Session { session, .. } = record {
                out.push(session);
            }
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?);
    }
    Ok(out)
}
