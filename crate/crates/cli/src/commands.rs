use crate::model::{build_adjudicator, build_engine, load_model, open_store, read_text, write_atomic, Model};
use crate::{
    CmdResult, EvaluateArgs, Failure, IngestArgs, InspectArgs, ModelArgs, QueryArgs, ReportArgs, SimulateArgs,
    SuiteArgs, SystemChoice, TypeSelection,
};
use anyhow::{anyhow, Context};
use serde::Serialize;
use statemem::conflict::ConflictKind;
use statemem::readout::{answer_query, Dimension, Probe};
use statemem::simulator::{
    build_suite, read_cases, read_sessions, run_evaluation, write_cases, EngineSystem, EvalCase, EvalMetrics,
    GeneratorConfig, NaiveSystem, ScenarioOutcome, SuiteConfig, SystemUnderTest,
};
use statemem::store::{ItemStatus, Store};
use statemem::SlotRef;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::Path;

fn stdout_line(line: &str) -> CmdResult {
    let mut out = io::stdout().lock();
    writeln!(out, "{line}").context("cannot write to stdout").map_err(Failure::env)
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("report types serialize")
}

pub fn schema_validate(args: &ModelArgs) -> CmdResult {
    let Model { schema, knowledge } = load_model(args)?;
    let slots = schema.slots().count();
    let domains = schema.domains().count();
    let edges = schema.dependency_edges().count();
    stdout_line(&format!(
        "schema `{}` is valid: {domains} domains, {slots} slots, {edges} dependency edges, {} knowledge rules",
        schema.version(),
        knowledge.rules().len()
    ))
}

pub fn ingest(args: &IngestArgs, verbose: u8) -> CmdResult {
    let model = load_model(&args.model)?;
    let file = fs::File::open(&args.sessions)
        .with_context(|| format!("cannot open `{}`", args.sessions.display()))
        .map_err(Failure::env)?;
    let sessions = read_sessions(BufReader::new(file)).map_err(Failure::domain)?;
    let store = open_store(&args.store, &model.schema)?;
    let mut engine = build_engine(&model, &args.engine)?.with_store(store);
    let mut previous = None;
    for session in &sessions {
        if previous.is_some_and(|p| session.timestamp < p) {
            return Err(Failure::domain(anyhow!(
                "session `{}` is out of order in `{}`",
                session.session_id,
                args.sessions.display()
            )));
        }
        previous = Some(session.timestamp);
        if args.resume && engine.store().clock().is_some_and(|c| session.timestamp < c) {
            if verbose > 0 {
                crate::note(&format!("skipping `{}`: already ingested", session.session_id));
            }
            continue;
        }
        let report = engine
            .ingest(session)
            .with_context(|| format!("ingest aborted at session `{}`", session.session_id))
            .map_err(Failure::domain)?;
        write_atomic(&args.store, &engine.store().to_bytes())?;
        stdout_line(&to_json(&report))?;
        if verbose > 0 {
            crate::note(&format!(
                "`{}`: +{} item(s), {} staled, {} marker(s)",
                report.session_id,
                report.items_added.len(),
                report.items_staled.len(),
                report.markers_set.len()
            ));
        }
    }
    if !args.store.exists() {
        write_atomic(&args.store, &engine.store().to_bytes())?;
    }
    Ok(())
}

fn read_probes(path: &Path) -> Result<Vec<Probe>, Failure> {
    let text = read_text(path)?;
    if let Ok(probe) = serde_json::from_str::<Probe>(&text) {
        return Ok(vec![probe]);
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let value: serde_json::Value = serde_json::from_str(line)
                .with_context(|| format!("line {}: not JSON", i + 1))
                .map_err(Failure::domain)?;
            let probe = match value.get("probe") {
                Some(inner) if value.get("kind").and_then(|k| k.as_str()) == Some("probe") => inner.clone(),
                _ => value,
            };
            serde_json::from_value(probe)
                .with_context(|| format!("line {}: not a probe", i + 1))
                .map_err(Failure::domain)
        })
        .collect()
}

pub fn query(args: &QueryArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    let dimension = args
        .dimension
        .as_deref()
        .map(str::parse::<Dimension>)
        .transpose()
        .map_err(|e| Failure::domain(anyhow!(e)))?;
    if !args.store.exists() {
        return Err(Failure::env(anyhow!("store `{}` does not exist", args.store.display())));
    }
    let store = open_store(&args.store, &model.schema)?;
    for probe in read_probes(&args.probe)? {
        let answer = answer_query(&store, &probe, dimension).map_err(Failure::domain)?;
        stdout_line(&to_json(&answer))?;
    }
    Ok(())
}

fn kinds(selection: TypeSelection) -> Vec<ConflictKind> {
    match selection {
        TypeSelection::One => vec![ConflictKind::TypeI],
        TypeSelection::Two => vec![ConflictKind::TypeII],
        TypeSelection::Both => vec![ConflictKind::TypeI, ConflictKind::TypeII],
    }
}

fn generate(model: &Model, args: &SuiteArgs) -> Result<Vec<EvalCase>, Failure> {
    let config = SuiteConfig {
        seed: args.seed,
        count_per_type: args.count,
        kinds: kinds(args.kind),
        n_sessions: args.sessions_per_case,
        generator: GeneratorConfig::default(),
        target_year: args.target_year,
        ..SuiteConfig::default()
    };
    build_suite(&config, &model.schema, &model.knowledge).map_err(Failure::domain)
}

pub fn simulate(args: &SimulateArgs, verbose: u8) -> CmdResult {
    let model = load_model(&args.model)?;
    let cases = generate(&model, &args.suite)?;
    let mut buf = Vec::new();
    write_cases(&cases, &mut buf).expect("writing to memory cannot fail");
    match &args.out {
        Some(path) => write_atomic(path, &buf)?,
        None => io::stdout()
            .lock()
            .write_all(&buf)
            .context("cannot write to stdout")
            .map_err(Failure::env)?,
    }
    if verbose > 0 {
        crate::note(&format!("generated {} scenario(s)", cases.len()));
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceLine<'a> {
    system: &'a str,
    #[serde(flatten)]
    outcome: &'a ScenarioOutcome,
}

pub fn evaluate(args: &EvaluateArgs, verbose: u8) -> CmdResult {
    let model = load_model(&args.model)?;
    let cases = match &args.scenarios {
        Some(path) => {
            let file = fs::File::open(path)
                .with_context(|| format!("cannot open `{}`", path.display()))
                .map_err(Failure::env)?;
            read_cases(BufReader::new(file)).map_err(Failure::domain)?
        }
        None => generate(&model, &args.suite)?,
    };
    // Surface adjudicator misconfiguration before any scenario runs.
    build_adjudicator(&args.engine, &model.knowledge)?;

    let mut systems = args.system.clone();
    systems.sort();
    systems.dedup();
    let mut all_metrics: Vec<EvalMetrics> = Vec::new();
    let mut traces = Vec::new();
    let mut summary = String::new();
    for choice in systems {
        let run = match choice {
            SystemChoice::Engine => {
                let factory = || -> Box<dyn SystemUnderTest> {
                    let engine = build_engine(&model, &args.engine).expect("validated above");
                    Box::new(EngineSystem::new("engine", engine))
                };
                run_evaluation(&factory, &cases)
            }
            SystemChoice::Naive => {
                let schema = model.schema.clone();
                let factory = move || -> Box<dyn SystemUnderTest> { Box::new(NaiveSystem::new(schema.clone())) };
                run_evaluation(&factory, &cases)
            }
        };
        for outcome in &run.outcomes {
            traces.extend_from_slice(
                to_json(&TraceLine {
                    system: &run.metrics.system,
                    outcome,
                })
                .as_bytes(),
            );
            traces.push(b'\n');
        }
        if !summary.is_empty() {
            summary.push('\n');
        }
        summary.push_str(&run.metrics.summary());
        if verbose > 0 {
            crate::note(&format!("{}: {} scenario(s) evaluated", run.metrics.system, run.metrics.scenarios));
        }
        all_metrics.push(run.metrics);
    }
    let mut metrics = serde_json::to_vec_pretty(&all_metrics).expect("metrics serialize");
    metrics.push(b'\n');
    write_atomic(&args.out.join("metrics.json"), &metrics)?;
    write_atomic(&args.out.join("summary.txt"), summary.as_bytes())?;
    write_atomic(&args.out.join("traces.jsonl"), &traces)?;
    io::stdout()
        .lock()
        .write_all(summary.as_bytes())
        .context("cannot write to stdout")
        .map_err(Failure::env)
}

pub fn inspect(args: &InspectArgs) -> CmdResult {
    let model = load_model(&args.model)?;
    if !args.store.exists() {
        return Err(Failure::env(anyhow!("store `{}` does not exist", args.store.display())));
    }
    let store = open_store(&args.store, &model.schema)?;
    let filter = args
        .slot
        .as_deref()
        .map(str::parse::<SlotRef>)
        .transpose()
        .map_err(|e| Failure::domain(anyhow!("{e}")))?;
    if let Some(slot) = &filter {
        if !model.schema.contains_slot(slot) {
            return Err(Failure::domain(anyhow!("undeclared slot `{slot}`")));
        }
    }
    let keep = |slot: &SlotRef| filter.as_ref().is_none_or(|f| f == slot);
    if args.json {
        let mut snapshot = store.snapshot();
        snapshot.items.retain(|i| keep(i.slot()));
        snapshot.markers.retain(|m| keep(&m.slot));
        return stdout_line(&serde_json::to_string_pretty(&snapshot).expect("snapshot serializes"));
    }
    stdout_line(&render_store(&store, &keep))
}

fn render_store(store: &Store, keep: &dyn Fn(&SlotRef) -> bool) -> String {
    let active = store.items().filter(|i| i.is_active()).count();
    let mut out = format!(
        "schema: {}\nclock: {}\nitems: {} ({active} active, {} stale)\nmarkers: {}\n",
        store.schema().version(),
        store.clock().map_or_else(|| "-".to_string(), |c| c.to_rfc3339()),
        store.len(),
        store.len() - active,
        store.markers().count()
    );
    for item in store.items().filter(|i| keep(i.slot())) {
        let status = match item.status {
            ItemStatus::Active => "ACTIVE",
            ItemStatus::Stale => "STALE",
        };
        out.push_str(&format!(
            "{:<6} {:<6} {} = {}  [{} @ {}]",
            item.id.to_string(),
            status,
            item.slot(),
            item.proposition.value,
            item.provenance.session_id,
            item.timestamp().to_rfc3339()
        ));
        if let Some(cause) = &item.staled_by {
            out.push_str(&format!("  staled by {} @ {}: {}", cause.session_id, cause.timestamp.to_rfc3339(), cause.rationale));
        }
        out.push('\n');
    }
    for marker in store.markers().filter(|m| keep(&m.slot)) {
        out.push_str(&format!(
            "marker {} UNKNOWN_CURRENT since {}: {}\n",
            marker.slot,
            marker.since.to_rfc3339(),
            marker.cause
        ));
    }
    out.pop();
    out
}

pub fn report(args: &ReportArgs) -> CmdResult {
    let text = read_text(&args.metrics)?;
    let metrics: Vec<EvalMetrics> = serde_json::from_str(&text)
        .with_context(|| format!("`{}` is not a metrics file", args.metrics.display()))
        .map_err(Failure::domain)?;
    let body: Vec<String> = metrics.iter().map(EvalMetrics::summary).collect();
    io::stdout()
        .lock()
        .write_all(body.join("\n").as_bytes())
        .context("cannot write to stdout")
        .map_err(Failure::env)
}
