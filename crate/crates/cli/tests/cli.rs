use serde_json::Value;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

fn statemem(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_statemem"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

/// Session lines of the first scenario in a one-scenario Type I suite.
fn haystack_file(dir: &Path) -> PathBuf {
    let out = statemem(&["simulate", "--type", "1", "--count", "1", "--seed", "4", "--out", "suite.jsonl"], dir);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = fs::read_to_string(dir.join("suite.jsonl")).unwrap();
    let sessions: Vec<&str> = text.lines().filter(|l| l.contains(r#""kind":"session""#)).collect();
    assert_eq!(sessions.len(), 10);
    let path = dir.join("sessions.jsonl");
    fs::write(&path, sessions.join("\n") + "\n").unwrap();
    path
}

#[test]
fn schema_validate_exit_codes() {
    let dir = TempDir::new().unwrap();
    let ok = statemem(&["schema", "validate"], dir.path());
    assert_eq!(code(&ok), 0);
    assert!(stdout(&ok).contains("10 domains, 33 slots"));

    fs::write(
        dir.path().join("dangling.toml"),
        "version = \"v\"\n[[domains]]\nname = \"a\"\nslots = [{ name = \"s\", cardinality = \"single\" }]\n\
         [[dependency_edges]]\nsource = \"a\"\ntarget = \"ghost\"\n",
    )
    .unwrap();
    let bad = statemem(&["schema", "validate", "--schema", "dangling.toml"], dir.path());
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("a->ghost"), "{}", stderr(&bad));

    let missing = statemem(&["schema", "validate", "--schema", "nope.toml"], dir.path());
    assert_eq!(code(&missing), 2);
}

#[test]
fn ingest_streams_one_report_per_session_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let sessions = haystack_file(dir.path());
    let sessions = sessions.to_str().unwrap();
    let first = statemem(&["ingest", "--store", "a.store", "--sessions", sessions], dir.path());
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    let reports: Vec<Value> = stdout(&first).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 10);
    let second = statemem(&["ingest", "--store", "b.store", "--sessions", sessions], dir.path());
    assert_eq!(code(&second), 0);
    assert_eq!(fs::read(dir.path().join("a.store")).unwrap(), fs::read(dir.path().join("b.store")).unwrap());

    let inspect = statemem(&["inspect", "--store", "a.store", "--json"], dir.path());
    assert_eq!(code(&inspect), 0);
    let snapshot: Value = serde_json::from_str(&stdout(&inspect)).unwrap();
    assert!(snapshot["items"].as_array().unwrap().iter().any(|i| i["status"] == "STALE"));
}

#[test]
fn resume_skips_sessions_already_applied() {
    let dir = TempDir::new().unwrap();
    let sessions = haystack_file(dir.path());
    let text = fs::read_to_string(&sessions).unwrap();
    let head: Vec<&str> = text.lines().take(6).collect();
    fs::write(dir.path().join("head.jsonl"), head.join("\n") + "\n").unwrap();
    let sessions = sessions.to_str().unwrap();
    assert_eq!(code(&statemem(&["ingest", "--store", "full.store", "--sessions", sessions], dir.path())), 0);
    assert_eq!(code(&statemem(&["ingest", "--store", "part.store", "--sessions", "head.jsonl"], dir.path())), 0);
    let resumed = statemem(&["ingest", "--store", "part.store", "--sessions", sessions, "--resume"], dir.path());
    assert_eq!(code(&resumed), 0, "{}", stderr(&resumed));
    assert_eq!(
        fs::read(dir.path().join("full.store")).unwrap(),
        fs::read(dir.path().join("part.store")).unwrap()
    );
}

#[test]
fn out_of_order_sessions_abort_with_the_session_id() {
    let dir = TempDir::new().unwrap();
    let sessions = haystack_file(dir.path());
    let mut lines: Vec<String> = fs::read_to_string(&sessions).unwrap().lines().map(String::from).collect();
    lines.swap(3, 4);
    let late: Value = serde_json::from_str(&lines[4]).unwrap();
    fs::write(dir.path().join("shuffled.jsonl"), lines.join("\n") + "\n").unwrap();
    let out = statemem(&["ingest", "--store", "s.store", "--sessions", "shuffled.jsonl"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains(late["session"]["session_id"].as_str().unwrap()), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 4);
}

#[test]
fn query_answers_probes_and_rejects_malformed_ones() {
    let dir = TempDir::new().unwrap();
    let sessions = haystack_file(dir.path());
    let out = statemem(&["ingest", "--store", "q.store", "--sessions", sessions.to_str().unwrap()], dir.path());
    assert_eq!(code(&out), 0);
    let suite = fs::read_to_string(dir.path().join("suite.jsonl")).unwrap();
    let probes: Vec<&str> = suite.lines().filter(|l| l.contains(r#""kind":"probe""#)).collect();
    fs::write(dir.path().join("probes.jsonl"), probes.join("\n")).unwrap();
    let answers = statemem(&["query", "--store", "q.store", "--probe", "probes.jsonl"], dir.path());
    assert_eq!(code(&answers), 0, "{}", stderr(&answers));
    let answers: Vec<Value> = stdout(&answers).lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(answers[0]["answer"]["state"], "NO_LONGER_VALID");
    assert_eq!(answers[1]["answer"]["state"], "PREMISE_REJECTED");

    fs::write(
        dir.path().join("bad.json"),
        r#"{"id":"x","dimension":"SR","text":"?","intent":"i","action":"a","presupposed":[]}"#,
    )
    .unwrap();
    let bad = statemem(&["query", "--store", "q.store", "--probe", "bad.json"], dir.path());
    assert_eq!(code(&bad), 1);
    let missing = statemem(&["query", "--store", "none.store", "--probe", "bad.json"], dir.path());
    assert_eq!(code(&missing), 2);
}

fn rates(metrics: &Value, system: &str) -> Vec<Value> {
    metrics
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["system"] == system)
        .unwrap()["cells"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["accuracy"]["rate"].clone())
        .collect()
}

#[test]
fn evaluate_writes_metrics_summary_and_traces() {
    let dir = TempDir::new().unwrap();
    let out = statemem(
        &["evaluate", "--count", "15", "--seed", "8", "--system", "engine", "--system", "naive", "--out", "run"],
        dir.path(),
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run/metrics.json")).unwrap()).unwrap();
    assert!(rates(&metrics, "engine").iter().all(|r| r == 1.0));
    let naive = rates(&metrics, "naive-retrieval");
    assert_eq!((naive[1].clone(), naive[4].clone()), (Value::from(0.0), Value::from(0.0)));
    let summary = fs::read_to_string(dir.path().join("run/summary.txt")).unwrap();
    assert!(summary.contains("fail|new"));
    let traces = fs::read_to_string(dir.path().join("run/traces.jsonl")).unwrap();
    assert_eq!(traces.lines().count(), 60);

    let report = statemem(&["report", "--metrics", "run/metrics.json"], dir.path());
    assert_eq!(code(&report), 0);
    assert_eq!(stdout(&report), summary);
}

#[test]
fn evaluate_with_no_scenarios_reports_undefined_rates() {
    let dir = TempDir::new().unwrap();
    let out = statemem(&["evaluate", "--count", "0", "--out", "empty"], dir.path());
    assert_eq!(code(&out), 0);
    let metrics: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("empty/metrics.json")).unwrap()).unwrap();
    assert!(rates(&metrics, "engine").iter().all(Value::is_null));
    assert!(stdout(&out).contains("n/a"));
}

#[test]
fn evaluate_replays_a_simulated_suite() {
    let dir = TempDir::new().unwrap();
    haystack_file(dir.path());
    let out = statemem(&["evaluate", "--scenarios", "suite.jsonl", "--out", "replay"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let metrics: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("replay/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics[0]["scenarios"], 1);
}

#[test]
fn bad_adjudicator_is_a_domain_error() {
    let dir = TempDir::new().unwrap();
    let out = statemem(&["evaluate", "--count", "1", "--adjudicator", "carrier-pigeon", "--out", "x"], dir.path());
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("carrier-pigeon"));
}
