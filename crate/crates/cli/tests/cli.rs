use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tigload::extraneous::{extraneous_load, HeuristicConfig, HeuristicScorer};
use tigload::intrinsic::{intrinsic_load, IntrinsicParams};
use tigload::taskgen::{sweep, SweepSpec};

fn tigload(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tigload"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Records of a JSONL artifact, header excluded.
fn records(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|v| v.get("_meta").is_none())
        .collect()
}

fn one_task_line() -> String {
    let spec = SweepSpec {
        targets: vec![6.0],
        instances_per_target: 1,
        ..Default::default()
    };
    sweep(&spec, IntrinsicParams::default()).unwrap().tasks[0].to_json().unwrap()
}

#[test]
fn empty_input_gives_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tasks.jsonl"), "").unwrap();
    let o = tigload(dir.path(), &["analyze", "--tasks", "tasks.jsonl", "--out", "loads.jsonl"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(records(&dir.path().join("loads.jsonl")).is_empty());
}

#[test]
fn malformed_line_is_reported_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tasks.jsonl"), format!("{}\n{{\"id\": \"broken\"\n", one_task_line())).unwrap();
    let o = tigload(dir.path(), &["analyze", "--tasks", "tasks.jsonl", "--out", "loads.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tasks.jsonl:2:"), "{}", stderr(&o));
    assert_eq!(records(&dir.path().join("loads.jsonl")).len(), 1);
}

#[test]
fn invalid_graph_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut task: Value = serde_json::from_str(&one_task_line()).unwrap();
    task["graph"]["edges"]
        .as_array_mut()
        .unwrap()
        .push(serde_json::json!({"src": "nowhere", "dst": "f1", "kind": "execution"}));
    fs::write(dir.path().join("tasks.jsonl"), format!("{task}\n")).unwrap();
    let o = tigload(dir.path(), &["analyze", "--tasks", "tasks.jsonl", "--out", "loads.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(records(&dir.path().join("loads.jsonl")).is_empty());
}

#[test]
fn bad_config_exits_with_config_status() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("tasks.jsonl"), "").unwrap();
    fs::write(dir.path().join("run.toml"), "lambda = 0.5\nlamda = 2\n").unwrap();
    let o = tigload(
        dir.path(),
        &["--config", "run.toml", "analyze", "--tasks", "tasks.jsonl", "--out", "loads.jsonl"],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(!dir.path().join("loads.jsonl").exists());

    let o = tigload(dir.path(), &["--lambda=-1", "analyze", "--tasks", "tasks.jsonl", "--out", "loads.jsonl"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

fn write_loads(dir: &Path, ids: &[&str]) {
    let lines: String = ids
        .iter()
        .enumerate()
        .map(|(i, id)| format!("{{\"task_id\":\"{id}\",\"cl_i\":{},\"cl_e\":{}}}\n", 2 * i, (i % 3) as f64 * 0.5))
        .collect();
    fs::write(dir.join("loads.jsonl"), lines).unwrap();
}

#[test]
fn orphan_trials_are_named() {
    let dir = tempfile::tempdir().unwrap();
    write_loads(dir.path(), &["t1"]);
    fs::write(
        dir.path().join("trials.jsonl"),
        "{\"task_id\":\"t1\",\"agent_id\":\"a\",\"success\":true}\n{\"task_id\":\"ghost\",\"agent_id\":\"a\",\"success\":false}\n",
    )
    .unwrap();
    let o = tigload(dir.path(), &["fit", "--loads", "loads.jsonl", "--trials", "trials.jsonl", "--out-dir", "fit"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ghost"), "{}", stderr(&o));
}

#[test]
fn fit_report_and_route_for_two_agents() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ids: Vec<String> = (0..40).map(|i| format!("t{i:02}")).collect();
    write_loads(d, &ids.iter().map(String::as_str).collect::<Vec<_>>());
    for (agent, k) in [("alpha", "0.02"), ("beta", "0.08")] {
        let o = tigload(
            d,
            &[
                "simulate", "--loads", "loads.jsonl", "--agent-id", agent, "--k", k, "--b", "0.2",
                "--trials-per-task", "50", "--out", &format!("{agent}.jsonl"),
            ],
        );
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let both = fs::read_to_string(d.join("alpha.jsonl")).unwrap() + &fs::read_to_string(d.join("beta.jsonl")).unwrap();
    fs::write(d.join("trials.jsonl"), both).unwrap();

    let o = tigload(d, &["fit", "--loads", "loads.jsonl", "--trials", "trials.jsonl", "--out-dir", "fit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: Value = serde_json::from_str(&fs::read_to_string(d.join("fit/profiles.json")).unwrap()).unwrap();
    let profiles = doc["profiles"].as_array().unwrap();
    assert_eq!(profiles.len(), 2);
    let k_of = |i: usize| profiles[i]["profile"]["k"].as_f64().unwrap();
    assert!(k_of(0) < k_of(1));
    for f in ["hl.json", "calibration.csv", "decay_curve.csv"] {
        assert!(d.join("fit").join(f).exists(), "{f}");
    }

    let hl = r#"{"hosmer_lemeshow": [
        {"agent_id": "alpha", "chi2": 4.87, "dof": 8, "p_value": 0.77, "groups": []},
        {"agent_id": "beta", "chi2": 10.47, "dof": 8, "p_value": 0.23, "groups": []}
    ]}"#;
    fs::write(d.join("hl.json"), hl).unwrap();
    let o = tigload(d, &["report", "--profiles", "fit/profiles.json", "--hl", "hl.json", "--out", "report.md"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = fs::read_to_string(d.join("report.md")).unwrap();
    assert!(report.contains("| alpha | 4.87 | 8 | 0.77 |"), "{report}");
    assert!(report.contains("| beta | 10.47 | 8 | 0.23 |"), "{report}");

    fs::write(d.join("policy.toml"), "kind = \"max_accuracy\"\n[costs]\nalpha = 1.0\nbeta = 1.0\n").unwrap();
    let o = tigload(
        d,
        &["route", "--loads", "loads.jsonl", "--profiles", "fit/profiles.json", "--policy", "policy.toml", "--out", "routes.jsonl"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let routes = records(&d.join("routes.jsonl"));
    assert_eq!(routes.len(), 40);
    assert!(routes.iter().all(|r| r["agent_id"] == "alpha"));
}

#[test]
fn analyze_matches_library_on_500_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SweepSpec {
        targets: vec![4.0, 8.0, 12.0, 16.0, 20.0],
        instances_per_target: 100,
        ..Default::default()
    };
    let p = IntrinsicParams::default();
    let out = sweep(&spec, p).unwrap();
    assert_eq!(out.tasks.len(), 500);
    let body: String = out.tasks.iter().map(|t| t.to_json().unwrap() + "\n").collect();
    fs::write(dir.path().join("tasks.jsonl"), body).unwrap();

    let o = tigload(dir.path(), &["analyze", "--tasks", "tasks.jsonl", "--out", "loads.jsonl"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let recs = records(&dir.path().join("loads.jsonl"));
    assert_eq!(recs.len(), 500);

    let scorer = HeuristicScorer::new(HeuristicConfig::default());
    let mut tasks = out.tasks;
    tasks.sort_by(|a, b| a.id.cmp(&b.id));
    for (t, r) in tasks.iter().zip(&recs) {
        assert_eq!(r["task_id"], t.id.as_str());
        assert_eq!(r["cl_i"].as_f64().unwrap(), intrinsic_load(t, p).unwrap().total);
        assert_eq!(r["cl_e"].as_f64().unwrap(), extraneous_load(t, &scorer).unwrap().total);
    }
}
