use std::path::PathBuf;
use std::process::{Command, Output};

use jsonschema::JSONSchema;
use serde_json::Value;

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vistask")).args(args).current_dir(root().join("fixtures")).output().unwrap()
}

fn schema(name: &str) -> JSONSchema {
    let text = std::fs::read_to_string(root().join("docs").join(name)).unwrap();
    JSONSchema::compile(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn report(args: &[&str], code: i32) -> Value {
    let out = run(args);
    assert_eq!(out.status.code(), Some(code), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    let s = schema("report.schema.json");
    if let Err(errors) = s.validate(&v) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("{args:?} report violates the schema: {msgs:?}");
    }
    v
}

fn scratch(name: &str, text: &str) -> String {
    let p = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

#[test]
fn analyze_pie_share() {
    let v = report(&["analyze", "--spec", "specs/pie.json", "--task", "tasks/percA.task"], 0);
    assert_eq!(v["result"]["verdict"]["kind"], "precomputed");
    assert_eq!(v["command"][0], "analyze");
    assert_eq!(v["inputs"]["spec"]["sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn compare_bar_and_pie_is_confounded() {
    let v = report(
        &[
            "compare",
            "--a",
            "specs/bar.json",
            "--b",
            "specs/pie.json",
            "--task",
            "tasks/readbar.task",
            "--assume",
            "known-total",
        ],
        0,
    );
    assert_eq!(v["result"]["classification"]["kind"], "confounded");
    assert_eq!(v["result"]["assumptions"]["knownTotal"], true);
}

#[test]
fn verify_count_embeds_witness() {
    let v = report(&["verify", "--spec", "specs/bar.json", "--task", "tasks/countby.task"], 0);
    assert_eq!(v["result"]["verdict"]["reason"], "count-from-sum");
    let w = &v["result"]["counterexample"];
    assert_eq!(w["construction"], "merge-rows");
    assert_ne!(w["q1"], w["q2"]);
}

#[test]
fn verify_answerable_runs_trials() {
    let v = report(
        &["verify", "--spec", "specs/propStacked.json", "--task", "tasks/percB.task", "--trials", "200", "--seed", "9"],
        0,
    );
    assert_eq!(v["result"]["verification"]["passed"], true);
    assert_eq!(v["result"]["verification"]["trials"], 200);
    assert_eq!(v["result"]["family"]["seed"], 9);
}

#[test]
fn seeds_change_samples_not_verdicts() {
    let a = report(&["verify", "--spec", "specs/bar.json", "--task", "tasks/countby.task", "--seed", "1"], 0);
    let b = report(&["verify", "--spec", "specs/bar.json", "--task", "tasks/countby.task", "--seed", "2"], 0);
    assert_ne!(a["result"]["counterexample"]["d1"], b["result"]["counterexample"]["d1"]);
    assert_eq!(a["result"]["verdict"], b["result"]["verdict"]);
}

#[test]
fn exhausted_search_is_a_disagreement() {
    report(&["verify", "--spec", "specs/bar.json", "--task", "tasks/countby.task", "--budget", "0"], 4);
}

#[test]
fn cost_rank_flexibility_gallery_reports() {
    let v = report(&["cost", "--spec", "specs/bar.json", "--task", "tasks/percA.task"], 0);
    assert_eq!(v["result"]["cost"]["total"], 6.5);
    let v = report(&["cost", "--spec", "specs/bar.json", "--task", "tasks/countby.task"], 0);
    assert_eq!(v["result"]["cost"]["total"], "infinite");
    let v = report(
        &[
            "cost",
            "--spec",
            "specs/propStacked.json",
            "--task",
            "tasks/percAB.task",
            "--profile",
            "../profiles/expert.json",
        ],
        0,
    );
    assert!(v["inputs"]["profile"].is_object());
    let v = report(
        &[
            "rank",
            "--task",
            "tasks/readbar.task",
            "--spec",
            "specs/pie.json",
            "--spec",
            "specs/bar.json",
            "--spec",
            "specs/scatter.json",
        ],
        0,
    );
    let order: Vec<&str> =
        v["result"]["ranking"].as_array().unwrap().iter().map(|e| e["spec"].as_str().unwrap()).collect();
    assert_eq!(order, ["bar", "scatter", "pie"]);
    let v = report(&["flexibility", "--spec", "specs/scatter.json", "--taskset", "tasksets/t3.json"], 0);
    assert_eq!(v["result"]["coverage"], 1.0);
    let v = report(&["gallery"], 0);
    assert_eq!(v["result"]["specs"].as_array().unwrap().len(), 4);
}

#[test]
fn unknown_verdict_exits_three() {
    let spec = r#"{"name": "top2", "schema": [{"name": "a", "type": "text"}, {"name": "b", "type": "number"}],
      "pipeline": [{"op": "groupAggregate", "keys": ["a"], "aggs": [{"fn": "sum", "input": "b", "as": "c"}]}, {"op": "limit", "n": 2}],
      "encoding": {"mark": "bar", "bindings": {"x": {"attr": "a"}, "y": {"attr": "c"}}}}"#;
    let path = scratch("top2.json", spec);
    let v = report(&["analyze", "--spec", &path, "--task", "tasks/percA.task"], 3);
    assert_eq!(v["result"]["verdict"]["kind"], "unknown");
}

#[test]
fn validation_errors_exit_two_with_one_line() {
    for args in [
        vec!["analyze", "--spec", "specs/pie.json"],
        vec!["analyze", "--spec", "specs/pie.json", "--task", "tasks/percA.task", "--frobnicate"],
        vec!["analyze", "--spec", "specs/missing.json", "--task", "tasks/percA.task"],
        vec!["analyze", "--spec", "specs/pie.json", "--task", "tasks/avgvg.task"],
        vec!["analyze", "--spec", "specs/pie.json", "--task", "tasks/percA.task", "--assume", "psychic"],
        vec!["flexibility", "--spec", "specs/pie.json", "--taskset", "tasksets/t4.json"],
        vec!["verify", "--spec", "specs/pie.json", "--task", "tasks/percA.task", "--rows", "1,9"],
        vec!["frobnicate"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(out.stdout.is_empty(), "{args:?}");
        assert_eq!(String::from_utf8_lossy(&out.stderr).trim_end().lines().count(), 1, "{args:?}");
    }
    let bad = scratch(
        "bad-profile.json",
        r#"{"name": "x", "base": {"unitCosts": {"readValue": -1}, "perValueScanCost": 1}}"#,
    );
    let out = run(&["cost", "--spec", "specs/pie.json", "--task", "tasks/percA.task", "--profile", &bad]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn render_writes_svg() {
    let out = run(&["render", "--spec", "specs/bar.json", "--data", "data/D.csv"]);
    assert_eq!(out.status.code(), Some(0));
    let svg = String::from_utf8(out.stdout).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    assert_eq!(doc.descendants().filter(|n| n.has_tag_name("rect")).count(), 3);
}

#[test]
fn shipped_profiles_match_their_schema() {
    let s = schema("profile.schema.json");
    for name in ["default.json", "expert.json"] {
        let text = std::fs::read_to_string(root().join("profiles").join(name)).unwrap();
        assert!(s.is_valid(&serde_json::from_str(&text).unwrap()), "{name}");
        vistask::cost::ExpertiseProfile::from_json(&text).unwrap();
    }
    let bad: Value =
        serde_json::from_str(r#"{"name": "x", "base": {"unitCosts": {"teleport": 1}, "perValueScanCost": 1}}"#)
            .unwrap();
    assert!(!s.is_valid(&bad));
    assert!(vistask::cost::ExpertiseProfile::from_json(&bad.to_string()).is_err());
}

#[test]
fn fixture_specs_round_trip_through_gallery() {
    let v = report(&["gallery"], 0);
    for s in v["result"]["specs"].as_array().unwrap() {
        let name = s["name"].as_str().unwrap();
        let text = std::fs::read_to_string(root().join("fixtures/specs").join(format!("{name}.json"))).unwrap();
        assert_eq!(&serde_json::from_str::<Value>(&text).unwrap(), s, "{name}");
    }
}
