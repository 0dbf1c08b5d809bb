//! The `vistask` command line. Every command except `render` prints one JSON
//! report: the command echo, digests of the files read, the result payload
//! and the tool version.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value as Json};
use sha2::{Digest, Sha256};

use crate::cost::{cost_plan, default_profile, rank_visualizations, ExpertiseProfile, RankError};
use crate::experiment::classify_comparison;
use crate::oracle::{search_counterexample, verify_proxy, DatasetFamily, SearchOptions};
use crate::rewrite::{analyze, flexibility_report, AnalysisError, AnalysisOptions, Verdict};
use crate::spec::{emit_svg, encode, gallery, parse_spec, VisSpec};
use crate::table::{load_csv, Value};
use crate::task::{enumerate_task_set, parse_task, TaskQuery, TaskSet};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_UNKNOWN: i32 = 3;
pub const EXIT_DISAGREE: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "vistask", version, about = "Which analytic tasks can a chart answer, and at what cost")]
struct Cli {
    /// Human-readable tables instead of JSON.
    #[arg(long, global = true)]
    pretty: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct AnalysisArgs {
    /// Analysis assumption; only `known-total` exists.
    #[arg(long, value_parser = ["known-total"])]
    assume: Vec<String>,
    /// Known values of a key column, e.g. `a=A,B,C`. Repeatable.
    #[arg(long = "domain", value_name = "COL=V1,V2,..")]
    domains: Vec<String>,
    /// Let plans read every column of the prepared table, bound or not.
    #[arg(long)]
    prepared: bool,
}

#[derive(Args, Debug, Clone)]
struct OracleArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    trials: u64,
    /// Candidate pairs examined when looking for a counterexample.
    #[arg(long, default_value_t = 10_000)]
    budget: u64,
    #[arg(long, default_value_t = 1e-9)]
    eps: f64,
    /// Values of generated text columns.
    #[arg(long, value_delimiter = ',', default_value = "A,B,C")]
    groups: Vec<String>,
    #[arg(long, value_delimiter = ',', num_args = 2, value_names = ["MIN", "MAX"], default_values_t = [1, 6])]
    rows: Vec<usize>,
    #[arg(long, value_delimiter = ',', num_args = 2, value_names = ["LO", "HI"], default_values_t = [1, 9], allow_negative_numbers = true)]
    values: Vec<i64>,
    /// Fractional instead of integer values.
    #[arg(long)]
    float: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Verdict and proxy plan for a task on a chart.
    Analyze {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Analyze, then check the verdict on generated datasets.
    Verify {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
        #[command(flatten)]
        oracle: OracleArgs,
    },
    /// Analyze, then price the plan.
    Cost {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Order charts by the cost of answering one task.
    Rank {
        #[arg(long)]
        task: PathBuf,
        #[arg(long, required = true)]
        spec: Vec<PathBuf>,
        #[arg(long)]
        profile: Option<PathBuf>,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Classify what a study of chart A against chart B would measure.
    Compare {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        task: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Coverage and residual work of a chart over a task set.
    Flexibility {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        taskset: PathBuf,
        #[command(flatten)]
        analysis: AnalysisArgs,
    },
    /// Print the four canonical specs, optionally writing them to a directory.
    Gallery {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Debug SVG of a spec over a CSV file.
    Render {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Invalid(String),
    Unknown(String),
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Unknown(m) => Failure::Unknown(m),
            e => Failure::Invalid(e.to_string()),
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    Failure::Invalid(e.to_string())
}

#[derive(Debug, Clone, Serialize)]
struct InputDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'a [String],
    inputs: &'a BTreeMap<String, InputDigest>,
    result: &'a Json,
    version: String,
}

#[derive(Default)]
struct Inputs(BTreeMap<String, InputDigest>);

impl Inputs {
    fn read(&mut self, label: &str, path: &Path) -> Result<String, Failure> {
        let bytes = std::fs::read(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        self.0.insert(
            label.to_string(),
            InputDigest { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) },
        );
        String::from_utf8(bytes).map_err(|_| invalid(format!("{} is not UTF-8", path.display())))
    }

    fn spec(&mut self, label: &str, path: &Path) -> Result<VisSpec, Failure> {
        let text = self.read(label, path)?;
        parse_spec(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    fn task(&mut self, path: &Path, spec: &VisSpec) -> Result<TaskQuery, Failure> {
        let text = self.read("task", path)?;
        parse_task(&text, Some(&spec.schema)).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    fn profile(&mut self, path: Option<&Path>) -> Result<ExpertiseProfile, Failure> {
        match path {
            None => Ok(default_profile()),
            Some(p) => {
                let text = self.read("profile", p)?;
                ExpertiseProfile::from_json(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))
            }
        }
    }
}

fn parse_value(s: &str) -> Value {
    s.parse::<f64>().map(Value::Number).unwrap_or_else(|_| Value::text(s))
}

fn analysis_options(a: &AnalysisArgs) -> Result<AnalysisOptions, Failure> {
    let mut opts = AnalysisOptions {
        known_total: a.assume.iter().any(|x| x == "known-total"),
        view_level: !a.prepared,
        ..Default::default()
    };
    for d in &a.domains {
        let (col, vals) = d.split_once('=').ok_or_else(|| invalid(format!("--domain {d}: expected COL=V1,V2,..")))?;
        let vals: Vec<Value> = vals.split(',').filter(|v| !v.is_empty()).map(parse_value).collect();
        if vals.is_empty() {
            return Err(invalid(format!("--domain {d}: no values")));
        }
        opts.key_domains.insert(col.to_string(), vals);
    }
    Ok(opts)
}

fn assumptions_json(opts: &AnalysisOptions) -> Json {
    json!({
        "knownTotal": opts.known_total,
        "viewLevel": opts.view_level,
        "keyDomains": opts.key_domains,
    })
}

fn family(o: &OracleArgs) -> Result<DatasetFamily, Failure> {
    let f = DatasetFamily {
        group_domain: o.groups.clone(),
        row_range: [o.rows[0], o.rows[1]],
        value_range: [o.values[0], o.values[1]],
        seed: o.seed,
        float_values: o.float,
    };
    f.validate().map_err(invalid)?;
    Ok(f)
}

fn to_json(v: impl Serialize) -> Json {
    serde_json::to_value(v).expect("report payloads serialize")
}

const MAX_REPORTED_FAILURES: usize = 5;

fn execute(cmd: &Command, inputs: &mut Inputs, written: &mut Vec<u8>) -> Result<(Json, i32), Failure> {
    match cmd {
        Command::Analyze { spec, task, analysis } => {
            let s = inputs.spec("spec", spec)?;
            let q = inputs.task(task, &s)?;
            let opts = analysis_options(analysis)?;
            let plan = analyze(&q, &s, &opts)?;
            let result = json!({
                "spec": s.name,
                "task": q.to_string(),
                "assumptions": assumptions_json(&opts),
                "verdict": plan.verdict,
                "plan": plan,
            });
            Ok((result, EXIT_OK))
        }
        Command::Verify { spec, task, analysis, oracle } => {
            let s = inputs.spec("spec", spec)?;
            let q = inputs.task(task, &s)?;
            let opts = analysis_options(analysis)?;
            let fam = family(oracle)?;
            let plan = analyze(&q, &s, &opts)?;
            let mut result = json!({
                "spec": s.name,
                "task": q.to_string(),
                "assumptions": assumptions_json(&opts),
                "family": fam,
                "verdict": plan.verdict,
                "plan": plan,
            });
            let code = match &plan.verdict {
                Verdict::Impossible { reason } => {
                    let so = SearchOptions { view_level: plan.view_level, reason: Some(*reason), eps: oracle.eps };
                    let w = search_counterexample(&q, &s, &fam, oracle.budget, &so).map_err(invalid)?;
                    let found = w.is_some();
                    result["counterexample"] = to_json(w);
                    result["budget"] = json!(oracle.budget);
                    if found {
                        EXIT_OK
                    } else {
                        EXIT_DISAGREE
                    }
                }
                _ => {
                    let r = verify_proxy(&q, &s, &plan, &fam, oracle.trials, oracle.eps).map_err(invalid)?;
                    result["verification"] = json!({
                        "trials": r.trials,
                        "skipped": r.skipped,
                        "passed": r.passed,
                        "failureCount": r.failures.len(),
                        "failures": r.failures.iter().take(MAX_REPORTED_FAILURES).collect::<Vec<_>>(),
                    });
                    if r.passed {
                        EXIT_OK
                    } else {
                        EXIT_DISAGREE
                    }
                }
            };
            Ok((result, code))
        }
        Command::Cost { spec, task, profile, analysis } => {
            let s = inputs.spec("spec", spec)?;
            let q = inputs.task(task, &s)?;
            let prof = inputs.profile(profile.as_deref())?;
            let opts = analysis_options(analysis)?;
            let plan = analyze(&q, &s, &opts)?;
            let cost = if plan.verdict.is_answerable() {
                to_json(cost_plan(&plan, &prof).map_err(invalid)?)
            } else {
                json!({ "total": "infinite" })
            };
            let result = json!({
                "spec": s.name,
                "task": q.to_string(),
                "assumptions": assumptions_json(&opts),
                "profile": prof.name,
                "verdict": plan.verdict,
                "plan": plan,
                "cost": cost,
            });
            Ok((result, EXIT_OK))
        }
        Command::Rank { task, spec, profile, analysis } => {
            let specs = spec
                .iter()
                .enumerate()
                .map(|(i, p)| inputs.spec(&format!("spec[{i}]"), p))
                .collect::<Result<Vec<_>, _>>()?;
            let q = inputs.task(task, &specs[0])?;
            let prof = inputs.profile(profile.as_deref())?;
            let opts = analysis_options(analysis)?;
            let ranking = rank_visualizations(&q, &specs, &prof, &opts).map_err(|e| match e {
                RankError::Analysis(a) => Failure::from(a),
                RankError::Cost(c) => invalid(c),
            })?;
            let result = json!({
                "task": q.to_string(),
                "assumptions": assumptions_json(&opts),
                "profile": prof.name,
                "ranking": ranking,
            });
            Ok((result, EXIT_OK))
        }
        Command::Compare { a, b, task, analysis } => {
            let sa = inputs.spec("a", a)?;
            let sb = inputs.spec("b", b)?;
            let q = inputs.task(task, &sa)?;
            let opts = analysis_options(analysis)?;
            let report = classify_comparison(&sa, &sb, &q, &opts)?;
            let mut result = to_json(&report);
            result["task"] = json!(q.to_string());
            result["assumptions"] = assumptions_json(&opts);
            Ok((result, EXIT_OK))
        }
        Command::Flexibility { spec, taskset, analysis } => {
            let s = inputs.spec("spec", spec)?;
            let text = inputs.read("taskset", taskset)?;
            let set = TaskSet::from_json(&text).map_err(|e| invalid(format!("{}: {e}", taskset.display())))?;
            let opts = analysis_options(analysis)?;
            let tasks = enumerate_task_set(&set, Some(&s.schema), &opts.key_domains).map_err(invalid)?;
            let report = flexibility_report(&s, &tasks, &opts)?;
            let mut result = to_json(&report);
            result["taskset"] = json!(set.name);
            result["assumptions"] = assumptions_json(&opts);
            Ok((result, EXIT_OK))
        }
        Command::Gallery { out } => {
            let specs = gallery();
            if let Some(dir) = out {
                std::fs::create_dir_all(dir).map_err(|e| invalid(format!("cannot create {}: {e}", dir.display())))?;
                for s in &specs {
                    let path = dir.join(format!("{}.json", s.name));
                    std::fs::write(&path, s.to_json() + "\n")
                        .map_err(|e| invalid(format!("cannot write {}: {e}", path.display())))?;
                }
            }
            Ok((json!({ "specs": specs }), EXIT_OK))
        }
        Command::Render { spec, data, out } => {
            let s = inputs.spec("spec", spec)?;
            let text = inputs.read("data", data)?;
            let d = load_csv(&text, Some(&s.schema)).map_err(|e| invalid(format!("{}: {e}", data.display())))?;
            let p = s.pipeline.execute(&d).map_err(invalid)?;
            let marks = encode(&p, &s.encoding).map_err(invalid)?;
            let svg = emit_svg(&marks);
            match out {
                Some(path) => {
                    std::fs::write(path, &svg).map_err(|e| invalid(format!("cannot write {}: {e}", path.display())))?
                }
                None => written.extend_from_slice(svg.as_bytes()),
            }
            Ok((Json::Null, EXIT_OK))
        }
    }
}

fn scalar(v: &Json) -> Option<String> {
    match v {
        Json::Null => Some("-".into()),
        Json::Bool(b) => Some(b.to_string()),
        Json::Number(n) => Some(n.to_string()),
        Json::String(s) => Some(s.clone()),
        Json::Array(a) if a.iter().all(|x| !x.is_object() && !x.is_array()) => {
            Some(a.iter().filter_map(scalar).collect::<Vec<_>>().join(", "))
        }
        Json::Object(o) if o.len() == 1 && o.contains_key("kind") => scalar(&o["kind"]),
        Json::Object(o) if o.get("kind").is_some_and(|k| k.is_string()) => {
            let mut parts = vec![scalar(&o["kind"]).unwrap_or_default()];
            parts.extend(
                o.iter()
                    .filter(|(k, _)| *k != "kind")
                    .map(|(k, v)| format!("{k}={}", scalar(v).unwrap_or_else(|| v.to_string()))),
            );
            Some(parts.join(" "))
        }
        _ => None,
    }
}

fn table(rows: &[Json], indent: &str, out: &mut String) {
    let mut cols: Vec<String> = Vec::new();
    for r in rows {
        for (k, v) in r.as_object().into_iter().flatten() {
            if !cols.contains(k) && scalar(v).is_some() {
                cols.push(k.clone());
            }
        }
    }
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            cols.iter()
                .map(|c| r.get(c).map(|v| scalar(v).unwrap_or_else(|| v.to_string())).unwrap_or_default())
                .collect()
        })
        .collect();
    let widths: Vec<usize> = (0..cols.len())
        .map(|i| cells.iter().map(|r| r[i].chars().count()).chain([cols[i].len()]).max().unwrap_or(0))
        .collect();
    let line = |vals: &[String]| {
        vals.iter().zip(&widths).map(|(v, w)| format!("{v:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
    };
    let _ = writeln!(out, "{indent}{}", line(&cols));
    for r in &cells {
        let _ = writeln!(out, "{indent}{}", line(r));
    }
}

fn pretty(v: &Json, indent: &str, out: &mut String) {
    let Json::Object(o) = v else { return };
    for (k, v) in o {
        match v {
            Json::Array(a) if a.iter().all(Json::is_object) && !a.is_empty() => {
                let _ = writeln!(out, "{indent}{k}:");
                table(a, &format!("{indent}  "), out);
            }
            _ => match scalar(v) {
                Some(s) => {
                    let _ = writeln!(out, "{indent}{k}: {s}");
                }
                None => {
                    let _ = writeln!(out, "{indent}{k}:");
                    pretty(v, &format!("{indent}  "), out);
                }
            },
        }
    }
}

/// Runs one command line (without the program name) and returns the exit code.
pub fn run(args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let argv = std::iter::once("vistask".to_string()).chain(args.iter().cloned());
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(
                e.kind(),
                ErrorKind::DisplayHelp
                    | ErrorKind::DisplayVersion
                    | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand
            ) {
                let _ = write!(out, "{e}");
                return if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                    EXIT_INVALID
                } else {
                    EXIT_OK
                };
            }
            let msg = e.to_string();
            let _ = writeln!(err, "{}", msg.lines().next().unwrap_or("invalid arguments"));
            return EXIT_INVALID;
        }
    };
    let mut inputs = Inputs::default();
    let mut raw = Vec::new();
    let (result, code) = match execute(&cli.command, &mut inputs, &mut raw) {
        Ok(r) => r,
        Err(Failure::Invalid(m)) => {
            let _ = writeln!(err, "error: {}", m.lines().next().unwrap_or_default());
            return EXIT_INVALID;
        }
        Err(Failure::Unknown(m)) => (json!({ "verdict": { "kind": "unknown", "reason": m } }), EXIT_UNKNOWN),
    };
    if matches!(cli.command, Command::Render { .. }) {
        let _ = out.write_all(&raw);
        return code;
    }
    let report = Report {
        command: args,
        inputs: &inputs.0,
        result: &result,
        version: format!("vistask {}", env!("CARGO_PKG_VERSION")),
    };
    let text = if cli.pretty {
        let mut s = String::new();
        pretty(&to_json(&report), "", &mut s);
        s
    } else {
        serde_json::to_string(&to_json(&report)).expect("report serializes") + "\n"
    };
    let _ = out.write_all(text.as_bytes());
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(&args, &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn gallery_report_is_stable() {
        let (code, first, _) = call(&["gallery"]);
        assert_eq!(code, 0);
        assert_eq!(first, call(&["gallery"]).1);
        let v: Json = serde_json::from_str(&first).unwrap();
        assert_eq!(v["result"]["specs"].as_array().unwrap().len(), 4);
        assert_eq!(v["version"], format!("vistask {}", env!("CARGO_PKG_VERSION")));
    }

    #[test]
    fn bad_flags_exit_two_with_one_line() {
        let (code, _, err) = call(&["analyze", "--nope"]);
        assert_eq!(code, 2);
        assert_eq!(err.lines().count(), 1);
        let (code, _, err) = call(&["analyze", "--spec", "/no/such.json", "--task", "/no/such.task"]);
        assert_eq!(code, 2);
        assert!(err.starts_with("error: cannot read"));
    }

    #[test]
    fn domain_flag_parses() {
        let a = AnalysisArgs { assume: vec!["known-total".into()], domains: vec!["a=A,B,C".into()], prepared: false };
        let o = analysis_options(&a).unwrap();
        assert!(o.known_total && o.view_level);
        assert_eq!(o.key_domains["a"].len(), 3);
        let bad = AnalysisArgs { domains: vec!["a".into()], ..a };
        assert!(analysis_options(&bad).is_err());
    }

    #[test]
    fn pretty_prints_tables() {
        let mut s = String::new();
        pretty(
            &json!({"ranking": [{"spec": "pie", "cost": 1.5}, {"spec": "scatter", "cost": "infinite"}], "task": "t"}),
            "",
            &mut s,
        );
        assert!(s.contains("ranking:\n  cost      spec\n  1.5       pie\n  infinite  scatter\n"), "{s}");
        assert!(s.contains("task: t"));
    }
}
