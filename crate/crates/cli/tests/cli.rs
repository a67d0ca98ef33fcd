use std::path::PathBuf;
use std::process::{Command, Output};

use hyperalloc_cli::engine::run;
use hyperalloc_cli::report::{emit_report, Format};
use hyperalloc_cli::scenario::parse_scenario;
use hyperalloc_core::subspaces::Subspace;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn hyperalloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hyperalloc"))
        .args(args)
        .env_remove("HYPERALLOC_FORMAT")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_scenario(dir: &tempfile::TempDir, name: &str, text: &str) -> String {
    let path = dir.path().join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

const HEADER: &str = "task,node,subspace,score,combined,loss,rationale";

#[test]
fn offload_fixture_table_names_the_winner() {
    let path = fixture("fog_offload.scn");
    let o = hyperalloc(&["allocate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let chosen: Vec<&str> = out.lines().filter(|l| l.contains("chosen")).collect();
    assert_eq!(chosen.len(), 1);
    assert!(
        chosen[0].contains("R2") && chosen[0].contains("max-score"),
        "{out}"
    );
    assert!(out.contains("rejected: zero score"));
}

#[test]
fn csv_has_one_row_per_candidate_and_subspace() {
    let path = fixture("fog_offload.scn");
    let o = hyperalloc(&[
        "allocate",
        "--scenario",
        path.to_str().unwrap(),
        "--format",
        "csv",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let mut rows = csv::Reader::from_reader(out.as_bytes());
    assert_eq!(
        rows.headers().unwrap().iter().collect::<Vec<_>>().join(","),
        HEADER
    );
    let records: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 3 * 3);
    let labelled: Vec<&csv::StringRecord> = records.iter().filter(|r| !r[6].is_empty()).collect();
    assert_eq!(labelled.len(), 3);
    assert!(labelled
        .iter()
        .all(|r| &r[1] == "R2" && &r[6] == "max-score"));
}

#[test]
fn subspace_flag_limits_csv_rows() {
    let path = fixture("fog_offload.scn");
    let o = hyperalloc(&[
        "allocate",
        "--scenario",
        path.to_str().unwrap(),
        "--format",
        "csv",
        "--subspaces",
        "cmpt,comm",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 1 + 3 * 2);
    assert!(!out.contains("cplt"));
}

#[test]
fn empty_report_is_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(
        &dir,
        "idle.scn",
        "[network]\nnode R1 robot\n\n[task T]\nalgorithms A1\n\n[exec T]\nnodes R1\nA1 2\n",
    );
    let csv = hyperalloc(&["allocate", "--scenario", &path, "--format", "csv"]);
    assert_eq!(csv.status.code(), Some(0));
    assert_eq!(stdout(&csv), format!("{HEADER}\n"));
    let table = hyperalloc(&["allocate", "--scenario", &path]);
    assert_eq!(stdout(&table).lines().count(), 1);
}

#[test]
fn jsonl_records_parse() {
    let path = fixture("warehouse.scn");
    let o = hyperalloc(&[
        "allocate",
        "--scenario",
        path.to_str().unwrap(),
        "--format",
        "jsonl",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let records: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records[0]["record"], "run");
    let decisions = records.iter().filter(|r| r["record"] == "decision").count();
    assert_eq!(decisions, 7);
}

#[test]
fn format_comes_from_the_environment() {
    let path = fixture("minimal.scn");
    let o = Command::new(env!("CARGO_BIN_EXE_hyperalloc"))
        .args(["allocate", "--scenario", path.to_str().unwrap()])
        .env("HYPERALLOC_FORMAT", "csv")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with(HEADER));
}

#[test]
fn out_writes_the_report_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("report.jsonl");
    let path = fixture("minimal.scn");
    let o = hyperalloc(&[
        "allocate",
        "--scenario",
        path.to_str().unwrap(),
        "--format",
        "jsonl",
        "--out",
        target.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(o.stdout.is_empty());
    let written = std::fs::read_to_string(&target).unwrap();
    assert_eq!(written.lines().count(), 3);
}

#[test]
fn malformed_scenario_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(&dir, "bad.scn", "[network]\nnode R1 robot\nbogus line\n");
    let o = hyperalloc(&["allocate", "--scenario", &path]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3, column 1"), "{err}");
}

#[test]
fn bad_flags_exit_with_validation_code() {
    let path = fixture("minimal.scn");
    let p = path.to_str().unwrap();
    for args in [
        vec!["allocate", "--scenario", p, "--subspaces", "cmpt,nope"],
        vec!["allocate", "--scenario", p, "--threads", "0"],
        vec!["allocate", "--scenario", p, "--format", "xml"],
        vec!["allocate"],
    ] {
        assert_eq!(hyperalloc(&args).status.code(), Some(1), "{args:?}");
    }
    assert_eq!(hyperalloc(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_file_is_a_validation_error() {
    let o = hyperalloc(&["allocate", "--scenario", "/nonexistent/x.scn"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn engine_failure_exits_with_engine_code() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_scenario(
        &dir,
        "nobody.scn",
        "[network]\nnode R1 robot\n\n[task T]\nalgorithms A1\n\n[exec T]\nnodes R1\nA1 -\n\n[arrivals]\narrive t=0 task=T\n",
    );
    let o = hyperalloc(&["allocate", "--scenario", &path]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no capable node"));
}

#[test]
fn inspect_prints_model_internals() {
    let path = fixture("fog_offload.scn");
    let p = path.to_str().unwrap();
    for what in ["flows", "pi", "routes"] {
        let o = hyperalloc(&["inspect", "--scenario", p, "--what", what]);
        assert_eq!(o.status.code(), Some(0), "{what}");
        assert!(!stdout(&o).is_empty(), "{what}");
    }
    let flows = stdout(&hyperalloc(&[
        "inspect",
        "--scenario",
        p,
        "--what",
        "flows",
    ]));
    assert_eq!(flows.lines().filter(|l| l.contains("A8")).count(), 4);
}

#[test]
fn table_shows_rounded_completion_scores() {
    let text = std::fs::read_to_string(fixture("fog_offload.scn")).unwrap();
    let mut scenario = parse_scenario(&text).unwrap();
    let t = scenario.find_task("T").unwrap();
    for (label, v) in [("R1", 0.033), ("R2", 0.041), ("R3", 0.036)] {
        let n = scenario.find_node(label).unwrap();
        scenario.scores.insert((Subspace::Cplt, t, n), v);
    }
    let report = run(&scenario, &scenario.options).unwrap();
    let table = emit_report(&report, Format::Table);
    let row = |label: &str| {
        table
            .lines()
            .find(|l| l.split_whitespace().nth(2) == Some(label))
            .unwrap()
            .to_string()
    };
    assert!(row("R1").contains("8.78e-5"), "{table}");
    assert!(row("R2").contains("1.67e-4"), "{table}");
}
