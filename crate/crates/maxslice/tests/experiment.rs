use std::fs;
use std::path::{Path, PathBuf};

use maxslice::experiment::report::{RunReport, RunRow, TaskReport, TABLE_COLUMNS};
use maxslice::experiment::scenario::Scenario;
use maxslice::experiment::{run_scenario, run_scenario_file, run_suite, RunOptions, ScenarioError};
use maxslice::maximal_solver::{Classification, Method, SolveStatus};
use proptest::prelude::*;

fn scratch(label: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("maxslice-it-{label}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

const CUBIC: &str = r#"
name = "cubic_small"
tags = ["grw"]
seed = 11

[model]
family = "grw"
f = "2 + t^3"
interval = [-1.2, 2.0]

[fiber]
sizes = [64]
lengths = ["2*pi"]

[[tasks]]
kind = "classify"
t_range = [-1.0, 1.5]
expect = { verdict = "non_contracting" }

[[tasks]]
kind = "solve_maximal"
inits = 3
expect = { status = "converged", classification = "slice", max_residual = 1e-9, first_variation = 1e-6 }

[[tasks]]
kind = "refinement_study"
quantity = "routes"
graph = "0.2*sin(x)"
sizes = [32, 64, 128]
expect = { min_order = 1.9 }
"#;

fn failing() -> String {
    CUBIC.replace("cubic_small", "cubic_wrong").replace("\"non_contracting\"", "\"transition\"")
}

#[test]
fn cubic_scenario_passes_and_reports_provenance() {
    let sc = Scenario::from_str(CUBIC).unwrap();
    let report = run_scenario(&sc, &RunOptions::default()).unwrap();
    assert!(report.passed, "{:?}", report.failures().collect::<Vec<_>>());
    assert_eq!(report.provenance.grid_sizes, vec![64]);
    assert_eq!(report.provenance.convention_sign, 1.0);
    assert_eq!(report.provenance.tags, vec!["grw".to_string()]);
    assert_eq!(report.table_rows().len(), 3);
    for row in report.table_rows() {
        assert_eq!(row[2], "converged");
        assert!(!row[5].is_empty(), "slice rows carry t0");
    }
}

#[test]
fn report_json_round_trips() {
    let sc = Scenario::from_str(CUBIC).unwrap();
    let report = run_scenario(&sc, &RunOptions::default()).unwrap();
    let text = serde_json::to_string(&report).unwrap();
    let back: RunReport = serde_json::from_str(&text).unwrap();
    assert_eq!(back, report);
}

#[test]
fn table_is_byte_identical_across_runs() {
    let sc = Scenario::from_str(CUBIC).unwrap();
    let a = run_scenario(&sc, &RunOptions::default()).unwrap().table_csv().unwrap();
    let b = run_scenario(&sc, &RunOptions::default()).unwrap().table_csv().unwrap();
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().next().unwrap(), TABLE_COLUMNS.join(","));
}

#[test]
fn seed_override_changes_the_runs() {
    let sc = Scenario::from_str(CUBIC).unwrap();
    let base = run_scenario(&sc, &RunOptions::default()).unwrap();
    let other = run_scenario(&sc, &RunOptions { seed: Some(99), ..Default::default() }).unwrap();
    assert_eq!(base.table_rows()[0][1], "11");
    assert_eq!(other.table_rows()[0][1], "99");
    assert!(other.passed);
}

#[test]
fn grid_override_replaces_solve_grids() {
    let sc = Scenario::from_str(CUBIC).unwrap();
    let opts = RunOptions { grid_override: Some(vec![32]), ..Default::default() };
    let report = run_scenario(&sc, &opts).unwrap();
    let solve = report.tasks.iter().find_map(|t| match t {
        TaskReport::Solve { sizes, .. } => Some(sizes.clone()),
        _ => None,
    });
    assert_eq!(solve, Some(vec![32]));
    let refine = report.tasks.iter().find_map(|t| match t {
        TaskReport::RefinementStudy { sizes, .. } => Some(sizes.clone()),
        _ => None,
    });
    assert_eq!(refine, Some(vec![32, 64, 128]));
}

#[test]
fn scenario_file_writes_both_artifacts() {
    let dir = scratch("file");
    let path = dir.join("cubic.toml");
    fs::write(&path, CUBIC).unwrap();
    let out = dir.join("out");
    let report = run_scenario_file(&path, Some(&out), &RunOptions::default()).unwrap();
    let written = out.join("cubic_small");
    let json: RunReport = serde_json::from_slice(&fs::read(written.join("report.json")).unwrap()).unwrap();
    assert_eq!(json, report);
    assert_eq!(fs::read(written.join("table.csv")).unwrap(), report.table_csv().unwrap());
    let leftovers: Vec<_> = fs::read_dir(&written).unwrap().filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().ends_with(".tmp")).collect();
    assert!(leftovers.is_empty());
}

#[test]
fn suite_runs_every_scenario_despite_a_failure() {
    let dir = scratch("suite");
    fs::write(dir.join("a_good.toml"), CUBIC).unwrap();
    fs::write(dir.join("b_bad.toml"), failing()).unwrap();
    let out = dir.join("out");
    let suite = run_suite(&dir, Some(&out), &RunOptions::default()).unwrap();
    assert!(!suite.passed);
    assert_eq!(suite.entries.len(), 2);
    assert!(suite.entries[0].passed);
    assert!(!suite.entries[1].passed);
    assert_eq!(suite.entries[1].failed.len(), 1);
    assert!(out.join("summary.json").exists() && out.join("summary.csv").exists());
    assert!(out.join("cubic_small").join("table.csv").exists());
    assert!(out.join("cubic_wrong").join("report.json").exists());
}

#[test]
fn suite_csv_is_deterministic() {
    let dir = scratch("suite-det");
    fs::write(dir.join("a.toml"), CUBIC).unwrap();
    let one = run_suite(&dir, None, &RunOptions::default()).unwrap();
    let two = run_suite(&dir, None, &RunOptions::default()).unwrap();
    assert_eq!(one.summary_csv().unwrap(), two.summary_csv().unwrap());
}

#[test]
fn suite_propagates_hard_errors_with_location() {
    let dir = scratch("suite-err");
    fs::write(dir.join("a.toml"), CUBIC).unwrap();
    fs::write(dir.join("b.toml"), CUBIC.replace("f = \"2 + t^3\"", "f = \"2 + * t\"")).unwrap();
    let err = run_suite(&dir, None, &RunOptions::default()).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("b.toml"), "{text}");
    match err {
        ScenarioError::InFile { source, .. } => {
            assert!(matches!(*source, ScenarioError::Parse { line: 8, column: 10, .. }), "{source}")
        }
        other => panic!("unexpected {other}"),
    }
}

#[test]
fn empty_task_list_gives_empty_passing_report() {
    let text = "name = \"empty\"\n[model]\nfamily = \"de_sitter\"\n[fiber]\nsizes = [16]\nlengths = [\"2*pi\"]\n";
    let report = run_scenario(&Scenario::from_str(text).unwrap(), &RunOptions::default()).unwrap();
    assert!(report.passed && report.tasks.is_empty() && report.assertions.is_empty());
    assert_eq!(report.table_rows().len(), 0);
}

#[test]
fn bundled_scenarios_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let files = maxslice::experiment::scenario_files(&dir).unwrap();
    assert!(files.len() >= 6);
    for f in files {
        let sc = Scenario::load(&f).unwrap();
        sc.validate().unwrap();
        assert!(!sc.tasks.is_empty(), "{}", f.display());
    }
}

fn status() -> impl Strategy<Value = Option<SolveStatus>> {
    prop_oneof![
        Just(None),
        Just(Some(SolveStatus::Converged)),
        Just(Some(SolveStatus::NoSolutionDetected)),
        Just(Some(SolveStatus::MaxIters)),
        Just(Some(SolveStatus::LostSpacelike)),
    ]
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![any::<f64>().prop_filter("finite", |v| v.is_finite()), -1e3..1e3f64]
}

proptest! {
    #[test]
    fn run_rows_round_trip_exactly(
        seed in any::<u64>(),
        status in status(),
        iterations in 0usize..100_000,
        values in proptest::collection::vec(finite(), 7),
        t0 in proptest::option::of(finite()),
        first_variation in proptest::option::of(finite()),
    ) {
        let row = RunRow {
            seed,
            method: if seed % 2 == 0 { Method::Newton } else { Method::Flow },
            status,
            iterations,
            final_residual: values[0],
            verified_residual: values[1],
            slice_deviation: values[2],
            classification: t0.map_or(Classification::NonSlice, |t0| Classification::Slice { t0 }),
            drift_start: values[3],
            drift_end: values[4],
            monotone_drift: values[5] > 0.0,
            min_margin: values[6],
            first_variation,
            error: status.is_none().then(|| "aborted".to_string()),
        };
        let back: RunRow = serde_json::from_str(&serde_json::to_string(&row).unwrap()).unwrap();
        prop_assert_eq!(back, row);
    }
}
