//! Report types and their on-disk forms: `report.json` and `table.csv`.
//!
//! `table.csv` has one row per solver initialization and the fixed columns
//! `scenario,seed,status,final_residual,slice_deviation,t0,iterations`.
//! Floats are printed with 17 significant digits; `t0` is empty for
//! graphs that are not slices.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::maximal_solver::{Classification, Method, SolveStatus, SolverParams};
use crate::spacetime_models::MonotonicityVerdict;

pub const SCHEMA_VERSION: u32 = 1;
pub const TABLE_COLUMNS: [&str; 7] =
    ["scenario", "seed", "status", "final_residual", "slice_deviation", "t0", "iterations"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tags: Vec<String>,
    pub family: String,
    pub dim: usize,
    pub grid_sizes: Vec<usize>,
    pub lengths: Vec<f64>,
    pub tolerances: SolverParams,
    /// Sign convention of the mean curvature (+1: H = -(1/n) tr A).
    pub convention_sign: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub method: Method,
    /// `None` when the solver aborted; see `error`.
    pub status: Option<SolveStatus>,
    pub iterations: usize,
    pub final_residual: f64,
    pub verified_residual: f64,
    pub slice_deviation: f64,
    pub classification: Classification,
    pub drift_start: f64,
    pub drift_end: f64,
    /// Mean(u) moved monotonically over the whole run.
    pub monotone_drift: bool,
    pub min_margin: f64,
    /// Largest |dV/ds| / V over random normal variations, when requested.
    pub first_variation: Option<f64>,
    /// Error message when the solver aborted.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskReport {
    Classify {
        verdict: MonotonicityVerdict,
    },
    Solve {
        prescribed: bool,
        sizes: Vec<usize>,
        runs: Vec<RunRow>,
        flow_runs: Vec<RunRow>,
    },
    IdentityChecks {
        gradient: f64,
        divergence: f64,
        normal: f64,
        conformal: f64,
        laplacian: f64,
    },
    RefinementStudy {
        quantity: String,
        sizes: Vec<usize>,
        errors: Vec<f64>,
        /// `None` where both errors sit below the floor.
        orders: Vec<Option<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub task: String,
    pub check: String,
    pub expected: String,
    pub actual: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub scenario: String,
    pub provenance: Provenance,
    pub tasks: Vec<TaskReport>,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
    pub wall_time_s: f64,
}

impl RunReport {
    pub fn failures(&self) -> impl Iterator<Item = &Assertion> {
        self.assertions.iter().filter(|a| !a.passed)
    }

    /// One table row per primary-solver initialization.
    pub fn table_rows(&self) -> Vec<[String; 7]> {
        let mut rows = Vec::new();
        for task in &self.tasks {
            if let TaskReport::Solve { runs, .. } = task {
                for r in runs {
                    let t0 = match r.classification {
                        Classification::Slice { t0 } => format!("{t0:.16e}"),
                        Classification::NonSlice => String::new(),
                    };
                    rows.push([
                        self.scenario.clone(),
                        r.seed.to_string(),
                        r.status.map_or("error", |s| s.name()).to_string(),
                        format!("{:.16e}", r.final_residual),
                        format!("{:.16e}", r.slice_deviation),
                        t0,
                        r.iterations.to_string(),
                    ]);
                }
            }
        }
        rows
    }

    pub fn table_csv(&self) -> Result<Vec<u8>, ScenarioError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| ScenarioError::Io { path: "table.csv".into(), message: e.to_string() };
        w.write_record(TABLE_COLUMNS).map_err(io)?;
        for row in self.table_rows() {
            w.write_record(&row).map_err(io)?;
        }
        w.into_inner().map_err(|e| ScenarioError::Io { path: "table.csv".into(), message: e.to_string() })
    }

    /// Writes `report.json` and `table.csv` into `dir`, each atomically.
    pub fn write(&self, dir: &Path) -> Result<(), ScenarioError> {
        let json = serde_json::to_vec_pretty(self)
            .map_err(|e| ScenarioError::Io { path: "report.json".into(), message: e.to_string() })?;
        write_atomic(&dir.join("report.json"), &json)?;
        write_atomic(&dir.join("table.csv"), &self.table_csv()?)
    }
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ScenarioError> {
    let io = |e: std::io::Error| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}
