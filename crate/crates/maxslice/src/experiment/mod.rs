//! Declarative scenario runner: builds a model from a scenario file, runs its
//! tasks and checks the expectations recorded alongside them.

pub mod report;
pub mod scenario;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fiber_calculus::{max_abs, mean, FiberGrid, ScalarField};
use crate::hypersurface_geometry::{GeometryError, SpacelikeGraph, VariationField, CONVENTION_SIGN};
use crate::maximal_solver::{
    flow_relax, solve_maximal, solve_prescribed, trig_noise, Classification, Method, SolveStatus, SolverError,
    SolverParams, SolverReport,
};
use crate::spacetime_models::{Family, ModelError, SpacetimeModel, Var};
use report::{Assertion, Provenance, RunReport, RunRow, TaskReport, SCHEMA_VERSION};
use scenario::{
    ClassKind, ClassifyTask, IdentityTask, MethodChoice, Quantity, RefinementTask, Scenario, SolveTask, TaskSpec,
};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{file}: {source}")]
    InFile {
        file: String,
        #[source]
        source: Box<ScenarioError>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// Command-line level overrides.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    /// Replaces every grid except those of refinement studies.
    pub grid_override: Option<Vec<usize>>,
}

const XY: [Var; 2] = [Var::X, Var::Y];

struct Ctx<'a> {
    sc: &'a Scenario,
    opts: &'a RunOptions,
    assertions: Vec<Assertion>,
}

impl Ctx<'_> {
    fn check(&mut self, task: &str, check: &str, expected: String, actual: String, passed: bool) {
        self.assertions.push(Assertion { task: task.into(), check: check.into(), expected, actual, passed });
    }

    fn seed(&self) -> u64 {
        self.opts.seed.unwrap_or(self.sc.seed)
    }

    fn sizes<'s>(&'s self, task_sizes: Option<&'s Vec<usize>>) -> Vec<usize> {
        match (&self.opts.grid_override, task_sizes) {
            (Some(o), _) => o[..self.sc.dim().min(o.len())].to_vec(),
            (None, Some(s)) => s.clone(),
            (None, None) => self.sc.fiber.sizes.clone(),
        }
    }

    fn sample(&self, grid: &FiberGrid, src: &str) -> Result<ScalarField, ScenarioError> {
        let e = self.sc.expr(src, &XY)?;
        Ok(grid.sample(|x| e.eval(0.0, x[0], x[1])))
    }
}

/// Parses a `NxM` (or `N`) grid override.
pub fn parse_grid_override(s: &str) -> Result<Vec<usize>, ScenarioError> {
    s.split(['x', 'X'])
        .map(|p| p.trim().parse::<usize>().map_err(|_| ScenarioError::Invalid(format!("bad grid override {s:?}"))))
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| {
            if (1..=2).contains(&v.len()) {
                Ok(v)
            } else {
                Err(ScenarioError::Invalid(format!("bad grid override {s:?}")))
            }
        })
}

pub fn run_scenario(sc: &Scenario, opts: &RunOptions) -> Result<RunReport, ScenarioError> {
    let start = Instant::now();
    sc.validate()?;
    if let Some(o) = &opts.grid_override {
        if o.len() < sc.dim() {
            return Err(ScenarioError::Invalid(format!("grid override needs {} sizes", sc.dim())));
        }
    }
    let mut ctx = Ctx { sc, opts, assertions: Vec::new() };
    let built = sc.build(Some(&ctx.sizes(None)))?;
    let mut tasks = Vec::new();
    for (i, task) in sc.tasks.iter().enumerate() {
        let label = format!("{}#{}", task.kind(), i + 1);
        let report = match task {
            TaskSpec::Classify(t) => classify(&mut ctx, &label, t)?,
            TaskSpec::SolveMaximal(t) => solve(&mut ctx, &label, t, false)?,
            TaskSpec::SolvePrescribed(t) => solve(&mut ctx, &label, t, true)?,
            TaskSpec::IdentityChecks(t) => identities(&mut ctx, &label, t)?,
            TaskSpec::RefinementStudy(t) => refinement(&mut ctx, &label, t)?,
        };
        tasks.push(report);
    }
    let passed = ctx.assertions.iter().all(|a| a.passed);
    Ok(RunReport {
        schema_version: SCHEMA_VERSION,
        scenario: sc.name.clone(),
        provenance: Provenance {
            tags: sc.tags.clone(),
            family: built.model.family().tag().to_string(),
            dim: sc.dim(),
            grid_sizes: built.grid.sizes().to_vec(),
            lengths: built.lengths.clone(),
            tolerances: sc.solver.clone(),
            convention_sign: CONVENTION_SIGN,
            seed: ctx.seed(),
        },
        tasks,
        assertions: ctx.assertions,
        passed,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Loads, runs and (when `out` is given) writes `out/<name>/{report.json,table.csv}`.
pub fn run_scenario_file(path: &Path, out: Option<&Path>, opts: &RunOptions) -> Result<RunReport, ScenarioError> {
    let wrap = |e: ScenarioError| ScenarioError::InFile { file: path.display().to_string(), source: Box::new(e) };
    let sc = Scenario::load(path).map_err(wrap)?;
    let report = run_scenario(&sc, opts).map_err(wrap)?;
    if let Some(dir) = out {
        report.write(&dir.join(&sc.name)).map_err(wrap)?;
    }
    Ok(report)
}

/// Scenario files (`*.toml`) in a directory, sorted by path.
pub fn scenario_files(dir: &Path) -> Result<Vec<PathBuf>, ScenarioError> {
    let io = |e: std::io::Error| ScenarioError::Io { path: dir.display().to_string(), message: e.to_string() };
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub scenario: String,
    pub file: String,
    pub passed: bool,
    pub assertions: usize,
    pub failed: Vec<Assertion>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub entries: Vec<SuiteEntry>,
    pub passed: bool,
}

impl SuiteReport {
    pub fn summary_csv(&self) -> Result<Vec<u8>, ScenarioError> {
        let err = |e: String| ScenarioError::Io { path: "summary.csv".into(), message: e };
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["scenario", "file", "passed", "assertions", "failed"]).map_err(|e| err(e.to_string()))?;
        for e in &self.entries {
            w.write_record([
                e.scenario.clone(),
                e.file.clone(),
                e.passed.to_string(),
                e.assertions.to_string(),
                e.failed.len().to_string(),
            ])
            .map_err(|e| err(e.to_string()))?;
        }
        w.into_inner().map_err(|e| err(e.to_string()))
    }
}

/// Runs every scenario of `dir`. Scenarios run concurrently; the first hard
/// error in path order is returned after all of them finished, and failing
/// assertions never stop the others.
pub fn run_suite(dir: &Path, out: Option<&Path>, opts: &RunOptions) -> Result<SuiteReport, ScenarioError> {
    let files = scenario_files(dir)?;
    let results: Vec<Result<RunReport, ScenarioError>> =
        files.par_iter().map(|f| run_scenario_file(f, out, opts)).collect();
    let mut entries = Vec::with_capacity(files.len());
    for (file, res) in files.iter().zip(results) {
        let r = res?;
        entries.push(SuiteEntry {
            scenario: r.scenario.clone(),
            file: file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            passed: r.passed,
            assertions: r.assertions.len(),
            failed: r.failures().cloned().collect(),
            wall_time_s: r.wall_time_s,
        });
    }
    let suite = SuiteReport { schema_version: SCHEMA_VERSION, passed: entries.iter().all(|e| e.passed), entries };
    if let Some(dir) = out {
        let json = serde_json::to_vec_pretty(&suite)
            .map_err(|e| ScenarioError::Io { path: "summary.json".into(), message: e.to_string() })?;
        report::write_atomic(&dir.join("summary.json"), &json)?;
        report::write_atomic(&dir.join("summary.csv"), &suite.summary_csv()?)?;
    }
    Ok(suite)
}

fn classify(ctx: &mut Ctx<'_>, label: &str, t: &ClassifyTask) -> Result<TaskReport, ScenarioError> {
    let built = ctx.sc.build(Some(&ctx.sizes(None)))?;
    let verdict = built.model.classify_monotonicity((t.t_range[0], t.t_range[1]), &built.grid, t.tol, t.samples)?;
    if let Some(want) = &t.expect.verdict {
        let got = verdict.kind.name();
        ctx.check(label, "verdict", want.clone(), got.to_string(), got == want);
    }
    if let Some(level) = t.expect.level {
        let got = verdict.kind.level();
        let ok = got.is_some_and(|l| (l - level).abs() <= t.expect.level_tol);
        ctx.check(label, "level", format!("{level} ± {:e}", t.expect.level_tol), format!("{got:?}"), ok);
    }
    Ok(TaskReport::Classify { verdict })
}

fn monotone(drift: &[f64]) -> bool {
    drift.len() >= 2
        && (drift.windows(2).all(|w| w[1] > w[0]) || drift.windows(2).all(|w| w[1] < w[0]))
}

fn row_from_report(
    seed: u64,
    graph: &SpacelikeGraph<'_>,
    rep: &SolverReport,
    variations: Option<(usize, u64)>,
) -> Result<RunRow, ScenarioError> {
    let first_variation = match variations {
        Some((count, base)) if rep.status == SolveStatus::Converged => {
            let vol = graph.volume()?;
            let mut worst = 0.0f64;
            for j in 0..count as u64 {
                let noise = trig_noise(graph.grid(), base.wrapping_mul(7919).wrapping_add(j), 3);
                let phi: Vec<f64> = noise.iter().map(|v| 1.0 + 0.5 * v).collect();
                let xi = VariationField::normal(graph, &phi);
                worst = worst.max(graph.first_variation(&xi)?.abs() / vol);
            }
            Some(worst)
        }
        _ => None,
    };
    Ok(RunRow {
        seed,
        method: rep.method,
        status: Some(rep.status),
        iterations: rep.iterations,
        final_residual: rep.final_residual,
        verified_residual: rep.verified_residual,
        slice_deviation: rep.slice_deviation,
        classification: rep.classification,
        drift_start: rep.drift.first().copied().unwrap_or(0.0),
        drift_end: rep.drift.last().copied().unwrap_or(0.0),
        monotone_drift: monotone(&rep.drift),
        min_margin: graph.min_margin(),
        first_variation,
        error: None,
    })
}

/// Row for a run the solver aborted: numbers describe the starting graph.
fn row_from_error(seed: u64, method: Method, graph: &SpacelikeGraph<'_>, err: &SolverError) -> RunRow {
    let h = graph.mean_curvature().map(|h| max_abs(&h)).unwrap_or(f64::MAX);
    let (classification, slice_deviation) = crate::maximal_solver::classify_graph(graph.u(), 1e-6);
    let iterations = match err {
        SolverError::Stalled { iterations, .. } => *iterations,
        SolverError::SingularSystem { iteration, .. } => *iteration,
        _ => 0,
    };
    let m = mean(graph.u());
    RunRow {
        seed,
        method,
        status: None,
        iterations,
        final_residual: h,
        verified_residual: h,
        slice_deviation,
        classification,
        drift_start: m,
        drift_end: m,
        monotone_drift: false,
        min_margin: graph.min_margin(),
        first_variation: None,
        error: Some(err.to_string()),
    }
}

fn solve(ctx: &mut Ctx<'_>, label: &str, t: &SolveTask, prescribed: bool) -> Result<TaskReport, ScenarioError> {
    let sizes = ctx.sizes(t.sizes.as_ref());
    let built = ctx.sc.build(Some(&sizes))?;
    let (model, grid) = (&built.model, &built.grid);
    let params: &SolverParams = &ctx.sc.solver;
    let alpha = match &t.alpha {
        Some(src) if prescribed => Some(ctx.sample(grid, src)?),
        _ => None,
    };
    let initial = t.initial.as_ref().map(|src| ctx.sample(grid, src)).transpose()?;
    let variations = t.expect.first_variation.map(|_| t.expect.variations);
    let seed0 = ctx.seed();
    let flow_limit = t.flow_inits.unwrap_or(t.inits);

    let run_one = |method: Method, seed: u64, u0: &[f64]| -> Result<RunRow, ScenarioError> {
        let start = SpacelikeGraph::new(model, grid, u0.to_vec())?;
        let out = match (method, &alpha) {
            (Method::Newton, Some(a)) => solve_prescribed(model, grid, a, u0, params),
            (Method::Newton, None) => solve_maximal(model, grid, u0, params),
            (Method::Flow, _) => flow_relax(model, grid, u0, params),
        };
        match out {
            Ok((graph, rep)) => {
                let v = if alpha.is_none() { variations.map(|c| (c, seed)) } else { None };
                row_from_report(seed, &graph, &rep, v)
            }
            Err(e @ (SolverError::Stalled { .. } | SolverError::SingularSystem { .. })) => {
                Ok(row_from_error(seed, method, &start, &e))
            }
            Err(e) => Err(e.into()),
        }
    };

    let mut runs = Vec::with_capacity(t.inits);
    let mut flow_runs = Vec::new();
    for i in 0..t.inits {
        let seed = seed0.wrapping_add(i as u64);
        let u0 = match &initial {
            Some(base) => {
                let noise = trig_noise(grid, seed, t.random.modes);
                base.iter().zip(&noise).map(|(b, n)| b + t.noise * n).collect()
            }
            None => t.random.sample(model, grid, seed)?,
        };
        let primary = if t.method == MethodChoice::Flow { Method::Flow } else { Method::Newton };
        runs.push(run_one(primary, seed, &u0)?);
        if t.method == MethodChoice::Both && i < flow_limit {
            flow_runs.push(run_one(Method::Flow, seed, &u0)?);
        }
    }

    let warp_derivative = match model.family() {
        Family::Grw { f } => Some(f.derivative(Var::T)),
        _ => None,
    };
    check_solve(ctx, label, t, &runs, &flow_runs, warp_derivative.as_ref().map(|d| move |t0: f64| d.eval(t0, 0.0, 0.0)));
    Ok(TaskReport::Solve { prescribed, sizes, runs, flow_runs })
}

fn class_name(c: &Classification) -> &'static str {
    match c {
        Classification::Slice { .. } => "slice",
        Classification::NonSlice => "non_slice",
    }
}

fn status_name(s: Option<SolveStatus>) -> &'static str {
    s.map_or("error", |s| s.name())
}

fn check_solve(
    ctx: &mut Ctx<'_>,
    label: &str,
    t: &SolveTask,
    runs: &[RunRow],
    flow_runs: &[RunRow],
    fprime: Option<impl Fn(f64) -> f64>,
) {
    let e = &t.expect;
    let n = runs.len();
    let converged: Vec<&RunRow> = runs.iter().filter(|r| r.status == Some(SolveStatus::Converged)).collect();
    if let Some(want) = e.status {
        let hits = runs.iter().filter(|r| r.status == Some(want)).count();
        let ok = hits as f64 >= e.min_fraction * n as f64;
        ctx.check(label, "status", format!("{} in ≥ {:.0}% of {n} runs", want.name(), 100.0 * e.min_fraction), format!("{hits}/{n}"), ok);
        if !e.otherwise.is_empty() {
            let stray: Vec<&str> = runs
                .iter()
                .filter(|r| r.status != Some(want) && !r.status.is_some_and(|s| e.otherwise.contains(&s)))
                .map(|r| status_name(r.status))
                .collect();
            let allowed: Vec<&str> = e.otherwise.iter().map(|s| s.name()).collect();
            ctx.check(label, "other statuses", format!("{allowed:?}"), format!("{stray:?} outside"), stray.is_empty());
        }
    }
    if let Some(kind) = e.classification {
        let want = match kind {
            ClassKind::Slice => "slice",
            ClassKind::NonSlice => "non_slice",
        };
        let bad = converged.iter().filter(|r| class_name(&r.classification) != want).count();
        ctx.check(label, "classification", format!("all converged {want}"), format!("{bad}/{} differ", converged.len()), bad == 0);
    }
    if let Some(t0) = e.t0 {
        let worst = converged
            .iter()
            .filter_map(|r| match r.classification {
                Classification::Slice { t0: got } => Some((got - t0).abs()),
                Classification::NonSlice => None,
            })
            .fold(0.0f64, f64::max);
        ctx.check(label, "t0", format!("{t0} ± {:e}", e.t0_tol), format!("max offset {worst:e}"), worst <= e.t0_tol);
    }
    if let Some(k) = e.min_nonslice {
        let got = converged.iter().filter(|r| r.classification == Classification::NonSlice).count();
        ctx.check(label, "converged non-slice results", format!("≥ {k}"), got.to_string(), got >= k);
    }
    if let Some(bound) = e.max_residual {
        let worst = converged.iter().map(|r| r.verified_residual).fold(0.0f64, f64::max);
        let ok = worst < bound && !converged.is_empty();
        ctx.check(label, "verified residual", format!("< {bound:e}"), format!("{worst:e} over {} converged", converged.len()), ok);
    }
    if let Some(bound) = e.max_slice_deviation {
        let worst = converged
            .iter()
            .filter(|r| matches!(r.classification, Classification::Slice { .. }))
            .map(|r| r.slice_deviation)
            .fold(0.0f64, f64::max);
        ctx.check(label, "slice deviation", format!("< {bound:e}"), format!("{worst:e}"), worst < bound);
    }
    if e.monotone_drift {
        let bad = runs.iter().filter(|r| r.status == Some(SolveStatus::MaxIters) && !r.monotone_drift).count();
        ctx.check(label, "monotone drift", "every max_iters run".into(), format!("{bad} without"), bad == 0);
    }
    if e.flow_agrees {
        let disagree: Vec<u64> = runs
            .iter()
            .zip(flow_runs)
            .filter(|(a, b)| a.status != b.status || class_name(&a.classification) != class_name(&b.classification))
            .map(|(a, _)| a.seed)
            .collect();
        ctx.check(
            label,
            "flow agreement",
            format!("same status and classification on {} runs", flow_runs.len()),
            format!("seeds {disagree:?} differ"),
            disagree.is_empty() && !flow_runs.is_empty(),
        );
    }
    if let Some(bound) = e.first_variation {
        let worst = converged.iter().filter_map(|r| r.first_variation).fold(0.0f64, f64::max);
        ctx.check(label, "first variation |dV/ds| / V", format!("< {bound:e}"), format!("{worst:e}"), worst < bound);
    }
    if let Some(bound) = e.max_warp_derivative {
        let worst = match &fprime {
            Some(fp) => converged
                .iter()
                .filter_map(|r| match r.classification {
                    Classification::Slice { t0 } => Some(fp(t0).abs()),
                    Classification::NonSlice => Some(f64::INFINITY),
                })
                .fold(0.0f64, f64::max),
            None => f64::INFINITY,
        };
        ctx.check(label, "|f'(u0)|", format!("< {bound:e}"), format!("{worst:e}"), worst < bound && !converged.is_empty());
    }
}

fn identities(ctx: &mut Ctx<'_>, label: &str, t: &IdentityTask) -> Result<TaskReport, ScenarioError> {
    let built = ctx.sc.build(Some(&ctx.sizes(None)))?;
    let grid = &built.grid;
    let graph = SpacelikeGraph::new(&built.model, grid, ctx.sample(grid, &t.graph)?)?;
    let seed0 = ctx.seed();

    let gradient = graph.gradient_relation()?.max_deviation;
    let normal = graph.normal_constraint_residual();

    let induced = graph.induced_metric();
    let mut divergence = 0.0f64;
    for s in 0..3u64 {
        let a = trig_noise(grid, seed0.wrapping_add(100 + s), 4);
        let b = trig_noise(grid, seed0.wrapping_add(200 + s), 4);
        let x: Vec<[f64; 2]> = a.iter().zip(&b).map(|(p, q)| [*p, if grid.dim() == 2 { *q } else { 0.0 }]).collect();
        let div = grid.divergence(&x, &induced).map_err(GeometryError::from)?;
        let total = grid.integrate(&div, &induced).map_err(GeometryError::from)?;
        let norms: Vec<f64> = x.iter().zip(&induced).map(|(v, g)| g.quad(*v, grid.dim()).sqrt()).collect();
        let scale = grid.integrate(&norms, &induced).map_err(GeometryError::from)?;
        divergence = divergence.max(total.abs() / scale.max(f64::MIN_POSITIVE));
    }

    let mut conformal = 0.0f64;
    for s in 0..t.alpha_seeds as u64 {
        let alpha: Vec<f64> =
            trig_noise(grid, seed0.wrapping_add(1000 + s), 3).iter().map(|v| t.alpha_amplitude * v).collect();
        let a = graph.conformal_mean_curvature(&alpha)?;
        let b = graph.conformal_mean_curvature_direct(&alpha)?;
        conformal = conformal.max(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max));
    }

    let direct = graph.laplacian_t_direct()?;
    let formula = graph.laplacian_t_formula(f64::INFINITY)?;
    let laplacian = (0..grid.len())
        .map(|k| (direct[k] - formula.values[k] - formula.curvature_term[k]).abs())
        .fold(0.0, f64::max);

    let e = &t.expect;
    for (name, value, bound) in [
        ("gradient relation", gradient, e.gradient),
        ("divergence theorem", divergence, e.divergence),
        ("unit normal constraints", normal, e.normal),
        ("conformal relation", conformal, e.conformal),
        ("general Laplacian identity", laplacian, e.laplacian),
    ] {
        if let Some(b) = bound {
            ctx.check(label, name, format!("< {b:e}"), format!("{value:e}"), value < b);
        }
    }
    Ok(TaskReport::IdentityChecks { gradient, divergence, normal, conformal, laplacian })
}

fn refinement_error(
    ctx: &Ctx<'_>,
    t: &RefinementTask,
    model: &SpacetimeModel,
    grid: &FiberGrid,
) -> Result<f64, ScenarioError> {
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let graph = || -> Result<SpacelikeGraph<'_>, ScenarioError> {
        let u = match (&t.graph, t.level) {
            (Some(src), _) => ctx.sample(grid, src)?,
            (None, Some(level)) => vec![level; grid.len()],
            (None, None) => return Err(ScenarioError::Invalid("refinement study needs a graph".into())),
        };
        Ok(SpacelikeGraph::new(model, grid, u)?)
    };
    Ok(match t.quantity {
        Quantity::SliceFormula => {
            let level = t.level.unwrap_or(0.0);
            let slice = model.slice_mean_curvature(level, grid)?;
            let g = SpacelikeGraph::new(model, grid, vec![level; grid.len()])?;
            diff(&slice, &g.mean_curvature()?)
        }
        Quantity::Routes => {
            let g = graph()?;
            diff(&g.mean_curvature()?, &g.mean_curvature_from_normal()?)
        }
        Quantity::GraphResidual => max_abs(&graph()?.mean_curvature()?),
        Quantity::LaplacianFormula => {
            let g = graph()?;
            diff(&g.laplacian_t_direct()?, &g.laplacian_t_formula(f64::INFINITY)?.values)
        }
        Quantity::Conformal => {
            let g = graph()?;
            let alpha = ctx.sample(grid, t.alpha.as_deref().unwrap_or("0"))?;
            diff(&g.conformal_mean_curvature(&alpha)?, &g.conformal_mean_curvature_direct(&alpha)?)
        }
    })
}

/// Observed orders `log2(e_i / e_{i+1})`, with errors clamped at `floor`;
/// `None` where both errors are below it.
pub fn observed_orders(errors: &[f64], floor: f64) -> Vec<Option<f64>> {
    errors
        .windows(2)
        .map(|w| {
            if w[0] < floor && w[1] < floor {
                None
            } else {
                Some((w[0].max(floor) / w[1].max(floor)).log2())
            }
        })
        .collect()
}

fn refinement(ctx: &mut Ctx<'_>, label: &str, t: &RefinementTask) -> Result<TaskReport, ScenarioError> {
    let dim = ctx.sc.dim();
    let mut errors = Vec::with_capacity(t.sizes.len());
    for &n in &t.sizes {
        let built = ctx.sc.build(Some(&vec![n; dim]))?;
        errors.push(refinement_error(ctx, t, &built.model, &built.grid)?);
    }
    let orders = observed_orders(&errors, t.floor);
    if let Some(p) = t.expect.min_order {
        let worst = orders.iter().flatten().fold(f64::INFINITY, |m, o| m.min(*o));
        let ok = orders.iter().flatten().all(|o| *o >= p);
        let actual = if worst.is_finite() { format!("{worst:.3}") } else { "all below floor".into() };
        ctx.check(label, "observed order", format!("≥ {p}"), actual, ok);
    }
    if let Some(b) = t.expect.max_final {
        let last = errors.last().copied().unwrap_or(f64::INFINITY);
        ctx.check(label, "finest-grid error", format!("< {b:e}"), format!("{last:e}"), last < b);
    }
    let quantity = serde_json::to_value(t.quantity)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default();
    Ok(TaskReport::RefinementStudy { quantity, sizes: t.sizes.clone(), errors, orders })
}
