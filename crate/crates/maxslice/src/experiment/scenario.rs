//! Scenario files: TOML with a `[model]`, a `[fiber]`, optional `[solver]`
//! overrides and a `[[tasks]]` list.
//!
//! ```toml
//! name = "grw_cubic"
//! seed = 7
//!
//! [model]
//! family = "grw"
//! f = "2 + t^3"
//! interval = [-1.2, 2.0]
//!
//! [fiber]
//! sizes = [64]
//! lengths = ["2*pi"]
//!
//! [[tasks]]
//! kind = "solve_maximal"
//! inits = 10
//! expect = { status = "converged", classification = "slice", t0 = 0.0 }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::fiber_calculus::FiberGrid;
use crate::maximal_solver::{RandomInit, SolveStatus, SolverParams};
use crate::spacetime_models::{BaseMetric, Expr, SpacetimeModel, Var};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Free-form labels copied into the report provenance.
    #[serde(default)]
    pub tags: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSpec,
    pub fiber: FiberSpec,
    #[serde(default)]
    pub solver: SolverParams,
    #[serde(default)]
    pub tasks: Vec<TaskSpec>,
    /// Raw file text, kept to locate expression errors.
    #[serde(skip)]
    source: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyName {
    Grw,
    MultiplyWarped,
    Twisted,
    StandardStatic,
    LorentzianProduct,
    DeSitter,
    Custom,
}

fn whole_line() -> [f64; 2] {
    [f64::NEG_INFINITY, f64::INFINITY]
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub family: FamilyName,
    /// GRW warping function of t.
    pub f: Option<String>,
    /// Multiply warped: one warping function per block.
    #[serde(default)]
    pub warps: Vec<String>,
    /// Multiply warped: block index of each fiber axis.
    #[serde(default)]
    pub blocks: Vec<usize>,
    /// Twisted conformal factor in t, x, y.
    pub lambda: Option<String>,
    /// Static lapse in x, y.
    pub h: Option<String>,
    /// Custom lapse squared and metric components (xx, xy, yy) in t, x, y.
    pub beta: Option<String>,
    pub metric: Option<Vec<String>>,
    #[serde(default = "whole_line")]
    pub interval: [f64; 2],
}

/// A length given as a number or a constant expression such as `"2*pi"`.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum Length {
    Number(f64),
    Expr(String),
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiberSpec {
    pub sizes: Vec<usize>,
    pub lengths: Vec<Length>,
    /// Base metric components (xx, xy, yy) in x, y; flat when absent.
    pub metric: Option<Vec<String>>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSpec {
    Classify(ClassifyTask),
    SolveMaximal(SolveTask),
    SolvePrescribed(SolveTask),
    IdentityChecks(IdentityTask),
    RefinementStudy(RefinementTask),
}

impl TaskSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            TaskSpec::Classify(_) => "classify",
            TaskSpec::SolveMaximal(_) => "solve_maximal",
            TaskSpec::SolvePrescribed(_) => "solve_prescribed",
            TaskSpec::IdentityChecks(_) => "identity_checks",
            TaskSpec::RefinementStudy(_) => "refinement_study",
        }
    }
}

fn default_samples() -> usize {
    401
}

fn default_classify_tol() -> f64 {
    1e-12
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyTask {
    pub t_range: [f64; 2],
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_classify_tol")]
    pub tol: f64,
    #[serde(default)]
    pub expect: ClassifyExpect,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyExpect {
    /// One of the verdict names, e.g. `"transition"`.
    pub verdict: Option<String>,
    pub level: Option<f64>,
    #[serde(default = "default_level_tol")]
    pub level_tol: f64,
}

fn default_level_tol() -> f64 {
    1e-8
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodChoice {
    #[default]
    Newton,
    Flow,
    /// Newton, then the relaxation flow from the same start for comparison.
    Both,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveTask {
    #[serde(default)]
    pub method: MethodChoice,
    #[serde(default = "one")]
    pub inits: usize,
    /// Random starts; ignored when `initial` is given.
    #[serde(default)]
    pub random: RandomInit,
    /// Explicit initial graph in x, y.
    pub initial: Option<String>,
    /// Sup norm of seeded noise added to `initial`.
    #[serde(default)]
    pub noise: f64,
    /// Conformal exponent in x, y for `solve_prescribed`.
    pub alpha: Option<String>,
    /// Grid for this task only, overriding `[fiber].sizes`.
    pub sizes: Option<Vec<usize>>,
    /// Flow runs at most this many initializations (all when absent).
    pub flow_inits: Option<usize>,
    #[serde(default)]
    pub expect: SolveExpect,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassKind {
    Slice,
    NonSlice,
}

fn one_f() -> f64 {
    1.0
}

fn default_t0_tol() -> f64 {
    1e-6
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveExpect {
    pub status: Option<SolveStatus>,
    /// Fraction of runs that must end with `status`.
    #[serde(default = "one_f")]
    pub min_fraction: f64,
    /// Statuses allowed for the remaining runs.
    #[serde(default)]
    pub otherwise: Vec<SolveStatus>,
    /// Classification every converged run must have.
    pub classification: Option<ClassKind>,
    pub t0: Option<f64>,
    #[serde(default = "default_t0_tol")]
    pub t0_tol: f64,
    pub min_nonslice: Option<usize>,
    /// Bound on the re-verified residual of converged runs.
    pub max_residual: Option<f64>,
    pub max_slice_deviation: Option<f64>,
    /// Runs that hit the iteration limit must show monotone drift of mean(u).
    #[serde(default)]
    pub monotone_drift: bool,
    /// Flow and Newton classifications must match (method = "both").
    #[serde(default)]
    pub flow_agrees: bool,
    /// Bound on |dV/ds| / V for random normal variations of converged graphs.
    pub first_variation: Option<f64>,
    #[serde(default = "five")]
    pub variations: usize,
    /// Bound on |f'(u0)| for prescribed solutions on a GRW base.
    pub max_warp_derivative: Option<f64>,
}

fn five() -> usize {
    5
}

impl Default for SolveExpect {
    fn default() -> Self {
        SolveExpect {
            status: None,
            min_fraction: 1.0,
            otherwise: Vec::new(),
            classification: None,
            t0: None,
            t0_tol: default_t0_tol(),
            min_nonslice: None,
            max_residual: None,
            max_slice_deviation: None,
            monotone_drift: false,
            flow_agrees: false,
            first_variation: None,
            variations: five(),
            max_warp_derivative: None,
        }
    }
}

fn twenty() -> usize {
    20
}

fn default_alpha_amplitude() -> f64 {
    0.3
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityTask {
    /// Graph in x, y on which the identities are evaluated.
    pub graph: String,
    #[serde(default = "twenty")]
    pub alpha_seeds: usize,
    #[serde(default = "default_alpha_amplitude")]
    pub alpha_amplitude: f64,
    #[serde(default)]
    pub expect: IdentityExpect,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityExpect {
    pub gradient: Option<f64>,
    pub divergence: Option<f64>,
    pub normal: Option<f64>,
    pub conformal: Option<f64>,
    pub laplacian: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// Level graph `u = level`: slice formula against the graph route.
    SliceFormula,
    /// Compact residual route against the literal Weingarten route.
    Routes,
    /// max |H| of an analytic graph that is maximal in the continuum.
    GraphResidual,
    /// Closed-form Laplacian of t against the direct one on an analytic maximal graph.
    LaplacianFormula,
    /// Conformal mean curvature relation against the direct rescaled computation.
    Conformal,
}

fn default_floor() -> f64 {
    1e-12
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementTask {
    pub quantity: Quantity,
    /// Points per axis; powers of two.
    pub sizes: Vec<usize>,
    pub graph: Option<String>,
    pub level: Option<f64>,
    pub alpha: Option<String>,
    /// Errors below this are treated as exact agreement.
    #[serde(default = "default_floor")]
    pub floor: f64,
    #[serde(default)]
    pub expect: RefinementExpect,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefinementExpect {
    pub min_order: Option<f64>,
    pub max_final: Option<f64>,
}

/// Fully built objects for a scenario.
pub struct Built {
    pub model: SpacetimeModel,
    pub grid: FiberGrid,
    pub lengths: Vec<f64>,
    pub base: BaseMetric,
}

impl Scenario {
    pub fn from_str(text: &str) -> Result<Self, ScenarioError> {
        let mut sc: Scenario = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
            ScenarioError::Parse { line, column, message: e.message().to_string() }
        })?;
        sc.source = text.to_string();
        Ok(sc)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_str(&text)
    }

    /// Parses an expression, reporting errors at their position in the file.
    pub fn expr(&self, src: &str, vars: &[Var]) -> Result<Expr, ScenarioError> {
        Expr::parse(src, vars).map_err(|e| {
            let (line, column) = match self.source.find(&format!("\"{src}\"")) {
                Some(off) => line_col(&self.source, off + e.column),
                None => (0, e.column),
            };
            ScenarioError::Parse { line, column, message: format!("in expression \"{src}\": {}", e.message) }
        })
    }

    pub fn constant(&self, src: &str) -> Result<f64, ScenarioError> {
        Ok(self.expr(src, &[])?.eval(0.0, 0.0, 0.0))
    }

    fn lengths(&self) -> Result<Vec<f64>, ScenarioError> {
        self.fiber
            .lengths
            .iter()
            .map(|l| match l {
                Length::Number(v) => Ok(*v),
                Length::Expr(s) => self.constant(s),
            })
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.fiber.sizes.len()
    }

    fn three(&self, comps: &[String], vars: &[Var], what: &str) -> Result<[Expr; 3], ScenarioError> {
        let dim = self.dim();
        let want = if dim == 1 { 1 } else { 3 };
        if comps.len() != want {
            return Err(ScenarioError::Invalid(format!(
                "{what} needs {want} component(s) (xx{}) for a {dim}-dimensional fiber",
                if dim == 2 { ", xy, yy" } else { "" }
            )));
        }
        let mut out = [Expr::constant(1.0), Expr::constant(0.0), Expr::constant(1.0)];
        for (slot, src) in out.iter_mut().zip(comps) {
            *slot = self.expr(src, vars)?;
        }
        Ok(out)
    }

    fn required<'a>(&self, field: &'a Option<String>, name: &str) -> Result<&'a str, ScenarioError> {
        field.as_deref().ok_or_else(|| {
            ScenarioError::Invalid(format!("family {:?} needs model.{name}", self.model.family))
        })
    }

    /// Builds the model and the grid, with `sizes` replacing the fiber sizes.
    pub fn build(&self, sizes: Option<&[usize]>) -> Result<Built, ScenarioError> {
        let xy = [Var::X, Var::Y];
        let txy = [Var::T, Var::X, Var::Y];
        let dim = self.dim();
        let lengths = self.lengths()?;
        let grid = FiberGrid::new(sizes.unwrap_or(&self.fiber.sizes), &lengths)
            .map_err(|e| ScenarioError::Invalid(format!("fiber: {e}")))?;
        let base = match &self.fiber.metric {
            Some(c) => BaseMetric::new(dim, self.three(c, &xy, "fiber.metric")?)?,
            None => BaseMetric::flat(dim),
        };
        let m = &self.model;
        let interval = (m.interval[0], m.interval[1]);
        let model = match m.family {
            FamilyName::Grw => SpacetimeModel::grw(self.expr(self.required(&m.f, "f")?, &[Var::T])?, base.clone(), interval)?,
            FamilyName::MultiplyWarped => {
                let warps = m.warps.iter().map(|w| self.expr(w, &[Var::T])).collect::<Result<_, _>>()?;
                SpacetimeModel::multiply_warped(warps, m.blocks.clone(), base.clone(), interval)?
            }
            FamilyName::Twisted => {
                SpacetimeModel::twisted(self.expr(self.required(&m.lambda, "lambda")?, &txy)?, base.clone(), interval)?
            }
            FamilyName::StandardStatic => {
                SpacetimeModel::standard_static(self.expr(self.required(&m.h, "h")?, &xy)?, base.clone(), interval)?
            }
            FamilyName::LorentzianProduct => SpacetimeModel::lorentzian_product(base.clone(), interval)?,
            FamilyName::DeSitter => SpacetimeModel::de_sitter(base.clone()),
            FamilyName::Custom => {
                let beta = self.expr(self.required(&m.beta, "beta")?, &txy)?;
                let comps = m
                    .metric
                    .as_ref()
                    .ok_or_else(|| ScenarioError::Invalid("family custom needs model.metric".into()))?;
                SpacetimeModel::custom(dim, beta, self.three(comps, &txy, "model.metric")?, interval)?
            }
        };
        Ok(Built { model, grid, lengths, base })
    }

    /// Checks everything that can be checked without running a task.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.solver.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        self.build(None)?;
        let xy = [Var::X, Var::Y];
        for (i, task) in self.tasks.iter().enumerate() {
            let ctx = |msg: String| ScenarioError::Invalid(format!("task {} ({}): {msg}", i + 1, task.kind()));
            match task {
                TaskSpec::Classify(c) => {
                    if !(c.t_range[0] < c.t_range[1]) {
                        return Err(ctx("t_range must be increasing".into()));
                    }
                }
                TaskSpec::SolveMaximal(s) | TaskSpec::SolvePrescribed(s) => {
                    if let Some(src) = &s.initial {
                        self.expr(src, &xy)?;
                    }
                    if let Some(src) = &s.alpha {
                        self.expr(src, &xy)?;
                    }
                    if matches!(task, TaskSpec::SolvePrescribed(_)) && s.alpha.is_none() {
                        return Err(ctx("alpha is required".into()));
                    }
                    if s.expect.flow_agrees && s.method != MethodChoice::Both {
                        return Err(ctx("flow_agrees needs method = \"both\"".into()));
                    }
                    if let Some(sz) = &s.sizes {
                        self.build(Some(sz))?;
                    }
                }
                TaskSpec::IdentityChecks(t) => {
                    self.expr(&t.graph, &xy)?;
                }
                TaskSpec::RefinementStudy(r) => {
                    if r.sizes.len() < 2 || r.sizes.iter().any(|n| !n.is_power_of_two() || *n < 8) {
                        return Err(ctx("refinement sizes must be ≥ 2 powers of two, each ≥ 8".into()));
                    }
                    for src in [&r.graph, &r.alpha].into_iter().flatten() {
                        self.expr(src, &xy)?;
                    }
                    let needs_graph = !matches!(r.quantity, Quantity::SliceFormula);
                    if needs_graph && r.graph.is_none() {
                        return Err(ctx(format!("quantity {:?} needs a graph", r.quantity)));
                    }
                    if r.quantity == Quantity::SliceFormula && r.level.is_none() {
                        return Err(ctx("slice_formula needs a level".into()));
                    }
                    if r.quantity == Quantity::Conformal && r.alpha.is_none() {
                        return Err(ctx("conformal needs alpha".into()));
                    }
                }
            }
        }
        Ok(())
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}
