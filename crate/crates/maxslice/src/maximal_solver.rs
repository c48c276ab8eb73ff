//! Solvers for `H(u) = 0` and for the prescribed conformal mean curvature
//! problem on a GRW base.
//!
//! The Newton-type solver uses pseudo-transient continuation: each step solves
//! `(mu I - J) delta = r` with `mu = kappa |r|_inf`, which is plain Newton as
//! the residual vanishes and a relaxation step far from a solution. Trial
//! steps are backtracked until the graph stays spacelike with enough margin
//! and `|r|^2 / 2` satisfies an Armijo decrease. When backtracking fails the
//! solver takes one explicit relaxation step instead.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fiber_calculus::{max_abs, mean, FiberGrid, ScalarField, Sym};
use crate::hypersurface_geometry::{
    jet_at, local_data, mean_curvature_at, GeometryError, Jet, LocalData, NormalData, SpacelikeGraph,
};
use crate::spacetime_models::{Expr, Family, SpacetimeModel};

const PAR_THRESHOLD: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("initial graph rejected: {0}")]
    InvalidInitial(GeometryError),
    #[error("linear system singular at iteration {iteration} even with damping {damping:e}")]
    SingularSystem { iteration: usize, damping: f64 },
    #[error("relaxation stalled after {iterations} steps at residual {residual:e}")]
    Stalled { iterations: usize, residual: f64 },
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("prescribed curvature needs a GRW base model, got {0}")]
    NotGrw(&'static str),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianMode {
    /// Partial derivatives of the pointwise residual with respect to the
    /// node value, gradient and Hessian, assembled through the stencils.
    Jet,
    /// Central differences of the full residual with distance-2 coloring.
    Colored,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub tol_residual: f64,
    pub tol_step: f64,
    pub max_iters: usize,
    pub max_flow_iters: usize,
    /// First trial step length.
    pub damping: f64,
    pub backtrack: f64,
    pub min_damping: f64,
    pub armijo: f64,
    /// Fraction of the initial spacelike margin that every iterate must keep.
    pub margin_floor: f64,
    pub jacobian: JacobianMode,
    /// Relative finite-difference step.
    pub fd_perturbation: f64,
    /// `kappa` in `mu = kappa |r|_inf`; 0 gives undamped Newton.
    pub continuation: f64,
    /// Cap on `|delta u|_inf` for a Newton step.
    pub max_step: f64,
    pub flow_cfl: f64,
    /// Cap on `|delta u|_inf` for one relaxation step.
    pub flow_max_step: f64,
    pub drift_window: usize,
    pub drift_min_decrease: f64,
    pub slice_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            tol_residual: 1e-9,
            tol_step: 1e-10,
            max_iters: 200,
            max_flow_iters: 20000,
            damping: 1.0,
            backtrack: 0.5,
            min_damping: 1.0 / 8192.0,
            armijo: 1e-4,
            margin_floor: 0.1,
            jacobian: JacobianMode::Jet,
            fd_perturbation: 1e-6,
            continuation: 1.0,
            max_step: 1.0,
            flow_cfl: 0.8,
            flow_max_step: 0.05,
            drift_window: 50,
            drift_min_decrease: 0.01,
            slice_tol: 1e-6,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = [
            ("tol_residual", self.tol_residual),
            ("tol_step", self.tol_step),
            ("min_damping", self.min_damping),
            ("armijo", self.armijo),
            ("fd_perturbation", self.fd_perturbation),
            ("max_step", self.max_step),
            ("flow_cfl", self.flow_cfl),
            ("flow_max_step", self.flow_max_step),
            ("drift_min_decrease", self.drift_min_decrease),
            ("slice_tol", self.slice_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SolverError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(SolverError::InvalidParams(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(SolverError::InvalidParams("backtrack must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.margin_floor) {
            return Err(SolverError::InvalidParams("margin_floor must lie in [0, 1)".into()));
        }
        if self.continuation < 0.0 || self.flow_cfl > 1.0 || self.drift_window < 2 {
            return Err(SolverError::InvalidParams(
                "continuation ≥ 0, flow_cfl ≤ 1 and drift_window ≥ 2 required".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    NoSolutionDetected,
    MaxIters,
    LostSpacelike,
}

impl SolveStatus {
    pub fn name(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::NoSolutionDetected => "no_solution_detected",
            SolveStatus::MaxIters => "max_iters",
            SolveStatus::LostSpacelike => "lost_spacelike",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    Slice { t0: f64 },
    NonSlice,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Newton,
    Flow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub method: Method,
    pub status: SolveStatus,
    pub iterations: usize,
    /// `|r|_inf` before every step and at the end.
    pub residual_history: Vec<f64>,
    /// Smallest induced-metric eigenvalue, same cadence.
    pub margin_history: Vec<f64>,
    /// mean(u), same cadence.
    pub drift: Vec<f64>,
    pub final_residual: f64,
    /// Residual recomputed from a fresh graph after the solve.
    pub verified_residual: f64,
    pub classification: Classification,
    /// sup |u - mean(u)|
    pub slice_deviation: f64,
    /// Newton iterations that fell back to a relaxation step.
    pub fallback_steps: usize,
}

impl SolverReport {
    pub fn mean_drift_direction(&self) -> f64 {
        match (self.drift.first(), self.drift.last()) {
            (Some(a), Some(b)) => (b - a).signum(),
            _ => 0.0,
        }
    }

    pub fn t0(&self) -> Option<f64> {
        match self.classification {
            Classification::Slice { t0 } => Some(t0),
            Classification::NonSlice => None,
        }
    }
}

/// Classifies a graph as a slice when `sup |u - mean(u)| < tol`.
pub fn classify_graph(u: &[f64], tol: f64) -> (Classification, f64) {
    let m = mean(u);
    let dev = u.iter().fold(0.0f64, |d, v| d.max((v - m).abs()));
    if dev < tol {
        (Classification::Slice { t0: m }, dev)
    } else {
        (Classification::NonSlice, dev)
    }
}

struct Prescribed {
    alpha: Vec<f64>,
    dalpha: Vec<[f64; 2]>,
    base_inv: Vec<Sym>,
    f: Expr,
}

enum Problem {
    Maximal,
    Prescribed(Prescribed),
}

/// Nodewise residual `r_k(u_k, du_k, d2u_k)` plus the data to evaluate it.
struct System<'a> {
    model: &'a SpacetimeModel,
    grid: FiberGrid,
    problem: Problem,
}

struct Evaluation {
    r: Vec<f64>,
    jets: Vec<Jet>,
    local: Vec<LocalData>,
    margin: f64,
}

fn map_nodes<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

impl<'a> System<'a> {
    fn node_residual(&self, k: usize, ld: &LocalData, jet: &Jet) -> f64 {
        let dim = self.grid.dim();
        let h = mean_curvature_at(dim, ld, jet);
        match &self.problem {
            Problem::Maximal => h,
            Problem::Prescribed(p) => {
                let nd = NormalData::new(dim, ld, jet.grad);
                let da = p.dalpha[k];
                let w = (-p.alpha[k]).exp();
                let conformal = w * (h + nd.v[0] * da[0] + nd.v[1] * da[1]);
                let f = p.f.eval(jet.value, 0.0, 0.0);
                let grad_u = p.base_inv[k].apply(jet.grad, dim);
                let du2 = grad_u[0] * jet.grad[0] + grad_u[1] * jet.grad[1];
                let da_du = grad_u[0] * da[0] + grad_u[1] * da[1];
                conformal - w * da_du / (f * (f * f - du2).sqrt())
            }
        }
    }

    fn evaluate(&self, u: &[f64]) -> Result<Evaluation, GeometryError> {
        let dim = self.grid.dim();
        if let Some(node) = u.iter().position(|t| !self.model.contains(*t)) {
            return Err(GeometryError::OutOfInterval { node, t: u[node] });
        }
        let jets: Vec<Jet> = (0..self.grid.len()).map(|k| jet_at(&self.grid, u, k)).collect();
        let local = map_nodes(self.grid.len(), |k| local_data(self.model, &self.grid, k, u[k], None));
        let mut margin = f64::INFINITY;
        for (node, (ld, j)) in local.iter().zip(&jets).enumerate() {
            let nd = NormalData::new(dim, ld, j.grad);
            let eig = nd.induced.eig(dim).0;
            if !(nd.margin > 0.0) || !(eig > 0.0) {
                return Err(GeometryError::NotSpacelike { node, margin: eig });
            }
            margin = margin.min(eig);
        }
        let r = map_nodes(self.grid.len(), |k| self.node_residual(k, &local[k], &jets[k]));
        Ok(Evaluation { r, jets, local, margin })
    }

    /// Partial derivatives of `r_k` with respect to the jet entries:
    /// value, grad x, grad y, hess xx, hess xy, hess yy.
    fn jet_partials(&self, k: usize, ev: &Evaluation, eps: f64) -> [f64; 6] {
        let jet = ev.jets[k];
        let ld = &ev.local[k];
        let mut out = [0.0; 6];
        let hv = eps * jet.value.abs().max(1.0);
        let eval_v = |t: f64| {
            let l = local_data(self.model, &self.grid, k, t, None);
            self.node_residual(k, &l, &Jet { value: t, ..jet })
        };
        out[0] = (eval_v(jet.value + hv) - eval_v(jet.value - hv)) / (2.0 * hv);
        let dim = self.grid.dim();
        for a in 0..dim {
            let hg = eps * jet.grad[a].abs().max(1.0);
            let mut jp = jet;
            let mut jm = jet;
            jp.grad[a] += hg;
            jm.grad[a] -= hg;
            out[1 + a] = (self.node_residual(k, ld, &jp) - self.node_residual(k, ld, &jm)) / (2.0 * hg);
        }
        let comps: &[usize] = if dim == 1 { &[0] } else { &[0, 1, 2] };
        for &c in comps {
            let get = |j: &Jet| match c {
                0 => j.hess.xx,
                1 => j.hess.xy,
                _ => j.hess.yy,
            };
            let s = get(&jet).abs().max(1.0);
            let mut jp = jet;
            let mut jm = jet;
            match c {
                0 => {
                    jp.hess.xx += s;
                    jm.hess.xx -= s;
                }
                1 => {
                    jp.hess.xy += s;
                    jm.hess.xy -= s;
                }
                _ => {
                    jp.hess.yy += s;
                    jm.hess.yy -= s;
                }
            }
            out[3 + c] = (self.node_residual(k, ld, &jp) - self.node_residual(k, ld, &jm)) / (2.0 * s);
        }
        out
    }

    fn jacobian_jet(&self, ev: &Evaluation, eps: f64) -> Vec<Triplet<usize, usize, f64>> {
        let g = &self.grid;
        let partials = map_nodes(g.len(), |k| self.jet_partials(k, ev, eps));
        let hx = g.spacing(0);
        let mut trip = Vec::with_capacity(g.len() * 9);
        for (k, p) in partials.iter().enumerate() {
            let mut center = p[0] - 2.0 * p[3] / (hx * hx);
            trip.push(Triplet::new(k, g.shift(k, 0, 1), p[1] / (2.0 * hx) + p[3] / (hx * hx)));
            trip.push(Triplet::new(k, g.shift(k, 0, -1), -p[1] / (2.0 * hx) + p[3] / (hx * hx)));
            if g.dim() == 2 {
                let hy = g.spacing(1);
                center -= 2.0 * p[5] / (hy * hy);
                trip.push(Triplet::new(k, g.shift(k, 1, 1), p[2] / (2.0 * hy) + p[5] / (hy * hy)));
                trip.push(Triplet::new(k, g.shift(k, 1, -1), -p[2] / (2.0 * hy) + p[5] / (hy * hy)));
                let c = p[4] / (4.0 * hx * hy);
                trip.push(Triplet::new(k, g.shift2(k, 1, 1), c));
                trip.push(Triplet::new(k, g.shift2(k, 1, -1), -c));
                trip.push(Triplet::new(k, g.shift2(k, -1, 1), -c));
                trip.push(Triplet::new(k, g.shift2(k, -1, -1), c));
            }
            trip.push(Triplet::new(k, k, center));
        }
        trip
    }

    fn stencil(&self, k: usize) -> Vec<usize> {
        let g = &self.grid;
        if g.dim() == 1 {
            vec![g.shift(k, 0, -1), k, g.shift(k, 0, 1)]
        } else {
            let mut v = Vec::with_capacity(9);
            for dj in -1..=1 {
                for di in -1..=1 {
                    v.push(g.shift2(k, di, dj));
                }
            }
            v
        }
    }

    fn jacobian_colored(&self, u: &[f64], eps: f64) -> Result<Vec<Triplet<usize, usize, f64>>, GeometryError> {
        let colors = distance2_coloring(&self.grid);
        let ncolors = colors.iter().max().map_or(0, |c| c + 1);
        let mut trip = Vec::with_capacity(self.grid.len() * 9);
        for c in 0..ncolors {
            let steps: Vec<f64> = u
                .iter()
                .zip(&colors)
                .map(|(v, col)| if *col == c { eps * v.abs().max(1.0) } else { 0.0 })
                .collect();
            let up: Vec<f64> = u.iter().zip(&steps).map(|(v, s)| v + s).collect();
            let um: Vec<f64> = u.iter().zip(&steps).map(|(v, s)| v - s).collect();
            let rp = self.evaluate(&up)?.r;
            let rm = self.evaluate(&um)?.r;
            for m in (0..self.grid.len()).filter(|m| colors[*m] == c) {
                for row in self.stencil(m) {
                    trip.push(Triplet::new(row, m, (rp[row] - rm[row]) / (2.0 * steps[m])));
                }
            }
        }
        Ok(trip)
    }

    /// Explicit relaxation coefficients: `1 / rho_k` where `rho_k` bounds
    /// the spectral radius of the principal part at node k.
    fn relaxation_weights(&self, ev: &Evaluation) -> Vec<f64> {
        let g = &self.grid;
        let dim = g.dim();
        map_nodes(g.len(), |k| {
            let jet = ev.jets[k];
            let ld = &ev.local[k];
            let coef = |c: usize| {
                let mut jp = jet;
                match c {
                    0 => jp.hess.xx += 1.0,
                    1 => jp.hess.xy += 1.0,
                    _ => jp.hess.yy += 1.0,
                }
                self.node_residual(k, ld, &jp) - ev.r[k]
            };
            let hx = g.spacing(0);
            let mut rho = 2.0 * coef(0).abs() / (hx * hx);
            if dim == 2 {
                let hy = g.spacing(1);
                rho += 2.0 * coef(2).abs() / (hy * hy) + 0.5 * coef(1).abs() / (hx * hy);
            }
            1.0 / rho
        })
    }

    fn mean_residual(&self, u: &[f64], shift: f64) -> Option<f64> {
        let v: Vec<f64> = u.iter().map(|x| x + shift).collect();
        self.evaluate(&v).ok().map(|e| mean(&e.r))
    }
}

/// Greedy coloring such that nodes sharing a residual stencil differ.
pub fn distance2_coloring(grid: &FiberGrid) -> Vec<usize> {
    let mut colors = vec![usize::MAX; grid.len()];
    let reach: isize = 2;
    for k in 0..grid.len() {
        let mut used = Vec::new();
        let ys = if grid.dim() == 2 { -reach..=reach } else { 0..=0 };
        for dj in ys {
            for di in -reach..=reach {
                let m = grid.shift2(k, di, dj);
                if m != k && colors[m] != usize::MAX {
                    used.push(colors[m]);
                }
            }
        }
        colors[k] = (0..).find(|c| !used.contains(c)).unwrap();
    }
    colors
}

fn solve_shifted(
    trip: &[Triplet<usize, usize, f64>],
    n: usize,
    mu: f64,
    rhs: &[f64],
) -> Option<Vec<f64>> {
    let mut entries: Vec<Triplet<usize, usize, f64>> =
        trip.iter().map(|t| Triplet::new(t.row, t.col, -t.val)).collect();
    entries.extend((0..n).map(|k| Triplet::new(k, k, mu)));
    let a = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &entries).ok()?;
    let lu = a.sp_lu().ok()?;
    let mut b = Col::<f64>::from_fn(n, |i| rhs[i]);
    lu.solve_in_place(b.as_mat_mut());
    let x: Vec<f64> = (0..n).map(|i| b[i]).collect();
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

fn norm2_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Iteration bookkeeping shared by both solvers.
struct Tracker {
    residuals: Vec<f64>,
    margins: Vec<f64>,
    drift: Vec<f64>,
}

impl Tracker {
    fn new() -> Self {
        Tracker { residuals: Vec::new(), margins: Vec::new(), drift: Vec::new() }
    }

    fn record(&mut self, u: &[f64], ev: &Evaluation) {
        self.residuals.push(max_abs(&ev.r));
        self.margins.push(ev.margin);
        self.drift.push(mean(u));
    }

    /// Monotone mean over the last `window` steps while the residual
    /// decreased by less than `min_decrease` relative.
    fn drifting(&self, window: usize, min_decrease: f64) -> bool {
        let n = self.drift.len();
        if n <= window {
            return false;
        }
        let d = &self.drift[n - window - 1..];
        let up = d.windows(2).all(|w| w[1] > w[0]);
        let down = d.windows(2).all(|w| w[1] < w[0]);
        let r0 = self.residuals[n - window - 1];
        let r1 = self.residuals[n - 1];
        (up || down) && (r0 - r1) < min_decrease * r0
    }
}

/// State of the explicit relaxation: cached derivative of the mean residual
/// with respect to a constant shift of the graph.
struct Relaxation {
    slope: Option<f64>,
    age: usize,
    last_mean: f64,
    /// Trust radius for the constant shift.
    radius: f64,
}

const SLOPE_REFRESH: usize = 10;
/// Relative growth of the mean residual that shrinks the trust radius.
const GROWTH_TOL: f64 = 1e-2;

impl Relaxation {
    fn new() -> Self {
        Relaxation { slope: None, age: 0, last_mean: f64::INFINITY, radius: f64::INFINITY }
    }

    /// One mean-free step `u + cfl W (r - mean_W r)`, plus a Newton step on
    /// the mean residual in the constant direction. Halves the step until
    /// the result stays inside the interval with the required margin.
    fn step(
        &mut self,
        sys: &System<'_>,
        u: &[f64],
        ev: &Evaluation,
        params: &SolverParams,
        floor: f64,
    ) -> Option<(Vec<f64>, Evaluation)> {
        let w = sys.relaxation_weights(ev);
        // Removing the W-weighted mean of r keeps a constant residual from
        // feeding back through nonuniform weights.
        let rw = w.iter().zip(&ev.r).map(|(w, r)| w * r).sum::<f64>() / w.iter().sum::<f64>();
        let mut delta: Vec<f64> = w.iter().zip(&ev.r).map(|(w, r)| params.flow_cfl * w * (r - rw)).collect();
        let cap = max_abs(&delta);
        if cap > params.flow_max_step {
            let s = params.flow_max_step / cap;
            delta.iter_mut().for_each(|d| *d *= s);
        }

        let m0 = mean(&ev.r);
        let grew = m0.abs() > (1.0 + GROWTH_TOL) * self.last_mean.abs();
        self.radius = if grew { 0.5 * self.radius } else { 1.25 * self.radius }.min(params.flow_max_step);
        if self.slope.is_none() || self.age >= SLOPE_REFRESH || grew {
            let h = params.fd_perturbation * mean(u).abs().max(1.0);
            self.slope = match (sys.mean_residual(u, h), sys.mean_residual(u, -h)) {
                (Some(p), Some(m)) => Some((p - m) / (2.0 * h)),
                _ => None,
            };
            self.age = 0;
        }
        self.age += 1;
        // Damped Gauss-Newton on the mean residual: stays bounded where the
        // mean residual has a double root (a degenerate critical level).
        self.last_mean = m0;
        let mut shift = match self.slope {
            Some(d) if d.is_finite() && d * d + m0.abs() > 0.0 => -m0 * d / (d * d + m0.abs()),
            _ => 0.0,
        };
        shift = shift.clamp(-self.radius, self.radius);

        let mut scale = 1.0;
        for _ in 0..48 {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(u, d)| u + scale * (d + shift)).collect();
            if let Ok(e) = sys.evaluate(&trial) {
                if e.margin >= floor {
                    return Some((trial, e));
                }
            }
            scale *= 0.5;
        }
        None
    }
}

fn finish(
    sys: &System<'_>,
    method: Method,
    status: SolveStatus,
    iterations: usize,
    u: Vec<f64>,
    ev: &Evaluation,
    mut tr: Tracker,
    params: &SolverParams,
    fallback_steps: usize,
) -> Result<(ScalarField, SolverReport), SolverError> {
    tr.record(&u, ev);
    let verified_residual = verify(sys, &u)?;
    let (classification, slice_deviation) = classify_graph(&u, params.slice_tol);
    let report = SolverReport {
        method,
        status,
        iterations,
        final_residual: max_abs(&ev.r),
        verified_residual,
        residual_history: tr.residuals,
        margin_history: tr.margins,
        drift: tr.drift,
        classification,
        slice_deviation,
        fallback_steps,
    };
    Ok((u, report))
}

/// Recomputes the residual through a freshly built graph.
fn verify(sys: &System<'_>, u: &[f64]) -> Result<f64, SolverError> {
    let graph = SpacelikeGraph::new(sys.model, &sys.grid, u.to_vec())?;
    match &sys.problem {
        Problem::Maximal => Ok(max_abs(&graph.mean_curvature()?)),
        Problem::Prescribed(p) => {
            let ht = graph.conformal_mean_curvature(&p.alpha)?;
            let rhs = prescribed_rhs(&graph, &p.f, &p.alpha)?;
            Ok(ht.iter().zip(&rhs).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())))
        }
    }
}

/// `e^{-alpha} g_F(D alpha, D u) / (f(u) sqrt(f(u)^2 - |Du|^2))` on a GRW graph.
pub fn prescribed_rhs(graph: &SpacelikeGraph<'_>, f: &Expr, alpha: &[f64]) -> Result<ScalarField, SolverError> {
    let grid = graph.grid();
    let base = graph
        .model()
        .base()
        .ok_or(SolverError::NotGrw(graph.model().family().tag()))?;
    let dim = grid.dim();
    let da = grid.differential(alpha);
    Ok((0..grid.len())
        .map(|k| {
            let du = graph.jets()[k].grad;
            let gi = base.eval(grid.coord(k)).inverse(dim);
            let grad_u = gi.apply(du, dim);
            let du2 = grad_u[0] * du[0] + grad_u[1] * du[1];
            let fu = f.eval(graph.u()[k], 0.0, 0.0);
            (-alpha[k]).exp() * (grad_u[0] * da[k][0] + grad_u[1] * da[k][1]) / (fu * (fu * fu - du2).sqrt())
        })
        .collect())
}

fn newton(sys: &System<'_>, u0: &[f64], params: &SolverParams) -> Result<(ScalarField, SolverReport), SolverError> {
    params.validate()?;
    let n = sys.grid.len();
    let mut u = u0.to_vec();
    let mut ev = sys.evaluate(&u).map_err(SolverError::InvalidInitial)?;
    let floor = params.margin_floor * ev.margin;
    let mut tr = Tracker::new();
    let mut relax = Relaxation::new();
    let mut fallbacks = 0;

    for iter in 0..params.max_iters {
        let res = max_abs(&ev.r);
        if res < params.tol_residual {
            return finish(sys, Method::Newton, SolveStatus::Converged, iter, u, &ev, tr, params, fallbacks);
        }
        tr.record(&u, &ev);
        if tr.drifting(params.drift_window, params.drift_min_decrease) {
            return finish(sys, Method::Newton, SolveStatus::NoSolutionDetected, iter, u, &ev, tr, params, fallbacks);
        }

        let trip = match params.jacobian {
            JacobianMode::Jet => sys.jacobian_jet(&ev, params.fd_perturbation),
            JacobianMode::Colored => sys.jacobian_colored(&u, params.fd_perturbation)?,
        };
        let mut mu = params.continuation * res;
        let mut delta = None;
        for _ in 0..8 {
            if let Some(d) = solve_shifted(&trip, n, mu, &ev.r) {
                delta = Some(d);
                break;
            }
            mu = (10.0 * mu).max(1e-8 * res.max(1e-300));
        }
        let mut delta = delta.ok_or(SolverError::SingularSystem { iteration: iter, damping: mu })?;
        let size = max_abs(&delta);
        if size > params.max_step {
            let s = params.max_step / size;
            delta.iter_mut().for_each(|d| *d *= s);
        }

        let f0 = norm2_sq(&ev.r);
        let mut accepted = None;
        if max_abs(&delta) >= params.tol_step {
            let mut lambda = params.damping;
            while lambda >= params.min_damping {
                let trial: Vec<f64> = u.iter().zip(&delta).map(|(u, d)| u + lambda * d).collect();
                if let Ok(e) = sys.evaluate(&trial) {
                    if e.margin >= floor && norm2_sq(&e.r) <= (1.0 - 2.0 * params.armijo * lambda) * f0 {
                        accepted = Some((trial, e));
                        break;
                    }
                }
                lambda *= params.backtrack;
            }
        }
        match accepted {
            Some((nu, ne)) => {
                u = nu;
                ev = ne;
            }
            None => match relax.step(sys, &u, &ev, params, floor) {
                Some((nu, ne)) => {
                    fallbacks += 1;
                    u = nu;
                    ev = ne;
                }
                None => {
                    return finish(sys, Method::Newton, SolveStatus::LostSpacelike, iter, u, &ev, tr, params, fallbacks)
                }
            },
        }
    }
    let status = if max_abs(&ev.r) < params.tol_residual { SolveStatus::Converged } else { SolveStatus::MaxIters };
    finish(sys, Method::Newton, status, params.max_iters, u, &ev, tr, params, fallbacks)
}

fn relax(sys: &System<'_>, u0: &[f64], params: &SolverParams) -> Result<(ScalarField, SolverReport), SolverError> {
    params.validate()?;
    let mut u = u0.to_vec();
    let mut ev = sys.evaluate(&u).map_err(SolverError::InvalidInitial)?;
    let floor = params.margin_floor * ev.margin;
    let mut tr = Tracker::new();
    let mut state = Relaxation::new();
    for iter in 0..params.max_flow_iters {
        let res = max_abs(&ev.r);
        if res < params.tol_residual {
            return finish(sys, Method::Flow, SolveStatus::Converged, iter, u, &ev, tr, params, 0);
        }
        tr.record(&u, &ev);
        if tr.drifting(params.drift_window, params.drift_min_decrease) {
            return finish(sys, Method::Flow, SolveStatus::NoSolutionDetected, iter, u, &ev, tr, params, 0);
        }
        match state.step(sys, &u, &ev, params, floor) {
            Some((nu, ne)) => {
                let moved = u.iter().zip(&nu).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                if moved < 1e-14 {
                    return Err(SolverError::Stalled { iterations: iter, residual: res });
                }
                u = nu;
                ev = ne;
            }
            None => return finish(sys, Method::Flow, SolveStatus::LostSpacelike, iter, u, &ev, tr, params, 0),
        }
    }
    let status = if max_abs(&ev.r) < params.tol_residual { SolveStatus::Converged } else { SolveStatus::MaxIters };
    finish(sys, Method::Flow, status, params.max_flow_iters, u, &ev, tr, params, 0)
}

fn check_u0(model: &SpacetimeModel, grid: &FiberGrid, u0: &[f64]) -> Result<(), SolverError> {
    SpacelikeGraph::new(model, grid, u0.to_vec()).map_err(SolverError::InvalidInitial)?;
    Ok(())
}

/// Damped Newton (pseudo-transient continuation) for `H(u) = 0`.
pub fn solve_maximal<'m>(
    model: &'m SpacetimeModel,
    grid: &FiberGrid,
    u0: &[f64],
    params: &SolverParams,
) -> Result<(SpacelikeGraph<'m>, SolverReport), SolverError> {
    check_u0(model, grid, u0)?;
    let sys = System { model, grid: *grid, problem: Problem::Maximal };
    let (u, report) = newton(&sys, u0, params)?;
    Ok((SpacelikeGraph::new(model, grid, u)?, report))
}

/// Solves `H~(u) = e^{-alpha} g_F(D alpha, Du) / (f sqrt(f^2 - |Du|^2))`
/// where `H~` is the mean curvature in `e^{2 alpha} (-dt^2 + f^2 g_F)`.
pub fn solve_prescribed<'m>(
    model: &'m SpacetimeModel,
    grid: &FiberGrid,
    alpha: &[f64],
    u0: &[f64],
    params: &SolverParams,
) -> Result<(SpacelikeGraph<'m>, SolverReport), SolverError> {
    let f = match model.family() {
        Family::Grw { f } => f.clone(),
        other => return Err(SolverError::NotGrw(other.tag())),
    };
    if alpha.len() != grid.len() {
        return Err(GeometryError::ShapeMismatch { expected: grid.len(), found: alpha.len() }.into());
    }
    check_u0(model, grid, u0)?;
    let base = model.base().ok_or(SolverError::NotGrw("custom"))?;
    let p = Prescribed {
        alpha: alpha.to_vec(),
        dalpha: grid.differential(alpha),
        base_inv: (0..grid.len()).map(|k| base.eval(grid.coord(k)).inverse(grid.dim())).collect(),
        f,
    };
    let sys = System { model, grid: *grid, problem: Problem::Prescribed(p) };
    let (u, report) = newton(&sys, u0, params)?;
    Ok((SpacelikeGraph::new(model, grid, u)?, report))
}

/// Explicit relaxation `u <- u + dt W H` toward a maximal graph.
pub fn flow_relax<'m>(
    model: &'m SpacetimeModel,
    grid: &FiberGrid,
    u0: &[f64],
    params: &SolverParams,
) -> Result<(SpacelikeGraph<'m>, SolverReport), SolverError> {
    check_u0(model, grid, u0)?;
    let sys = System { model, grid: *grid, problem: Problem::Maximal };
    let (u, report) = relax(&sys, u0, params)?;
    Ok((SpacelikeGraph::new(model, grid, u)?, report))
}

/// Dense Jacobian of the maximal residual, for cross-checks on small grids.
pub fn residual_jacobian(
    model: &SpacetimeModel,
    grid: &FiberGrid,
    u: &[f64],
    mode: JacobianMode,
    eps: f64,
) -> Result<Vec<Vec<f64>>, SolverError> {
    let sys = System { model, grid: *grid, problem: Problem::Maximal };
    let ev = sys.evaluate(u)?;
    let trip = match mode {
        JacobianMode::Jet => sys.jacobian_jet(&ev, eps),
        JacobianMode::Colored => sys.jacobian_colored(u, eps)?,
    };
    let mut dense = vec![vec![0.0; grid.len()]; grid.len()];
    for t in trip {
        dense[t.row][t.col] += t.val;
    }
    Ok(dense)
}

/// Random initial graphs: a level `center + U(-offset, offset)` plus
/// band-limited trigonometric noise scaled so that
/// `sqrt(beta) |du|_g ≤ budget` (a fraction of the light-cone bound).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomInit {
    pub center: f64,
    pub offset: f64,
    pub modes: usize,
    pub budget: f64,
}

impl Default for RandomInit {
    fn default() -> Self {
        RandomInit { center: 0.0, offset: 0.5, modes: 3, budget: 0.25 }
    }
}

/// Values and differentials of a random band-limited trigonometric field,
/// with Fourier amplitudes decaying like `1 / |k|^2`.
fn trig_field(grid: &FiberGrid, rng: &mut ChaCha8Rng, modes: usize) -> Vec<(f64, [f64; 2])> {
    let dim = grid.dim();
    let k = modes.max(1) as i64;
    let ky_range = if dim == 2 { -k..=k } else { 0..=0 };
    let tau = 2.0 * std::f64::consts::PI;
    let l = grid.lengths();
    let ly = if dim == 2 { l[1] } else { 1.0 };
    // (wave vector, cos amplitude, sin amplitude)
    let mut terms = Vec::new();
    for ky in ky_range {
        for kx in -k..=k {
            if !(ky > 0 || (ky == 0 && kx > 0)) {
                continue;
            }
            let scale = 1.0 / (kx * kx + ky * ky) as f64;
            let a = scale * (2.0 * rng.random::<f64>() - 1.0);
            let b = scale * (2.0 * rng.random::<f64>() - 1.0);
            terms.push(([tau * kx as f64 / l[0], tau * ky as f64 / ly], a, b));
        }
    }
    (0..grid.len())
        .map(|node| {
            let x = grid.coord(node);
            let mut v = 0.0;
            let mut d = [0.0; 2];
            for (kv, a, b) in &terms {
                let ph = kv[0] * x[0] + kv[1] * x[1];
                let (s, c) = ph.sin_cos();
                v += a * c + b * s;
                d[0] += (b * c - a * s) * kv[0];
                d[1] += (b * c - a * s) * kv[1];
            }
            (v, d)
        })
        .collect()
}

/// Seeded band-limited noise normalized to unit sup norm.
pub fn trig_noise(grid: &FiberGrid, seed: u64, modes: usize) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = trig_field(grid, &mut rng, modes);
    let peak = field.iter().fold(0.0f64, |m, (v, _)| m.max(v.abs()));
    field.iter().map(|(v, _)| if peak > 0.0 { v / peak } else { 0.0 }).collect()
}

impl RandomInit {
    pub fn sample(&self, model: &SpacetimeModel, grid: &FiberGrid, seed: u64) -> Result<ScalarField, SolverError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let level = self.center + self.offset * (2.0 * rng.random::<f64>() - 1.0);
        let dim = grid.dim();
        let noise = trig_field(grid, &mut rng, self.modes);
        let steepness = |u: &[f64], amp: f64| {
            (0..grid.len())
                .map(|node| {
                    let (beta, g) = model.beta_metric(u[node], grid.coord(node));
                    amp * (beta * g.inverse(dim).quad(noise[node].1, dim)).sqrt()
                })
                .fold(0.0f64, f64::max)
        };
        let flat = vec![level; grid.len()];
        if !model.contains(level) {
            return Err(SolverError::InvalidParams(format!("random level {level} outside the model interval")));
        }
        let unit = steepness(&flat, 1.0);
        let mut amp = if unit > 0.0 { self.budget / unit } else { 0.0 };
        for _ in 0..60 {
            let u: Vec<f64> = noise.iter().map(|n| level + amp * n.0).collect();
            if u.iter().all(|t| model.contains(*t)) && steepness(&u, amp) <= self.budget {
                return Ok(u);
            }
            amp *= 0.8;
        }
        Err(SolverError::InvalidParams(format!(
            "could not place a spacelike random graph around t = {level}"
        )))
    }
}
