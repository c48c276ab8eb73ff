//! Orthogonal-splitted spacetimes `-beta dt^2 + g_t` over a periodic fiber.
//!
//! Expression-backed models carry exact symbolic t-derivatives. Callable
//! models fall back to central differences in t.

pub mod expr;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fiber_calculus::{FiberError, FiberGrid, ScalarField, Sym, SymTensorField};
pub use expr::{Expr, ExprError, Var};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("t = {t} lies outside the interval ({lo}, {hi})")]
    OutOfInterval { t: f64, lo: f64, hi: f64 },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Fiber(#[from] FiberError),
}

pub type BetaFn = Arc<dyn Fn(f64, [f64; 2]) -> f64 + Send + Sync>;
pub type MetricFn = Arc<dyn Fn(f64, [f64; 2]) -> Sym + Send + Sync>;

/// Which named family a model was built from.
#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    /// `-dt^2 + f(t)^2 g_F`
    Grw { f: Expr },
    /// `-dt^2 + sum_i f_i(t)^2 g_i` with fiber axis `a` in block `blocks[a]`.
    MultiplyWarped { warps: Vec<Expr>, blocks: Vec<usize> },
    /// `-dt^2 + lambda(t, x) g_F`
    Twisted { lambda: Expr },
    /// `-h(x)^2 dt^2 + g_F`
    StandardStatic { h: Expr },
    LorentzianProduct,
    Custom,
}

impl Family {
    pub fn tag(&self) -> &'static str {
        match self {
            Family::Grw { .. } => "grw",
            Family::MultiplyWarped { .. } => "multiply_warped",
            Family::Twisted { .. } => "twisted",
            Family::StandardStatic { .. } => "standard_static",
            Family::LorentzianProduct => "lorentzian_product",
            Family::Custom => "custom",
        }
    }
}

/// Riemannian metric on the fiber given by component expressions in x, y.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseMetric {
    pub dim: usize,
    /// (xx, xy, yy); for dim 1 only xx is read.
    pub comps: [Expr; 3],
}

impl BaseMetric {
    pub fn flat(dim: usize) -> Self {
        BaseMetric {
            dim,
            comps: [Expr::constant(1.0), Expr::constant(0.0), Expr::constant(1.0)],
        }
    }

    pub fn new(dim: usize, comps: [Expr; 3]) -> Result<Self, ModelError> {
        if !(1..=2).contains(&dim) {
            return Err(ModelError::Fiber(FiberError::UnsupportedDimension(dim)));
        }
        if comps.iter().any(|c| c.depends_on(Var::T)) {
            return Err(ModelError::InvalidModel("base metric must not depend on t".into()));
        }
        Ok(BaseMetric { dim, comps })
    }

    fn scaled(&self, c: &Expr) -> [Expr; 3] {
        [
            c.clone().mul(self.comps[0].clone()),
            c.clone().mul(self.comps[1].clone()),
            c.clone().mul(self.comps[2].clone()),
        ]
    }

    pub fn eval(&self, x: [f64; 2]) -> Sym {
        let e = |c: &Expr| c.eval(0.0, x[0], x[1]);
        if self.dim == 1 {
            Sym::new(e(&self.comps[0]), 0.0, 0.0)
        } else {
            Sym::new(e(&self.comps[0]), e(&self.comps[1]), e(&self.comps[2]))
        }
    }
}

#[derive(Clone)]
enum Source {
    Symbolic {
        beta: Expr,
        dbeta: Expr,
        metric: [Expr; 3],
        dmetric: [Expr; 3],
    },
    Callable { beta: BetaFn, metric: MetricFn },
}

/// Metric data at one spacetime point.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PointData {
    pub beta: f64,
    pub g: Sym,
    pub dbeta: f64,
    pub dg: Sym,
}

/// Fields of one slice `{t} x F` sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceFields {
    pub beta: ScalarField,
    pub g: SymTensorField,
    pub dbeta: ScalarField,
    pub dg: SymTensorField,
}

#[derive(Clone)]
pub struct SpacetimeModel {
    dim: usize,
    interval: (f64, f64),
    family: Family,
    base: Option<BaseMetric>,
    source: Source,
}

impl fmt::Debug for SpacetimeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpacetimeModel")
            .field("dim", &self.dim)
            .field("interval", &self.interval)
            .field("family", &self.family)
            .finish()
    }
}

/// Step for central differences in t: cbrt(eps) * max(1, |t|).
pub fn fd_step(t: f64) -> f64 {
    f64::EPSILON.cbrt() * t.abs().max(1.0)
}

fn check_interval(interval: (f64, f64)) -> Result<(), ModelError> {
    if interval.0.is_nan() || interval.1.is_nan() || interval.0 >= interval.1 {
        return Err(ModelError::InvalidModel(format!(
            "empty time interval ({}, {})",
            interval.0, interval.1
        )));
    }
    Ok(())
}

impl SpacetimeModel {
    fn symbolic(
        dim: usize,
        interval: (f64, f64),
        family: Family,
        base: Option<BaseMetric>,
        beta: Expr,
        metric: [Expr; 3],
    ) -> Result<Self, ModelError> {
        check_interval(interval)?;
        let dbeta = beta.derivative(Var::T);
        let dmetric = [
            metric[0].derivative(Var::T),
            metric[1].derivative(Var::T),
            metric[2].derivative(Var::T),
        ];
        Ok(SpacetimeModel {
            dim,
            interval,
            family,
            base,
            source: Source::Symbolic { beta, dbeta, metric, dmetric },
        })
    }

    pub fn grw(f: Expr, base: BaseMetric, interval: (f64, f64)) -> Result<Self, ModelError> {
        if f.depends_on(Var::X) || f.depends_on(Var::Y) {
            return Err(ModelError::InvalidModel("warping function may depend on t only".into()));
        }
        let metric = base.scaled(&f.clone().square());
        Self::symbolic(base.dim, interval, Family::Grw { f }, Some(base.clone()), Expr::constant(1.0), metric)
    }

    pub fn multiply_warped(
        warps: Vec<Expr>,
        blocks: Vec<usize>,
        base: BaseMetric,
        interval: (f64, f64),
    ) -> Result<Self, ModelError> {
        if blocks.len() != base.dim || blocks.iter().any(|b| *b >= warps.len()) {
            return Err(ModelError::InvalidModel(
                "each fiber axis needs a block index into the warp list".into(),
            ));
        }
        if warps.iter().any(|w| w.depends_on(Var::X) || w.depends_on(Var::Y)) {
            return Err(ModelError::InvalidModel("warping functions may depend on t only".into()));
        }
        if base.dim == 2 && base.comps[1].as_constant() != Some(0.0) {
            return Err(ModelError::InvalidModel(
                "multiply warped models need a block-diagonal base metric".into(),
            ));
        }
        let fx = warps[blocks[0]].clone().square();
        let metric = if base.dim == 1 {
            [fx.mul(base.comps[0].clone()), Expr::constant(0.0), Expr::constant(0.0)]
        } else {
            let fy = warps[blocks[1]].clone().square();
            [
                fx.mul(base.comps[0].clone()),
                Expr::constant(0.0),
                fy.mul(base.comps[2].clone()),
            ]
        };
        Self::symbolic(
            base.dim,
            interval,
            Family::MultiplyWarped { warps, blocks },
            Some(base),
            Expr::constant(1.0),
            metric,
        )
    }

    pub fn twisted(lambda: Expr, base: BaseMetric, interval: (f64, f64)) -> Result<Self, ModelError> {
        let metric = base.scaled(&lambda);
        Self::symbolic(base.dim, interval, Family::Twisted { lambda }, Some(base.clone()), Expr::constant(1.0), metric)
    }

    pub fn standard_static(h: Expr, base: BaseMetric, interval: (f64, f64)) -> Result<Self, ModelError> {
        if h.depends_on(Var::T) {
            return Err(ModelError::InvalidModel("static lapse h must not depend on t".into()));
        }
        let metric = base.comps.clone();
        let beta = h.clone().square();
        Self::symbolic(base.dim, interval, Family::StandardStatic { h }, Some(base), beta, metric)
    }

    pub fn lorentzian_product(base: BaseMetric, interval: (f64, f64)) -> Result<Self, ModelError> {
        let metric = base.comps.clone();
        Self::symbolic(base.dim, interval, Family::LorentzianProduct, Some(base), Expr::constant(1.0), metric)
    }

    /// Arbitrary `beta(t, x, y)` and metric components.
    pub fn custom(dim: usize, beta: Expr, metric: [Expr; 3], interval: (f64, f64)) -> Result<Self, ModelError> {
        if !(1..=2).contains(&dim) {
            return Err(ModelError::Fiber(FiberError::UnsupportedDimension(dim)));
        }
        Self::symbolic(dim, interval, Family::Custom, None, beta, metric)
    }

    /// Model from plain closures; t-derivatives by central differences.
    pub fn from_callables(
        dim: usize,
        interval: (f64, f64),
        beta: BetaFn,
        metric: MetricFn,
    ) -> Result<Self, ModelError> {
        if !(1..=2).contains(&dim) {
            return Err(ModelError::Fiber(FiberError::UnsupportedDimension(dim)));
        }
        check_interval(interval)?;
        Ok(SpacetimeModel {
            dim,
            interval,
            family: Family::Custom,
            base: None,
            source: Source::Callable { beta, metric },
        })
    }

    /// `-dt^2 + cosh(t)^2 g_F`, the de Sitter spacetime in global slicing.
    pub fn de_sitter(base: BaseMetric) -> Self {
        let f = Expr::parse("cosh(t)", &[Var::T]).expect("literal expression");
        Self::grw(f, base, (f64::NEG_INFINITY, f64::INFINITY)).expect("valid family")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn interval(&self) -> (f64, f64) {
        self.interval
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn base(&self) -> Option<&BaseMetric> {
        self.base.as_ref()
    }

    pub fn contains(&self, t: f64) -> bool {
        t > self.interval.0 && t < self.interval.1
    }

    pub fn check_time(&self, t: f64) -> Result<(), ModelError> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(ModelError::OutOfInterval { t, lo: self.interval.0, hi: self.interval.1 })
        }
    }

    fn sym_from(&self, c: &[Expr; 3], t: f64, x: [f64; 2]) -> Sym {
        if self.dim == 1 {
            Sym::new(c[0].eval(t, x[0], x[1]), 0.0, 0.0)
        } else {
            Sym::new(
                c[0].eval(t, x[0], x[1]),
                c[1].eval(t, x[0], x[1]),
                c[2].eval(t, x[0], x[1]),
            )
        }
    }

    /// beta and g_t at one point, without derivatives.
    pub fn beta_metric(&self, t: f64, x: [f64; 2]) -> (f64, Sym) {
        match &self.source {
            Source::Symbolic { beta, metric, .. } => {
                (beta.eval(t, x[0], x[1]), self.sym_from(metric, t, x))
            }
            Source::Callable { beta, metric } => (beta(t, x), metric(t, x)),
        }
    }

    /// beta, g_t and their t-derivatives at one point. No interval check.
    pub fn point(&self, t: f64, x: [f64; 2]) -> PointData {
        match &self.source {
            Source::Symbolic { beta, dbeta, metric, dmetric } => PointData {
                beta: beta.eval(t, x[0], x[1]),
                g: self.sym_from(metric, t, x),
                dbeta: dbeta.eval(t, x[0], x[1]),
                dg: self.sym_from(dmetric, t, x),
            },
            Source::Callable { beta, metric } => {
                let h = fd_step(t);
                let (tp, tm) = (t + h, t - h);
                let inv = 1.0 / (tp - tm);
                PointData {
                    beta: beta(t, x),
                    g: metric(t, x),
                    dbeta: (beta(tp, x) - beta(tm, x)) * inv,
                    dg: metric(tp, x).sub(metric(tm, x)).scaled(inv),
                }
            }
        }
    }

    fn check_grid(&self, grid: &FiberGrid) -> Result<(), ModelError> {
        if grid.dim() != self.dim {
            return Err(ModelError::InvalidModel(format!(
                "model has fiber dimension {} but grid has {}",
                self.dim,
                grid.dim()
            )));
        }
        Ok(())
    }

    pub fn eval(&self, t: f64, grid: &FiberGrid) -> Result<SliceFields, ModelError> {
        self.check_time(t)?;
        self.check_grid(grid)?;
        let pts: Vec<PointData> = (0..grid.len()).map(|k| self.point(t, grid.coord(k))).collect();
        Ok(SliceFields {
            beta: pts.iter().map(|p| p.beta).collect(),
            g: pts.iter().map(|p| p.g).collect(),
            dbeta: pts.iter().map(|p| p.dbeta).collect(),
            dg: pts.iter().map(|p| p.dg).collect(),
        })
    }

    /// Checks beta > 0 and g_t positive definite on the slice.
    pub fn validate_slice(&self, t: f64, grid: &FiberGrid) -> Result<(), ModelError> {
        let s = self.eval(t, grid)?;
        if let Some(k) = s.beta.iter().position(|b| !(*b > 0.0) || !b.is_finite()) {
            return Err(ModelError::InvalidModel(format!(
                "beta = {} at t = {t}, node {k}",
                s.beta[k]
            )));
        }
        grid.volume_density(&s.g)?;
        Ok(())
    }

    /// `div(d/dt) = d_t log sqrt(det g_t) + dbeta / (2 beta)` per node.
    pub fn vol_slice_divergence(&self, t: f64, grid: &FiberGrid) -> Result<ScalarField, ModelError> {
        let s = self.eval(t, grid)?;
        let n = self.dim;
        Ok((0..grid.len())
            .map(|k| {
                0.5 * s.g[k].inverse(n).contract(&s.dg[k], n) + 0.5 * s.dbeta[k] / s.beta[k]
            })
            .collect())
    }

    /// Mean curvature of the slice `{t0} x F`:
    /// `n H = div(d/dt) / sqrt(beta) - dbeta / (2 beta^(3/2))`.
    pub fn slice_mean_curvature(&self, t0: f64, grid: &FiberGrid) -> Result<ScalarField, ModelError> {
        let div = self.vol_slice_divergence(t0, grid)?;
        let s = self.eval(t0, grid)?;
        let n = self.dim as f64;
        Ok((0..grid.len())
            .map(|k| {
                let b = s.beta[k];
                (div[k] / b.sqrt() - s.dbeta[k] / (2.0 * b.powf(1.5))) / n
            })
            .collect())
    }

    /// Largest |d_t beta| and |d_t log vol| on a slice. Both must vanish on a
    /// maximal slice when beta is spatially constant.
    pub fn slice_critical_conditions(&self, t: f64, grid: &FiberGrid) -> Result<(f64, f64), ModelError> {
        let s = self.eval(t, grid)?;
        let n = self.dim;
        let db = s.dbeta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dv = (0..grid.len())
            .map(|k| (0.5 * s.g[k].inverse(n).contract(&s.dg[k], n)).abs())
            .fold(0.0, f64::max);
        Ok((db, dv))
    }

    /// Sign pattern of `d_t beta` and `d_t g_t` over `t_range`.
    pub fn classify_monotonicity(
        &self,
        t_range: (f64, f64),
        grid: &FiberGrid,
        tol: f64,
        samples: usize,
    ) -> Result<MonotonicityVerdict, ModelError> {
        self.check_grid(grid)?;
        let (a, b) = t_range;
        if !(a < b) || samples < 2 {
            return Err(ModelError::InvalidModel("classification needs a t-range and ≥ 2 samples".into()));
        }
        self.check_time(a)?;
        self.check_time(b)?;
        let mut cert = Certificate::empty();
        let ts: Vec<f64> = (0..samples)
            .map(|i| a + (b - a) * i as f64 / (samples - 1) as f64)
            .collect();
        let states: Vec<SignState> = ts.iter().map(|&t| self.sign_state(t, grid, tol, Some(&mut cert))).collect();
        let nc: Vec<bool> = states.iter().map(|s| s.non_contracting).collect();
        let ne: Vec<bool> = states.iter().map(|s| s.non_expanding).collect();

        let all = |v: &[bool]| v.iter().all(|x| *x);
        let kind = if all(&nc) && all(&ne) {
            MonotonicityKind::Static
        } else if all(&nc) {
            MonotonicityKind::NonContracting
        } else if all(&ne) {
            MonotonicityKind::NonExpanding
        } else if let Some((s, e)) = self.split(&ts, &nc, &ne, grid, tol, true) {
            MonotonicityKind::Transition { start: s, end: e }
        } else if let Some((s, e)) = self.split(&ts, &ne, &nc, grid, tol, false) {
            MonotonicityKind::ReversedTransition { start: s, end: e }
        } else {
            MonotonicityKind::Indefinite
        };
        Ok(MonotonicityVerdict { kind, certificate: cert })
    }

    fn sign_state(&self, t: f64, grid: &FiberGrid, tol: f64, mut cert: Option<&mut Certificate>) -> SignState {
        let mut st = SignState { non_contracting: true, non_expanding: true };
        for k in 0..grid.len() {
            let p = self.point(t, grid.coord(k));
            let (lo, hi) = p.dg.eig(self.dim);
            let gscale = tol * p.g.norm(self.dim);
            let bscale = tol * p.beta.abs();
            if p.dbeta > bscale || lo < -gscale {
                st.non_contracting = false;
            }
            if p.dbeta < -bscale || hi > gscale {
                st.non_expanding = false;
            }
            if let Some(c) = cert.as_deref_mut() {
                c.min_dbeta = c.min_dbeta.min(p.dbeta);
                c.max_dbeta = c.max_dbeta.max(p.dbeta);
                c.min_dg_eig = c.min_dg_eig.min(lo);
                c.max_dg_eig = c.max_dg_eig.max(hi);
            }
        }
        st
    }

    /// Finds a split where `first` holds on a prefix and `second` on a
    /// suffix, then refines both edges by bisection.
    fn split(
        &self,
        ts: &[f64],
        first: &[bool],
        second: &[bool],
        grid: &FiberGrid,
        tol: f64,
        forward: bool,
    ) -> Option<(f64, f64)> {
        let p = first.iter().take_while(|x| **x).count();
        let q = ts.len() - second.iter().rev().take_while(|x| **x).count();
        if p == 0 || q == ts.len() || q > p {
            return None;
        }
        let pick = |s: &SignState, want_first: bool| match (forward, want_first) {
            (true, true) | (false, false) => s.non_contracting,
            _ => s.non_expanding,
        };
        // Last time where the prefix property still holds.
        let end = if p == ts.len() {
            ts[p - 1]
        } else {
            self.bisect(ts[p - 1], ts[p], |t| pick(&self.sign_state(t, grid, tol, None), true))
        };
        // First time from which the suffix property holds.
        let start = if q == 0 {
            ts[0]
        } else {
            self.bisect(ts[q], ts[q - 1], |t| pick(&self.sign_state(t, grid, tol, None), false))
        };
        Some((start.min(end), start.max(end)))
    }

    /// `good` holds at `yes` and fails at `no`; returns the boundary.
    fn bisect(&self, mut yes: f64, mut no: f64, good: impl Fn(f64) -> bool) -> f64 {
        while (yes - no).abs() > 1e-10 * yes.abs().max(1.0) * 0.5 {
            let mid = 0.5 * (yes + no);
            if good(mid) {
                yes = mid;
            } else {
                no = mid;
            }
        }
        yes
    }
}

struct SignState {
    non_contracting: bool,
    non_expanding: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MonotonicityKind {
    NonContracting,
    NonExpanding,
    Static,
    /// Non-contracting before `start`, non-expanding after `end`. The two
    /// agree up to bisection accuracy unless the model is static in between.
    Transition { start: f64, end: f64 },
    /// Non-expanding before, non-contracting after (de Sitter is the model case).
    ReversedTransition { start: f64, end: f64 },
    Indefinite,
}

impl MonotonicityKind {
    /// Transition level, the midpoint of the located interval.
    pub fn level(&self) -> Option<f64> {
        match self {
            MonotonicityKind::Transition { start, end }
            | MonotonicityKind::ReversedTransition { start, end } => Some(0.5 * (start + end)),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            MonotonicityKind::NonContracting => "non_contracting",
            MonotonicityKind::NonExpanding => "non_expanding",
            MonotonicityKind::Static => "static",
            MonotonicityKind::Transition { .. } => "transition",
            MonotonicityKind::ReversedTransition { .. } => "reversed_transition",
            MonotonicityKind::Indefinite => "indefinite",
        }
    }
}

/// Extremal sampled values backing a verdict.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub min_dbeta: f64,
    pub max_dbeta: f64,
    pub min_dg_eig: f64,
    pub max_dg_eig: f64,
}

impl Certificate {
    fn empty() -> Self {
        Certificate {
            min_dbeta: f64::INFINITY,
            max_dbeta: f64::NEG_INFINITY,
            min_dg_eig: f64::INFINITY,
            max_dg_eig: f64::NEG_INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityVerdict {
    pub kind: MonotonicityKind,
    pub certificate: Certificate,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const ALL: (f64, f64) = (f64::NEG_INFINITY, f64::INFINITY);

    fn e(s: &str) -> Expr {
        Expr::parse(s, &[Var::T, Var::X, Var::Y]).unwrap()
    }

    fn torus1(n: usize) -> FiberGrid {
        FiberGrid::new(&[n], &[2.0 * PI]).unwrap()
    }

    fn torus2(n: usize) -> FiberGrid {
        FiberGrid::new(&[n, n], &[2.0 * PI, 2.0 * PI]).unwrap()
    }

    fn gaussian() -> SpacetimeModel {
        SpacetimeModel::multiply_warped(
            vec![e("1.0 * exp(-0.5 * 1.0 * t^2)"), e("1.3 * exp(-0.5 * 0.49 * t^2)")],
            vec![0, 1],
            BaseMetric::flat(2),
            ALL,
        )
        .unwrap()
    }

    #[test]
    fn de_sitter_derivative_vanishes_at_zero() {
        let m = SpacetimeModel::de_sitter(BaseMetric::flat(1));
        let s = m.eval(0.0, &torus1(16)).unwrap();
        assert!(s.dg.iter().all(|d| d.xx == 0.0));
        assert!(s.g.iter().all(|g| g.xx == 1.0));
    }

    #[test]
    fn lorentzian_product_has_no_t_dependence() {
        let m = SpacetimeModel::lorentzian_product(BaseMetric::flat(2), ALL).unwrap();
        for t in [-3.0, 0.0, 5.0] {
            let s = m.eval(t, &torus2(8)).unwrap();
            assert!(s.dbeta.iter().all(|v| *v == 0.0));
            assert!(s.dg.iter().all(|d| *d == Sym::default()));
        }
    }

    #[test]
    fn gaussian_warp_derivatives_match_oracle() {
        let m = gaussian();
        let grid = torus2(8);
        for t in [-1.2, -0.3, 0.0, 0.8] {
            let s = m.eval(t, &grid).unwrap();
            let f1 = (-t * t).exp();
            let f2 = 1.69 * (-0.49 * t * t).exp();
            for d in &s.dg {
                assert!((d.xx - (-2.0 * t * f1)).abs() < 1e-14);
                assert!((d.yy - (-2.0 * 0.49 * t * f2)).abs() < 1e-14);
                assert_eq!(d.xy, 0.0);
            }
        }
    }

    #[test]
    fn callable_models_use_finite_differences() {
        let m = SpacetimeModel::from_callables(
            1,
            ALL,
            Arc::new(|_, _| 1.0),
            Arc::new(|t: f64, _| Sym::new(t.cosh().powi(2), 0.0, 0.0)),
        )
        .unwrap();
        let p = m.point(0.7, [0.0; 2]);
        assert!((p.dg.xx - (1.4f64).sinh()).abs() < 1e-9);
    }

    #[test]
    fn out_of_interval_is_reported() {
        let m = SpacetimeModel::grw(e("2 + t^3"), BaseMetric::flat(1), (-1.2, 2.0)).unwrap();
        assert!(matches!(m.eval(-1.5, &torus1(8)), Err(ModelError::OutOfInterval { .. })));
        assert!(m.slice_mean_curvature(2.0, &torus1(8)).is_err());
    }

    #[test]
    fn family_invariants_are_enforced() {
        assert!(SpacetimeModel::grw(e("exp(x)"), BaseMetric::flat(1), ALL).is_err());
        assert!(SpacetimeModel::standard_static(e("1 + t"), BaseMetric::flat(1), ALL).is_err());
        let skew = BaseMetric::new(2, [e("1"), e("0.1"), e("1")]).unwrap();
        assert!(SpacetimeModel::multiply_warped(vec![e("1")], vec![0, 0], skew, ALL).is_err());
        let bad = SpacetimeModel::twisted(e("t"), BaseMetric::flat(1), ALL).unwrap();
        assert!(bad.validate_slice(-1.0, &torus1(8)).is_err());
        assert!(bad.validate_slice(1.0, &torus1(8)).is_ok());
    }

    #[test]
    fn classification_examples() {
        let g1 = torus1(16);
        let prod = SpacetimeModel::lorentzian_product(BaseMetric::flat(1), ALL).unwrap();
        assert_eq!(prod.classify_monotonicity((-1.0, 1.0), &g1, 1e-10, 21).unwrap().kind, MonotonicityKind::Static);

        let stat = SpacetimeModel::standard_static(e("2 + sin(x)"), BaseMetric::flat(1), ALL).unwrap();
        assert_eq!(stat.classify_monotonicity((-1.0, 1.0), &g1, 1e-10, 21).unwrap().kind, MonotonicityKind::Static);

        let v = gaussian().classify_monotonicity((-2.0, 2.0), &torus2(8), 1e-10, 41).unwrap();
        let t0 = v.kind.level().unwrap();
        assert!(matches!(v.kind, MonotonicityKind::Transition { .. }));
        assert!(t0.abs() < 1e-9, "{v:?}");

        let tw = SpacetimeModel::twisted(e("2 + tanh(t)^3 * (1.5 + sin(x))"), BaseMetric::flat(1), (-1.5, 3.0)).unwrap();
        let v = tw.classify_monotonicity((-1.4, 2.9), &g1, 1e-10, 41).unwrap();
        assert_eq!(v.kind, MonotonicityKind::NonContracting);
        assert!(v.certificate.min_dg_eig >= 0.0);

        let ds = SpacetimeModel::de_sitter(BaseMetric::flat(1));
        let v = ds.classify_monotonicity((-1.0, 1.3), &g1, 1e-10, 24).unwrap();
        assert!(matches!(v.kind, MonotonicityKind::ReversedTransition { .. }));
        assert!(v.kind.level().unwrap().abs() < 1e-9);

        let exp = SpacetimeModel::grw(e("exp(-t)"), BaseMetric::flat(1), ALL).unwrap();
        assert_eq!(exp.classify_monotonicity((-1.0, 1.0), &g1, 1e-10, 5).unwrap().kind, MonotonicityKind::NonExpanding);

        // Lapse and metric pulling in opposite directions.
        let mixed = SpacetimeModel::custom(1, e("exp(t)"), [e("exp(t)"), e("0"), e("0")], ALL).unwrap();
        assert_eq!(mixed.classify_monotonicity((-1.0, 1.0), &g1, 1e-10, 5).unwrap().kind, MonotonicityKind::Indefinite);
    }

    #[test]
    fn flat_region_gives_transition_interval() {
        // f' > 0 before -0.5, 0 on [-0.5, 0.5], < 0 after: encoded through a
        // piecewise-free stand-in, beta rising and falling with a plateau.
        let m = SpacetimeModel::from_callables(
            1,
            ALL,
            Arc::new(|_, _| 1.0),
            Arc::new(|t: f64, _| {
                let s = if t < -0.5 {
                    -(t + 0.5).powi(2)
                } else if t > 0.5 {
                    -(t - 0.5).powi(2)
                } else {
                    0.0
                };
                Sym::new(2.0 + s, 0.0, 0.0)
            }),
        )
        .unwrap();
        let v = m.classify_monotonicity((-2.0, 2.0), &torus1(8), 1e-8, 41).unwrap();
        match v.kind {
            MonotonicityKind::Transition { start, end } => {
                assert!((start + 0.5).abs() < 1e-3 && (end - 0.5).abs() < 1e-3, "{v:?}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn vol_slice_divergence_examples() {
        let g = torus2(8);
        let grw = SpacetimeModel::grw(e("2 + t^3"), BaseMetric::flat(2), (-1.2, 2.0)).unwrap();
        for t in [-0.5, 0.3, 1.1] {
            let d = grw.vol_slice_divergence(t, &g).unwrap();
            let exact = 2.0 * 3.0 * t * t / (2.0 + t * t * t);
            assert!(d.iter().all(|v| (v - exact).abs() < 1e-14));
        }
        let lapse = SpacetimeModel::custom(2, e("1 + t^2"), [e("1"), e("0"), e("1")], ALL).unwrap();
        let d = lapse.vol_slice_divergence(0.5, &g).unwrap();
        assert!(d.iter().all(|v| (v - 0.5 * 1.0 / 1.25).abs() < 1e-15));
        let prod = SpacetimeModel::lorentzian_product(BaseMetric::flat(2), ALL).unwrap();
        assert!(prod.vol_slice_divergence(3.0, &g).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn slice_mean_curvature_examples() {
        let g = torus1(16);
        let ds = SpacetimeModel::de_sitter(BaseMetric::flat(1));
        assert!(ds.slice_mean_curvature(0.0, &g).unwrap().iter().all(|v| *v == 0.0));
        let stat = SpacetimeModel::standard_static(e("2 + cos(x)"), BaseMetric::flat(1), ALL).unwrap();
        assert!(stat.slice_mean_curvature(0.7, &g).unwrap().iter().all(|v| v.abs() < 1e-15));
        let ex = SpacetimeModel::grw(e("exp(t)"), BaseMetric::flat(1), ALL).unwrap();
        for t in [-2.0, 0.0, 1.5] {
            assert!(ex.slice_mean_curvature(t, &g).unwrap().iter().all(|v| (v.abs() - 1.0).abs() < 1e-14));
        }
    }

    #[test]
    fn transition_level_is_maximal_and_meets_necessary_conditions() {
        let m = gaussian();
        let g = torus2(8);
        let v = m.classify_monotonicity((-1.5, 2.5), &g, 1e-10, 33).unwrap();
        let t0 = v.kind.level().unwrap();
        let h = m.slice_mean_curvature(t0, &g).unwrap();
        assert!(h.iter().all(|v| v.abs() < 1e-9));
        let (db, dv) = m.slice_critical_conditions(t0, &g).unwrap();
        assert!(db < 1e-9 && dv < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn eval_gives_valid_slices(t in -1.0f64..2.5, amp in 0.0f64..1.5) {
            let m = SpacetimeModel::twisted(
                e(&format!("2 + tanh(t)^3 * ({amp} + sin(x) * cos(y))")),
                BaseMetric::flat(2),
                (-1.2, 3.0),
            ).unwrap();
            let g = torus2(8);
            let s = m.eval(t, &g).unwrap();
            prop_assert!(s.beta.iter().all(|b| *b > 0.0));
            prop_assert!(g.volume_density(&s.g).is_ok());
        }

        #[test]
        fn verdict_is_stable_under_sample_doubling(b1 in 0.3f64..1.5, b2 in 0.3f64..1.5, shift in -0.5f64..0.5) {
            let m = SpacetimeModel::multiply_warped(
                vec![e(&format!("exp(-0.5 * {b1}^2 * (t - {shift})^2)")), e(&format!("exp(-0.5 * {b2}^2 * (t - {shift})^2)"))],
                vec![0, 1],
                BaseMetric::flat(2),
                ALL,
            ).unwrap();
            let g = torus2(8);
            let a = m.classify_monotonicity((-2.0, 2.0), &g, 1e-10, 21).unwrap();
            let b = m.classify_monotonicity((-2.0, 2.0), &g, 1e-10, 41).unwrap();
            prop_assert_eq!(a.kind.name(), b.kind.name());
            prop_assert!((a.kind.level().unwrap() - shift).abs() < 1e-9);
            prop_assert!((a.kind.level().unwrap() - b.kind.level().unwrap()).abs() < 1e-9);
        }

        #[test]
        fn static_models_classify_static(c in 1.0f64..3.0, k in 1usize..4) {
            let m = SpacetimeModel::standard_static(e(&format!("{c} + 0.5 * sin({k} * x)")), BaseMetric::flat(1), ALL).unwrap();
            let v = m.classify_monotonicity((-3.0, 3.0), &torus1(16), 1e-10, 9).unwrap();
            prop_assert_eq!(v.kind, MonotonicityKind::Static);
        }
    }
}
