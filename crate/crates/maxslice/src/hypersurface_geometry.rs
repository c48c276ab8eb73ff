//! Spacelike graphs `t = u(x)` and their extrinsic geometry.
//!
//! Coordinates on spacetime are `(t, x^1, .., x^n)`. The graph tangents are
//! `E_i = d_i u d_t + d_i` and the unit normal is future pointing,
//! `N = a (d_t + beta grad_g u)` with `a = 1 / sqrt(beta (1 - beta |du|_g^2))`,
//! so `<N, d_t> = -sqrt(beta) cosh(theta) < 0`. Mean curvature is
//! `H = -(1/n) tr A` with `A X = -D_X N`. With these choices the mean
//! curvature of a slice is `tr(g^-1 d_t g) / (2 n sqrt(beta))`, i.e. the sign
//! relating the two expressions is +1 ([`CONVENTION_SIGN`]).

use rayon::prelude::*;
use thiserror::Error;

use crate::fiber_calculus::{FiberError, FiberGrid, ScalarField, Sym, SymTensorField, VectorField};
use crate::spacetime_models::{ModelError, SpacetimeModel};

/// Global sign between the Weingarten trace and the slice formula.
pub const CONVENTION_SIGN: f64 = 1.0;

/// Below this value of `1 - beta |du|_g^2` the normal is considered degenerate.
pub const MARGIN_FLOOR: f64 = 1e-12;

/// Relative size of `|N^perp|^2` below which the `d_t g (v, v)` term is dropped.
pub const PERP_CUTOFF: f64 = 1e-12;

/// Rows with at least this many nodes are processed in parallel.
const PAR_THRESHOLD: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("graph value {t} at node {node} is outside the time interval")]
    OutOfInterval { node: usize, t: f64 },
    #[error("graph is not spacelike at node {node} (induced metric eigenvalue {margin:e})")]
    NotSpacelike { node: usize, margin: f64 },
    #[error("graph is nearly null at node {node} (1 - beta|du|^2 = {margin:e})")]
    IllConditioned { node: usize, margin: f64 },
    #[error("field has {found} nodes, grid has {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error(transparent)]
    Fiber(#[from] FiberError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Value, central first derivatives and compact second derivatives of a
/// grid function at one node.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 2],
    pub hess: Sym,
}

pub fn jets(grid: &FiberGrid, u: &[f64]) -> Vec<Jet> {
    (0..grid.len()).map(|k| jet_at(grid, u, k)).collect()
}

pub fn jet_at(grid: &FiberGrid, u: &[f64], k: usize) -> Jet {
    let hx = grid.spacing(0);
    let (xp, xm) = (u[grid.shift(k, 0, 1)], u[grid.shift(k, 0, -1)]);
    let c = u[k];
    let mut jet = Jet {
        value: c,
        grad: [(xp - xm) / (2.0 * hx), 0.0],
        hess: Sym::new((xp - 2.0 * c + xm) / (hx * hx), 0.0, 0.0),
    };
    if grid.dim() == 2 {
        let hy = grid.spacing(1);
        let (yp, ym) = (u[grid.shift(k, 1, 1)], u[grid.shift(k, 1, -1)]);
        jet.grad[1] = (yp - ym) / (2.0 * hy);
        jet.hess.yy = (yp - 2.0 * c + ym) / (hy * hy);
        jet.hess.xy = (u[grid.shift2(k, 1, 1)] - u[grid.shift2(k, 1, -1)] - u[grid.shift2(k, -1, 1)]
            + u[grid.shift2(k, -1, -1)])
            / (4.0 * hx * hy);
    }
    jet
}

/// Ambient metric data at `(t, x_k)`: values, t-derivatives, and spatial
/// derivatives by central differences across neighbouring grid nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LocalData {
    pub beta: f64,
    pub dbeta_t: f64,
    pub dbeta_x: [f64; 2],
    pub g: Sym,
    pub dg_t: Sym,
    pub dg_x: [Sym; 2],
}

/// Evaluates [`LocalData`] at node `k` and time `t`. With `weight`, the
/// metric is multiplied by the node values `weight[k]` (a conformal factor
/// sampled on the grid).
pub fn local_data(
    model: &SpacetimeModel,
    grid: &FiberGrid,
    k: usize,
    t: f64,
    weight: Option<&[f64]>,
) -> LocalData {
    let w = |node: usize| weight.map_or(1.0, |w| w[node]);
    let p = model.point(t, grid.coord(k));
    let wk = w(k);
    let mut ld = LocalData {
        beta: wk * p.beta,
        dbeta_t: wk * p.dbeta,
        dbeta_x: [0.0; 2],
        g: p.g.scaled(wk),
        dg_t: p.dg.scaled(wk),
        dg_x: [Sym::default(); 2],
    };
    for axis in 0..grid.dim() {
        let kp = grid.shift(k, axis, 1);
        let km = grid.shift(k, axis, -1);
        let (bp, gp) = model.beta_metric(t, grid.coord(kp));
        let (bm, gm) = model.beta_metric(t, grid.coord(km));
        let inv = 0.5 / grid.spacing(axis);
        ld.dbeta_x[axis] = (w(kp) * bp - w(km) * bm) * inv;
        ld.dg_x[axis] = gp.scaled(w(kp)).sub(gm.scaled(w(km))).scaled(inv);
    }
    ld
}

/// Pointwise normal data for a graph jet.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NormalData {
    /// `a = N^t`
    pub a: f64,
    /// Fiber part `V = beta a g^-1 du` of the normal (the `N^perp` direction).
    pub v: [f64; 2],
    /// `1 - beta |du|_g^2`, positive exactly on spacelike points.
    pub margin: f64,
    /// Induced metric `g - beta du du`.
    pub induced: Sym,
}

impl NormalData {
    pub fn new(dim: usize, ld: &LocalData, du: [f64; 2]) -> Self {
        let gdu = ld.g.inverse(dim).apply(du, dim);
        let q = ld.beta * (du[0] * gdu[0] + du[1] * gdu[1]);
        let margin = 1.0 - q;
        let a = 1.0 / (ld.beta * margin).sqrt();
        let ba = ld.beta * a;
        NormalData {
            a,
            v: [ba * gdu[0], ba * gdu[1]],
            margin,
            induced: ld.g.minus_outer(ld.beta, du, dim),
        }
    }

    pub fn cosh_theta(&self, ld: &LocalData) -> f64 {
        ld.beta.sqrt() * self.a
    }

    pub fn sinh2_theta(&self, ld: &LocalData) -> f64 {
        ld.beta * self.a * self.a - 1.0
    }
}

/// Christoffel symbols of the first kind `Gamma_{l,mn}` of the ambient
/// metric, index 0 being t.
fn christoffel(dim: usize, ld: &LocalData) -> [[[f64; 3]; 3]; 3] {
    let m = dim + 1;
    // d[mu][l][n] = d_mu gbar_{l n}
    let mut d = [[[0.0; 3]; 3]; 3];
    d[0][0][0] = -ld.dbeta_t;
    for i in 0..dim {
        for j in 0..dim {
            d[0][i + 1][j + 1] = ld.dg_t.get(i, j);
        }
    }
    for a in 0..dim {
        d[a + 1][0][0] = -ld.dbeta_x[a];
        for i in 0..dim {
            for j in 0..dim {
                d[a + 1][i + 1][j + 1] = ld.dg_x[a].get(i, j);
            }
        }
    }
    let mut gam = [[[0.0; 3]; 3]; 3];
    for l in 0..m {
        for mu in 0..m {
            for nu in 0..m {
                gam[l][mu][nu] = 0.5 * (d[mu][l][nu] + d[nu][l][mu] - d[l][mu][nu]);
            }
        }
    }
    gam
}

fn tangent(du: [f64; 2], i: usize) -> [f64; 3] {
    let mut e = [du[i], 0.0, 0.0];
    e[i + 1] = 1.0;
    e
}

/// Mean curvature at one node from the second fundamental form
/// `h_ij = <N, D_{E_i} E_j>`, using the compact second derivatives of the jet.
pub fn mean_curvature_at(dim: usize, ld: &LocalData, jet: &Jet) -> f64 {
    let nd = NormalData::new(dim, ld, jet.grad);
    let nvec = [nd.a, nd.v[0], nd.v[1]];
    let n_t = -ld.beta * nd.a;
    let gam = christoffel(dim, ld);
    let m = dim + 1;
    let gu_inv = nd.induced.inverse(dim);
    let mut trace = 0.0;
    for i in 0..dim {
        let ei = tangent(jet.grad, i);
        for j in 0..dim {
            let ej = tangent(jet.grad, j);
            let mut h = n_t * jet.hess.get(i, j);
            for l in 0..m {
                for mu in 0..m {
                    for nu in 0..m {
                        h += nvec[l] * gam[l][mu][nu] * ei[mu] * ej[nu];
                    }
                }
            }
            trace += gu_inv.get(i, j) * h;
        }
    }
    -trace / dim as f64
}

/// Unit normal split into its t-component and fiber part, plus cosh(theta).
#[derive(Clone, Debug, PartialEq)]
pub struct NormalField {
    pub time: ScalarField,
    pub fiber: VectorField,
    pub cosh_theta: ScalarField,
}

/// Tangent-space description of a variation `xi = xi^t d_t + xi^i d_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct VariationField {
    pub time: ScalarField,
    pub fiber: VectorField,
}

impl VariationField {
    pub fn time_translation(len: usize) -> Self {
        VariationField { time: vec![1.0; len], fiber: vec![[0.0; 2]; len] }
    }

    /// `phi N` for a scalar `phi` on the graph.
    pub fn normal(graph: &SpacelikeGraph<'_>, phi: &[f64]) -> Self {
        let nf = graph.normal_field();
        VariationField {
            time: nf.time.iter().zip(phi).map(|(n, p)| n * p).collect(),
            fiber: nf.fiber.iter().zip(phi).map(|(n, p)| [n[0] * p, n[1] * p]).collect(),
        }
    }

    /// `sum_i c^i E_i` for fiber components `c`.
    pub fn tangential(graph: &SpacelikeGraph<'_>, c: &[[f64; 2]]) -> Self {
        let dim = graph.grid().dim();
        VariationField {
            time: graph
                .jets
                .iter()
                .zip(c)
                .map(|(j, c)| (0..dim).map(|i| j.grad[i] * c[i]).sum())
                .collect(),
            fiber: c.to_vec(),
        }
    }
}

/// Result of evaluating the maximal-graph expression for the Laplacian of t.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplacianFormula {
    pub values: ScalarField,
    /// Largest |H| seen; the expression assumes H = 0.
    pub max_abs_mean_curvature: f64,
    /// True when `max_abs_mean_curvature` exceeds the maximality tolerance.
    pub not_maximal: bool,
    /// `n H cosh(theta) / sqrt(beta)`, the extra term valid for any graph.
    pub curvature_term: ScalarField,
}

/// Two sides of `grad_{g_u} u = -(1/beta) (d_t)^T`, fiber components.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientRelation {
    pub lhs: VectorField,
    pub rhs: VectorField,
    pub max_deviation: f64,
}

/// Induced metric and spacelike margin of an arbitrary (possibly
/// non-spacelike) graph.
#[derive(Clone, Debug, PartialEq)]
pub struct InducedMetric {
    pub metric: SymTensorField,
    /// Smallest eigenvalue of the induced metric per node.
    pub margin: ScalarField,
}

pub fn induced_metric(
    model: &SpacetimeModel,
    grid: &FiberGrid,
    u: &[f64],
) -> Result<InducedMetric, GeometryError> {
    check_values(model, grid, u)?;
    let dim = grid.dim();
    let metric: SymTensorField = (0..grid.len())
        .map(|k| {
            let (beta, g) = model.beta_metric(u[k], grid.coord(k));
            g.minus_outer(beta, jet_at(grid, u, k).grad, dim)
        })
        .collect();
    let margin = metric.iter().map(|m| m.eig(dim).0).collect();
    Ok(InducedMetric { metric, margin })
}

fn check_values(model: &SpacetimeModel, grid: &FiberGrid, u: &[f64]) -> Result<(), GeometryError> {
    if u.len() != grid.len() {
        return Err(GeometryError::ShapeMismatch { expected: grid.len(), found: u.len() });
    }
    if model.dim() != grid.dim() {
        return Err(ModelError::InvalidModel("model and grid dimensions differ".into()).into());
    }
    if let Some(node) = u.iter().position(|t| !model.contains(*t)) {
        return Err(GeometryError::OutOfInterval { node, t: u[node] });
    }
    Ok(())
}

fn map_nodes<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    if n >= PAR_THRESHOLD {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// A spacelike graph with cached jets and ambient data.
#[derive(Clone, Debug)]
pub struct SpacelikeGraph<'m> {
    model: &'m SpacetimeModel,
    grid: FiberGrid,
    u: ScalarField,
    jets: Vec<Jet>,
    local: Vec<LocalData>,
    normals: Vec<NormalData>,
}

impl<'m> SpacelikeGraph<'m> {
    pub fn new(model: &'m SpacetimeModel, grid: &FiberGrid, u: ScalarField) -> Result<Self, GeometryError> {
        check_values(model, grid, &u)?;
        let dim = grid.dim();
        let jets = jets(grid, &u);
        let local = map_nodes(grid.len(), |k| local_data(model, grid, k, u[k], None));
        let normals: Vec<NormalData> = (0..grid.len())
            .map(|k| NormalData::new(dim, &local[k], jets[k].grad))
            .collect();
        for (node, nd) in normals.iter().enumerate() {
            let eig = nd.induced.eig(dim).0;
            if !(nd.margin > 0.0) || !(eig > 0.0) {
                return Err(GeometryError::NotSpacelike { node, margin: eig });
            }
        }
        Ok(SpacelikeGraph { model, grid: *grid, u, jets, local, normals })
    }

    pub fn model(&self) -> &'m SpacetimeModel {
        self.model
    }

    pub fn grid(&self) -> &FiberGrid {
        &self.grid
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn into_values(self) -> ScalarField {
        self.u
    }

    pub fn jets(&self) -> &[Jet] {
        &self.jets
    }

    pub fn local(&self) -> &[LocalData] {
        &self.local
    }

    pub fn normal_data(&self) -> &[NormalData] {
        &self.normals
    }

    pub fn induced_metric(&self) -> SymTensorField {
        self.normals.iter().map(|n| n.induced).collect()
    }

    /// Smallest eigenvalue of the induced metric per node.
    pub fn margin(&self) -> ScalarField {
        let dim = self.grid.dim();
        self.normals.iter().map(|n| n.induced.eig(dim).0).collect()
    }

    pub fn min_margin(&self) -> f64 {
        self.margin().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn normal_field(&self) -> NormalField {
        NormalField {
            time: self.normals.iter().map(|n| n.a).collect(),
            fiber: self.normals.iter().map(|n| n.v).collect(),
            cosh_theta: self.normals.iter().zip(&self.local).map(|(n, l)| n.cosh_theta(l)).collect(),
        }
    }

    /// Largest violation of `<N,N> = -1` and `<N,E_i> = 0`.
    pub fn normal_constraint_residual(&self) -> f64 {
        let dim = self.grid.dim();
        let mut worst = 0.0f64;
        for ((nd, ld), jet) in self.normals.iter().zip(&self.local).zip(&self.jets) {
            let nn = -ld.beta * nd.a * nd.a + ld.g.quad(nd.v, dim);
            worst = worst.max((nn + 1.0).abs());
            for i in 0..dim {
                let mut e = [0.0; 2];
                e[i] = 1.0;
                let ne = -ld.beta * nd.a * jet.grad[i] + ld.g.bilinear(nd.v, e, dim);
                worst = worst.max(ne.abs());
            }
        }
        worst
    }

    fn check_conditioning(&self) -> Result<(), GeometryError> {
        for (node, nd) in self.normals.iter().enumerate() {
            if nd.margin < MARGIN_FLOOR {
                return Err(GeometryError::IllConditioned { node, margin: nd.margin });
            }
        }
        Ok(())
    }

    /// Mean curvature per node from the second fundamental form.
    pub fn mean_curvature(&self) -> Result<ScalarField, GeometryError> {
        self.check_conditioning()?;
        let dim = self.grid.dim();
        Ok(self
            .local
            .iter()
            .zip(&self.jets)
            .map(|(ld, j)| mean_curvature_at(dim, ld, j))
            .collect())
    }

    /// Mean curvature by differentiating the sampled normal field along the
    /// graph tangents: `H = (1/n) g_u^{ij} <D_{E_i} N, E_j>`. Uses central
    /// differences of N, so it is an independent O(h^2) route.
    pub fn mean_curvature_from_normal(&self) -> Result<ScalarField, GeometryError> {
        self.check_conditioning()?;
        let dim = self.grid.dim();
        let comps: Vec<ScalarField> = (0..=dim)
            .map(|s| {
                self.normals
                    .iter()
                    .map(|n| if s == 0 { n.a } else { n.v[s - 1] })
                    .collect()
            })
            .collect();
        // dn[axis][sigma][node]
        let dn: Vec<Vec<ScalarField>> = (0..dim)
            .map(|axis| comps.iter().map(|c| self.grid.partial(c, axis)).collect())
            .collect();
        Ok((0..self.grid.len())
            .map(|k| {
                let ld = &self.local[k];
                let nd = &self.normals[k];
                let du = self.jets[k].grad;
                let gam = christoffel(dim, ld);
                let nvec = [nd.a, nd.v[0], nd.v[1]];
                let gu_inv = nd.induced.inverse(dim);
                let mut trace = 0.0;
                for i in 0..dim {
                    let ei = tangent(du, i);
                    for j in 0..dim {
                        let ej = tangent(du, j);
                        let mut w = -ld.beta * dn[i][0][k] * ej[0];
                        for a in 0..dim {
                            for b in 0..dim {
                                w += ld.g.get(a, b) * dn[i][a + 1][k] * ej[b + 1];
                            }
                        }
                        for r in 0..=dim {
                            for mu in 0..=dim {
                                for nu in 0..=dim {
                                    w += gam[r][mu][nu] * ej[r] * ei[mu] * nvec[nu];
                                }
                            }
                        }
                        trace += gu_inv.get(i, j) * w;
                    }
                }
                trace / dim as f64
            })
            .collect())
    }

    /// Laplace-Beltrami of u with respect to the induced metric.
    pub fn laplacian_t_direct(&self) -> Result<ScalarField, GeometryError> {
        Ok(self.grid.laplace_beltrami(&self.u, &self.induced_metric())?)
    }

    /// Closed-form Laplacian of t on a maximal graph:
    /// `(1/beta^2) (d_t)^T beta - (1/beta) [d_t log vol - sinh^2(theta) d_t beta / (2 beta) + (d_t g)(v, v) / 2]`.
    /// The value is returned even when the graph is not maximal; the flag
    /// and `curvature_term` describe the discrepancy.
    pub fn laplacian_t_formula(&self, maximality_tol: f64) -> Result<LaplacianFormula, GeometryError> {
        let h = self.mean_curvature()?;
        let dim = self.grid.dim();
        let n = dim as f64;
        let bracket = self.sign_bracket();
        let mut values = Vec::with_capacity(self.grid.len());
        let mut curvature_term = Vec::with_capacity(self.grid.len());
        for k in 0..self.grid.len() {
            let ld = &self.local[k];
            let nd = &self.normals[k];
            let s2 = nd.sinh2_theta(ld);
            let beta = ld.beta;
            let v_dbeta = nd.v[0] * ld.dbeta_x[0] + nd.v[1] * ld.dbeta_x[1];
            let tan_dbeta = -s2 * ld.dbeta_t - beta * nd.a * v_dbeta;
            values.push(tan_dbeta / (beta * beta) - bracket[k] / beta);
            curvature_term.push(n * h[k] * nd.cosh_theta(ld) / beta.sqrt());
        }
        let max_h = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Ok(LaplacianFormula {
            values,
            max_abs_mean_curvature: max_h,
            not_maximal: max_h > maximality_tol,
            curvature_term,
        })
    }

    /// `d_t log vol - sinh^2(theta) d_t beta / (2 beta) + (d_t g)(v, v) / 2`.
    ///
    /// Every term is non-negative in a non-contracting model and
    /// non-positive in a non-expanding one. The conformal rescaling that turns
    /// this sign into sub/superharmonicity needs hypersurface dimension ≥ 3,
    /// beyond the fibers handled here, so only the bracket is exposed.
    pub fn sign_bracket(&self) -> ScalarField {
        let dim = self.grid.dim();
        self.local
            .iter()
            .zip(&self.normals)
            .map(|(ld, nd)| {
                let dlogvol = 0.5 * ld.g.inverse(dim).contract(&ld.dg_t, dim);
                let vv = ld.g.quad(nd.v, dim);
                let quad = if vv < PERP_CUTOFF * ld.beta { 0.0 } else { ld.dg_t.quad(nd.v, dim) };
                dlogvol - 0.5 * nd.sinh2_theta(ld) * ld.dbeta_t / ld.beta + 0.5 * quad
            })
            .collect()
    }

    /// Both sides of the gradient relation for t restricted to the graph.
    pub fn gradient_relation(&self) -> Result<GradientRelation, GeometryError> {
        let lhs = self.grid.gradient(&self.u, &self.induced_metric())?;
        let dim = self.grid.dim();
        // (d_t)^T = d_t - beta a N has fiber part -beta a V.
        let rhs: VectorField = self
            .normals
            .iter()
            .map(|nd| [nd.a * nd.v[0], if dim == 2 { nd.a * nd.v[1] } else { 0.0 }])
            .collect();
        let max_deviation = lhs
            .iter()
            .zip(&rhs)
            .map(|(l, r)| (l[0] - r[0]).abs().max((l[1] - r[1]).abs()))
            .fold(0.0, f64::max);
        Ok(GradientRelation { lhs, rhs, max_deviation })
    }

    /// Mean curvature in the rescaled spacetime `e^{2 alpha} gbar` through
    /// `e^alpha H~ = H + <grad alpha, N>` with alpha lifted from the fiber.
    pub fn conformal_mean_curvature(&self, alpha: &[f64]) -> Result<ScalarField, GeometryError> {
        self.check_field(alpha)?;
        let h = self.mean_curvature()?;
        let da = self.grid.differential(alpha);
        Ok((0..self.grid.len())
            .map(|k| {
                let v = self.normals[k].v;
                (-alpha[k]).exp() * (h[k] + v[0] * da[k][0] + v[1] * da[k][1])
            })
            .collect())
    }

    /// Same quantity computed from scratch in the rescaled spacetime.
    pub fn conformal_mean_curvature_direct(&self, alpha: &[f64]) -> Result<ScalarField, GeometryError> {
        self.check_field(alpha)?;
        self.check_conditioning()?;
        let w: Vec<f64> = alpha.iter().map(|a| (2.0 * a).exp()).collect();
        let dim = self.grid.dim();
        Ok((0..self.grid.len())
            .map(|k| {
                let ld = local_data(self.model, &self.grid, k, self.u[k], Some(&w));
                mean_curvature_at(dim, &ld, &self.jets[k])
            })
            .collect())
    }

    fn check_field(&self, f: &[f64]) -> Result<(), GeometryError> {
        if f.len() != self.grid.len() {
            return Err(GeometryError::ShapeMismatch { expected: self.grid.len(), found: f.len() });
        }
        Ok(())
    }

    pub fn volume(&self) -> Result<f64, GeometryError> {
        Ok(self.grid.integrate(&vec![1.0; self.grid.len()], &self.induced_metric())?)
    }

    /// `dV/ds = int (div X - n H <xi, N>)` where `X` is the tangential part of
    /// `xi` in graph coordinates.
    pub fn first_variation(&self, xi: &VariationField) -> Result<f64, GeometryError> {
        self.check_field(&xi.time)?;
        let dim = self.grid.dim();
        let h = self.mean_curvature()?;
        let mut tangential = Vec::with_capacity(self.grid.len());
        let mut normal = Vec::with_capacity(self.grid.len());
        for k in 0..self.grid.len() {
            let ld = &self.local[k];
            let nd = &self.normals[k];
            let xn = -ld.beta * nd.a * xi.time[k] + ld.g.bilinear(xi.fiber[k], nd.v, dim);
            tangential.push([xi.fiber[k][0] + xn * nd.v[0], xi.fiber[k][1] + xn * nd.v[1]]);
            normal.push(-(dim as f64) * h[k] * xn);
        }
        let gu = self.induced_metric();
        let div = self.grid.divergence(&tangential, &gu)?;
        let integrand: Vec<f64> = div.iter().zip(&normal).map(|(d, n)| d + n).collect();
        Ok(self.grid.integrate(&integrand, &gu)?)
    }

    /// Central difference of the discrete volume along the graph shift
    /// `delta u = xi^t - du(xi_F)` induced by `xi`.
    pub fn first_variation_fd(&self, xi: &VariationField, step: f64) -> Result<f64, GeometryError> {
        self.check_field(&xi.time)?;
        let du: Vec<f64> = (0..self.grid.len())
            .map(|k| {
                let g = self.jets[k].grad;
                xi.time[k] - g[0] * xi.fiber[k][0] - g[1] * xi.fiber[k][1]
            })
            .collect();
        let shifted = |s: f64| -> Result<f64, GeometryError> {
            let u: Vec<f64> = self.u.iter().zip(&du).map(|(u, d)| u + s * d).collect();
            SpacelikeGraph::new(self.model, &self.grid, u)?.volume()
        };
        Ok((shifted(step)? - shifted(-step)?) / (2.0 * step))
    }
}
