//! Discrete Riemannian calculus on periodic structured grids.
//!
//! A fiber is a flat torus chart of dimension 1 or 2 carrying a metric field
//! sampled at nodes. Derivatives are second-order central differences. The
//! divergence is built as the exact negative adjoint of the gradient under the
//! quadrature inner product `<f, h> = sum f h sqrt(det g) dV`, so the discrete
//! divergence theorem holds to rounding error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Values of a scalar field, one per grid node.
pub type ScalarField = Vec<f64>;
/// Contravariant vector components per node. In 1-D only `[0]` is used.
pub type VectorField = Vec<[f64; 2]>;
/// Symmetric 2-tensor per node.
pub type SymTensorField = Vec<Sym>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FiberError {
    #[error("fiber dimension must be 1 or 2, got {0}")]
    UnsupportedDimension(usize),
    #[error("axis {axis} has {size} nodes, at least 8 are required")]
    TooFewNodes { axis: usize, size: usize },
    #[error("axis {axis} has non-positive period {length}")]
    BadLength { axis: usize, length: f64 },
    #[error("field has {found} nodes but the grid has {expected}")]
    ShapeMismatch { expected: usize, found: usize },
    #[error("metric is not positive definite at node {node} (smallest eigenvalue {min_eig:e})")]
    DegenerateMetric { node: usize, min_eig: f64 },
}

/// Symmetric 2x2 matrix stored as (xx, xy, yy). One-dimensional quantities
/// use `xx` alone; every method takes the active dimension explicitly.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Sym {
    pub xx: f64,
    pub xy: f64,
    pub yy: f64,
}

impl Sym {
    pub const fn new(xx: f64, xy: f64, yy: f64) -> Self {
        Sym { xx, xy, yy }
    }

    pub const fn identity() -> Self {
        Sym::new(1.0, 0.0, 1.0)
    }

    pub fn scaled(self, c: f64) -> Self {
        Sym::new(c * self.xx, c * self.xy, c * self.yy)
    }

    pub fn add(self, o: Sym) -> Self {
        Sym::new(self.xx + o.xx, self.xy + o.xy, self.yy + o.yy)
    }

    pub fn sub(self, o: Sym) -> Self {
        Sym::new(self.xx - o.xx, self.xy - o.xy, self.yy - o.yy)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        match (i, j) {
            (0, 0) => self.xx,
            (1, 1) => self.yy,
            _ => self.xy,
        }
    }

    pub fn det(&self, dim: usize) -> f64 {
        if dim == 1 {
            self.xx
        } else {
            self.xx * self.yy - self.xy * self.xy
        }
    }

    pub fn inverse(&self, dim: usize) -> Sym {
        if dim == 1 {
            Sym::new(1.0 / self.xx, 0.0, 0.0)
        } else {
            let d = self.det(2);
            Sym::new(self.yy / d, -self.xy / d, self.xx / d)
        }
    }

    pub fn apply(&self, v: [f64; 2], dim: usize) -> [f64; 2] {
        if dim == 1 {
            [self.xx * v[0], 0.0]
        } else {
            [
                self.xx * v[0] + self.xy * v[1],
                self.xy * v[0] + self.yy * v[1],
            ]
        }
    }

    pub fn quad(&self, v: [f64; 2], dim: usize) -> f64 {
        if dim == 1 {
            self.xx * v[0] * v[0]
        } else {
            self.xx * v[0] * v[0] + 2.0 * self.xy * v[0] * v[1] + self.yy * v[1] * v[1]
        }
    }

    pub fn bilinear(&self, v: [f64; 2], w: [f64; 2], dim: usize) -> f64 {
        let av = self.apply(v, dim);
        av[0] * w[0] + if dim == 2 { av[1] * w[1] } else { 0.0 }
    }

    /// tr(self * other) for two symmetric matrices.
    pub fn contract(&self, o: &Sym, dim: usize) -> f64 {
        if dim == 1 {
            self.xx * o.xx
        } else {
            self.xx * o.xx + 2.0 * self.xy * o.xy + self.yy * o.yy
        }
    }

    /// Rank-one update `self - c v v^T`.
    pub fn minus_outer(&self, c: f64, v: [f64; 2], dim: usize) -> Sym {
        if dim == 1 {
            Sym::new(self.xx - c * v[0] * v[0], 0.0, 0.0)
        } else {
            Sym::new(
                self.xx - c * v[0] * v[0],
                self.xy - c * v[0] * v[1],
                self.yy - c * v[1] * v[1],
            )
        }
    }

    /// (smallest, largest) eigenvalue.
    pub fn eig(&self, dim: usize) -> (f64, f64) {
        if dim == 1 {
            return (self.xx, self.xx);
        }
        let m = 0.5 * (self.xx + self.yy);
        let r = (0.25 * (self.xx - self.yy).powi(2) + self.xy * self.xy).sqrt();
        (m - r, m + r)
    }

    pub fn norm(&self, dim: usize) -> f64 {
        self.contract(self, dim).sqrt()
    }
}

/// Periodic structured grid over a torus chart with `dim` axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberGrid {
    dim: usize,
    sizes: [usize; 2],
    lengths: [f64; 2],
}

impl FiberGrid {
    pub fn new(sizes: &[usize], lengths: &[f64]) -> Result<Self, FiberError> {
        let dim = sizes.len();
        if !(1..=2).contains(&dim) || lengths.len() != dim {
            return Err(FiberError::UnsupportedDimension(dim.max(lengths.len())));
        }
        let mut s = [1usize; 2];
        let mut l = [1.0; 2];
        for axis in 0..dim {
            if sizes[axis] < 8 {
                return Err(FiberError::TooFewNodes { axis, size: sizes[axis] });
            }
            if !(lengths[axis] > 0.0 && lengths[axis].is_finite()) {
                return Err(FiberError::BadLength { axis, length: lengths[axis] });
            }
            s[axis] = sizes[axis];
            l[axis] = lengths[axis];
        }
        Ok(FiberGrid { dim, sizes: s, lengths: l })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes[..self.dim]
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths[..self.dim]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.sizes[axis] as f64
    }

    pub fn spacings(&self) -> [f64; 2] {
        [self.spacing(0), if self.dim == 2 { self.spacing(1) } else { 1.0 }]
    }

    pub fn len(&self) -> usize {
        self.sizes[0] * self.sizes[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Product of the spacings.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim).map(|a| self.spacing(a)).product()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        i + self.sizes[0] * j
    }

    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.sizes[0], k / self.sizes[0])
    }

    pub fn coord(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.ij(k);
        [
            i as f64 * self.spacing(0),
            if self.dim == 2 { j as f64 * self.spacing(1) } else { 0.0 },
        ]
    }

    /// Node reached from `k` by `off` steps along `axis`, wrapping periodically.
    pub fn shift(&self, k: usize, axis: usize, off: isize) -> usize {
        let (i, j) = self.ij(k);
        let n = self.sizes[axis] as isize;
        if axis == 0 {
            self.index((i as isize + off).rem_euclid(n) as usize, j)
        } else {
            self.index(i, (j as isize + off).rem_euclid(n) as usize)
        }
    }

    pub fn shift2(&self, k: usize, di: isize, dj: isize) -> usize {
        self.shift(self.shift(k, 0, di), 1, dj)
    }

    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> ScalarField {
        (0..self.len()).map(|k| f(self.coord(k))).collect()
    }

    pub fn sample_sym(&self, f: impl Fn([f64; 2]) -> Sym) -> SymTensorField {
        (0..self.len()).map(|k| f(self.coord(k))).collect()
    }

    pub fn flat_metric(&self) -> SymTensorField {
        vec![Sym::identity(); self.len()]
    }

    fn check_len(&self, n: usize) -> Result<(), FiberError> {
        if n != self.len() {
            return Err(FiberError::ShapeMismatch { expected: self.len(), found: n });
        }
        Ok(())
    }

    /// Validates a metric field and returns sqrt(det g) per node.
    pub fn volume_density(&self, g: &[Sym]) -> Result<ScalarField, FiberError> {
        self.check_len(g.len())?;
        g.iter()
            .enumerate()
            .map(|(node, m)| {
                let (min_eig, _) = m.eig(self.dim);
                if !(min_eig > 0.0) || !min_eig.is_finite() {
                    return Err(FiberError::DegenerateMetric { node, min_eig });
                }
                Ok(m.det(self.dim).sqrt())
            })
            .collect()
    }

    /// Central difference of `f` along `axis`.
    pub fn partial(&self, f: &[f64], axis: usize) -> ScalarField {
        let inv = 0.5 / self.spacing(axis);
        (0..self.len())
            .map(|k| (f[self.shift(k, axis, 1)] - f[self.shift(k, axis, -1)]) * inv)
            .collect()
    }

    /// Coordinate differential `(d_1 f, d_2 f)` per node.
    pub fn differential(&self, f: &[f64]) -> VectorField {
        let dx = self.partial(f, 0);
        let dy = if self.dim == 2 { self.partial(f, 1) } else { vec![0.0; self.len()] };
        dx.into_iter().zip(dy).map(|(a, b)| [a, b]).collect()
    }

    /// Metric gradient `g^{ij} d_j f`.
    pub fn gradient(&self, f: &[f64], g: &[Sym]) -> Result<VectorField, FiberError> {
        self.check_len(f.len())?;
        self.volume_density(g)?;
        let df = self.differential(f);
        Ok(df
            .iter()
            .zip(g)
            .map(|(d, m)| m.inverse(self.dim).apply(*d, self.dim))
            .collect())
    }

    /// `(1/sqrt g) d_a (sqrt g X^a)` with the same central stencil as the
    /// gradient, which makes it the exact negative adjoint.
    pub fn divergence(&self, x: &[[f64; 2]], g: &[Sym]) -> Result<ScalarField, FiberError> {
        self.check_len(x.len())?;
        let rho = self.volume_density(g)?;
        let mut out = vec![0.0; self.len()];
        for axis in 0..self.dim {
            let flux: Vec<f64> = x.iter().zip(&rho).map(|(v, r)| r * v[axis]).collect();
            let d = self.partial(&flux, axis);
            for (o, v) in out.iter_mut().zip(d) {
                *o += v;
            }
        }
        for (o, r) in out.iter_mut().zip(&rho) {
            *o /= r;
        }
        Ok(out)
    }

    pub fn laplace_beltrami(&self, f: &[f64], g: &[Sym]) -> Result<ScalarField, FiberError> {
        let grad = self.gradient(f, g)?;
        self.divergence(&grad, g)
    }

    /// Node sum of `f sqrt(det g)` times the cell volume.
    pub fn integrate(&self, f: &[f64], g: &[Sym]) -> Result<f64, FiberError> {
        self.check_len(f.len())?;
        let rho = self.volume_density(g)?;
        Ok(f.iter().zip(&rho).map(|(a, r)| a * r).sum::<f64>() * self.cell_volume())
    }

    /// Quadrature inner product of two scalar fields.
    pub fn inner(&self, f: &[f64], h: &[f64], g: &[Sym]) -> Result<f64, FiberError> {
        let prod: Vec<f64> = f.iter().zip(h).map(|(a, b)| a * b).collect();
        self.integrate(&prod, g)
    }
}

pub fn max_abs(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn mean(f: &[f64]) -> f64 {
    f.iter().sum::<f64>() / f.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn torus(n: usize) -> FiberGrid {
        FiberGrid::new(&[n], &[2.0 * PI]).unwrap()
    }

    #[test]
    fn rejects_small_or_bad_grids() {
        assert!(matches!(
            FiberGrid::new(&[4], &[1.0]),
            Err(FiberError::TooFewNodes { .. })
        ));
        assert!(FiberGrid::new(&[16], &[0.0]).is_err());
        assert!(FiberGrid::new(&[8, 8, 8], &[1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn periodic_indexing_wraps() {
        let g = FiberGrid::new(&[8, 10], &[1.0, 2.0]).unwrap();
        let k = g.index(7, 9);
        assert_eq!(g.shift(k, 0, 1), g.index(0, 9));
        assert_eq!(g.shift(k, 1, 1), g.index(7, 0));
        assert_eq!(g.shift(g.index(0, 0), 0, -1), g.index(7, 0));
    }

    #[test]
    fn gradient_of_sine_is_second_order() {
        let l = 3.0;
        let k = 2.0 * PI / l;
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let g = FiberGrid::new(&[n], &[l]).unwrap();
            let f = g.sample(|x| (k * x[0]).sin());
            let grad = g.gradient(&f, &g.flat_metric()).unwrap();
            let e = (0..g.len())
                .map(|i| (grad[i][0] - k * (k * g.coord(i)[0]).cos()).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.9, "{errs:?}");
        }
    }

    #[test]
    fn gradient_of_constant_vanishes_exactly() {
        let g = FiberGrid::new(&[12, 9], &[1.0, 2.0]).unwrap();
        let metric = g.sample_sym(|x| Sym::new(2.0 + x[0].sin(), 0.3, 1.5));
        let grad = g.gradient(&vec![4.2; g.len()], &metric).unwrap();
        assert!(grad.iter().all(|v| v[0] == 0.0 && v[1] == 0.0));
    }

    #[test]
    fn scaled_metric_scales_gradient() {
        let g = torus(32);
        let f = g.sample(|x| x[0].sin());
        let a = g.gradient(&f, &g.flat_metric()).unwrap();
        let b = g.gradient(&f, &vec![Sym::identity().scaled(4.0); g.len()]).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((q[0] - 0.25 * p[0]).abs() < 1e-15);
        }
    }

    #[test]
    fn laplacian_of_sine() {
        let mut errs = Vec::new();
        for n in [32, 64, 128] {
            let g = torus(n);
            let f = g.sample(|x| (3.0 * x[0]).sin());
            let lap = g.laplace_beltrami(&f, &g.flat_metric()).unwrap();
            errs.push(
                (0..n)
                    .map(|i| (lap[i] + 9.0 * f[i]).abs())
                    .fold(0.0, f64::max),
            );
        }
        for w in errs.windows(2) {
            assert!((w[0] / w[1]).log2() > 1.9, "{errs:?}");
        }
    }

    #[test]
    fn integrate_constants_and_densities() {
        let g = FiberGrid::new(&[16, 24], &[2.0, 3.0]).unwrap();
        assert!((g.integrate(&vec![1.0; g.len()], &g.flat_metric()).unwrap() - 6.0).abs() < 1e-14);
        let t = FiberGrid::new(&[20], &[1.5]).unwrap();
        let c2 = vec![Sym::new(9.0, 0.0, 0.0); t.len()];
        assert!((t.integrate(&vec![1.0; t.len()], &c2).unwrap() - 4.5).abs() < 1e-14);
        let s = t.sample(|x| (2.0 * PI * x[0] / 1.5).sin());
        assert!(t.integrate(&s, &t.flat_metric()).unwrap().abs() < 1e-15);
    }

    #[test]
    fn degenerate_metric_is_rejected() {
        let g = torus(16);
        let mut m = g.flat_metric();
        m[5] = Sym::new(-1.0, 0.0, 0.0);
        assert_eq!(
            g.integrate(&vec![1.0; 16], &m),
            Err(FiberError::DegenerateMetric { node: 5, min_eig: -1.0 })
        );
        let f = vec![0.0; 16];
        assert!(g.gradient(&f, &m).is_err());
    }

    #[test]
    fn zero_field_has_zero_divergence() {
        let g = FiberGrid::new(&[8, 8], &[1.0, 1.0]).unwrap();
        let d = g.divergence(&vec![[0.0; 2]; 64], &g.flat_metric()).unwrap();
        assert!(d.iter().all(|v| *v == 0.0));
    }

    fn random_metric(g: &FiberGrid, c: &[f64]) -> SymTensorField {
        g.sample_sym(|x| {
            let a = 1.5 + 0.5 * (x[0] * c[0] + c[1]).sin();
            let b = 1.2 + 0.4 * (x[1] * c[2] + x[0]).cos();
            let o = 0.3 * (x[0] + x[1] * c[3]).sin();
            Sym::new(a, o, b)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn divergence_theorem_holds(
            vals in proptest::collection::vec(-10.0f64..10.0, 2 * 12 * 10),
            c in proptest::collection::vec(0.0f64..3.0, 4),
        ) {
            let g = FiberGrid::new(&[12, 10], &[2.0 * PI, 2.0 * PI]).unwrap();
            let x: VectorField = vals.chunks(2).map(|p| [p[0], p[1]]).collect();
            let m = random_metric(&g, &c);
            let d = g.divergence(&x, &m).unwrap();
            let scale = g.integrate(&d.iter().map(|v| v.abs()).collect::<Vec<_>>(), &m).unwrap();
            prop_assert!(g.integrate(&d, &m).unwrap().abs() < 1e-13 * scale.max(1.0));
        }

        #[test]
        fn laplacian_is_self_adjoint_and_nonpositive(
            f in proptest::collection::vec(-1.0f64..1.0, 9 * 11),
            h in proptest::collection::vec(-1.0f64..1.0, 9 * 11),
            c in proptest::collection::vec(0.0f64..3.0, 4),
        ) {
            let g = FiberGrid::new(&[9, 11], &[1.0, 2.0]).unwrap();
            let m = random_metric(&g, &c);
            let lf = g.laplace_beltrami(&f, &m).unwrap();
            let lh = g.laplace_beltrami(&h, &m).unwrap();
            let a = g.inner(&lf, &h, &m).unwrap();
            let b = g.inner(&f, &lh, &m).unwrap();
            let norms = g.inner(&lf, &lf, &m).unwrap().sqrt() * g.inner(&h, &h, &m).unwrap().sqrt()
                + g.inner(&f, &f, &m).unwrap().sqrt() * g.inner(&lh, &lh, &m).unwrap().sqrt();
            prop_assert!((a - b).abs() < 1e-10 * norms.max(1e-300));
            prop_assert!(g.inner(&lf, &f, &m).unwrap() <= 1e-12 * norms.max(1.0));
        }

        #[test]
        fn laplacian_integrates_to_zero_1d(f in proptest::collection::vec(-5.0f64..5.0, 17)) {
            let g = FiberGrid::new(&[17], &[2.5]).unwrap();
            let m = g.flat_metric();
            let l = g.laplace_beltrami(&f, &m).unwrap();
            prop_assert!(g.integrate(&l, &m).unwrap().abs() < 1e-12);
        }
    }
}
