//! Coefficient fields: scalar, vector and symmetric-matrix valued functions
//! of space, backed by analytic closures, constants or node grids.
//!
//! The continuum data may be merely measurable; at desk scale every test
//! coefficient is piecewise smooth, and grid-backed fields use multilinear
//! interpolation. That concession is what makes path simulation meaningful.
//! Evaluation is deterministic and lock-free, so fields are safe to share
//! across workers.

use crate::grid::GridFunction;
use std::sync::Arc;

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Scalar field with optional analytic derivatives.
#[derive(Clone)]
pub struct ScalarField {
    dim: usize,
    kind: ScalarKind,
    grad: Option<VectorFn>,
    /// Row-major d*d Hessian, when available analytically.
    hess: Option<VectorFn>,
}

#[derive(Clone)]
enum ScalarKind {
    Constant(f64),
    Analytic(ScalarFn),
    Grid(Arc<GridFunction>),
}

impl ScalarField {
    pub fn constant(dim: usize, c: f64) -> Self {
        ScalarField { dim, kind: ScalarKind::Constant(c), grad: None, hess: None }
    }

    pub fn analytic(dim: usize, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarField { dim, kind: ScalarKind::Analytic(Arc::new(f)), grad: None, hess: None }
    }

    pub fn with_gradient(
        mut self,
        g: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(g));
        self
    }

    pub fn with_hessian(
        mut self,
        h: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.hess = Some(Arc::new(h));
        self
    }

    pub fn from_grid(g: GridFunction) -> Self {
        let dim = g.dim();
        ScalarField { dim, kind: ScalarKind::Grid(Arc::new(g)), grad: None, hess: None }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ScalarKind::Constant(c) => *c,
            ScalarKind::Analytic(f) => f(x),
            ScalarKind::Grid(g) => g.eval(x),
        }
    }

    pub fn constant_value(&self) -> Option<f64> {
        match &self.kind {
            ScalarKind::Constant(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.kind, ScalarKind::Constant(c) if c == 0.0)
    }

    pub fn has_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        match (&self.grad, &self.kind) {
            (Some(g), _) => {
                g(x, out);
                true
            }
            (None, ScalarKind::Constant(_)) => {
                out.fill(0.0);
                true
            }
            _ => false,
        }
    }

    pub fn hessian_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        match (&self.hess, &self.kind) {
            (Some(h), _) => {
                h(x, out);
                true
            }
            (None, ScalarKind::Constant(_)) => {
                out.fill(0.0);
                true
            }
            _ => false,
        }
    }
}

/// Vector field `x -> R^d`.
#[derive(Clone)]
pub struct VectorField {
    dim: usize,
    kind: VectorKind,
}

#[derive(Clone)]
enum VectorKind {
    Zero,
    Constant(Vec<f64>),
    Analytic(VectorFn),
    Grid(Arc<Vec<GridFunction>>),
}

impl VectorField {
    pub fn zero(dim: usize) -> Self {
        VectorField { dim, kind: VectorKind::Zero }
    }

    pub fn constant(v: Vec<f64>) -> Self {
        VectorField { dim: v.len(), kind: VectorKind::Constant(v) }
    }

    pub fn analytic(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        VectorField { dim, kind: VectorKind::Analytic(Arc::new(f)) }
    }

    pub fn from_grids(grids: Vec<GridFunction>) -> Self {
        let dim = grids.len();
        assert!(grids.iter().all(|g| g.dim() == dim));
        VectorField { dim, kind: VectorKind::Grid(Arc::new(grids)) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        match &self.kind {
            VectorKind::Zero => true,
            VectorKind::Constant(v) => v.iter().all(|&c| c == 0.0),
            _ => false,
        }
    }

    pub fn constant_value(&self) -> Option<Vec<f64>> {
        match &self.kind {
            VectorKind::Zero => Some(vec![0.0; self.dim]),
            VectorKind::Constant(v) => Some(v.clone()),
            _ => None,
        }
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            VectorKind::Zero => out.fill(0.0),
            VectorKind::Constant(v) => out.copy_from_slice(v),
            VectorKind::Analytic(f) => f(x, out),
            VectorKind::Grid(gs) => {
                for (o, g) in out.iter_mut().zip(gs.iter()) {
                    *o = g.eval(x);
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(x, &mut out);
        out
    }
}

/// Symmetric matrix field `x -> R^{d x d}` (row-major), with an optional
/// analytic row divergence `(div a)_i = sum_j d_j a_ij`.
#[derive(Clone)]
pub struct MatrixField {
    dim: usize,
    kind: MatrixKind,
    div_rows: Option<VectorFn>,
}

#[derive(Clone)]
enum MatrixKind {
    Identity,
    Constant(Vec<f64>),
    /// Diagonal entries as scalar fields; off-diagonal zero.
    Diagonal(Arc<Vec<ScalarField>>),
    Analytic(VectorFn),
}

impl MatrixField {
    pub fn identity(dim: usize) -> Self {
        MatrixField { dim, kind: MatrixKind::Identity, div_rows: None }
    }

    /// Constant symmetric matrix, row-major.
    pub fn constant(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim);
        for i in 0..dim {
            for j in 0..i {
                assert!(
                    (data[i * dim + j] - data[j * dim + i]).abs() <= 1e-14,
                    "constant matrix must be symmetric"
                );
            }
        }
        MatrixField { dim, kind: MatrixKind::Constant(data), div_rows: None }
    }

    pub fn diagonal(entries: Vec<ScalarField>) -> Self {
        let dim = entries.len();
        MatrixField { dim, kind: MatrixKind::Diagonal(Arc::new(entries)), div_rows: None }
    }

    /// Analytic field writing the row-major matrix into `out`.
    pub fn analytic(dim: usize, f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        MatrixField { dim, kind: MatrixKind::Analytic(Arc::new(f)), div_rows: None }
    }

    pub fn with_divergence(
        mut self,
        f: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.div_rows = Some(Arc::new(f));
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, MatrixKind::Identity)
    }

    pub fn constant_value(&self) -> Option<Vec<f64>> {
        match &self.kind {
            MatrixKind::Identity => {
                let mut m = vec![0.0; self.dim * self.dim];
                for i in 0..self.dim {
                    m[i * self.dim + i] = 1.0;
                }
                Some(m)
            }
            MatrixKind::Constant(m) => Some(m.clone()),
            _ => None,
        }
    }

    #[inline]
    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        match &self.kind {
            MatrixKind::Identity => {
                out.fill(0.0);
                for i in 0..d {
                    out[i * d + i] = 1.0;
                }
            }
            MatrixKind::Constant(m) => out.copy_from_slice(m),
            MatrixKind::Diagonal(entries) => {
                out.fill(0.0);
                for (i, e) in entries.iter().enumerate() {
                    out[i * d + i] = e.eval(x);
                }
            }
            MatrixKind::Analytic(f) => f(x, out),
        }
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.eval_into(x, &mut out);
        out
    }

    pub fn has_divergence(&self) -> bool {
        self.div_rows.is_some() || matches!(self.kind, MatrixKind::Identity | MatrixKind::Constant(_))
    }

    /// Row divergence: analytic when provided, zero for constant fields,
    /// otherwise `false` (caller falls back to finite differences).
    pub fn divergence_into(&self, x: &[f64], out: &mut [f64]) -> bool {
        if let Some(f) = &self.div_rows {
            f(x, out);
            return true;
        }
        match &self.kind {
            MatrixKind::Identity | MatrixKind::Constant(_) => {
                out.fill(0.0);
                true
            }
            _ => false,
        }
    }
}
