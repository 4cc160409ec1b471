//! Problem data model: coefficient fields, drivers, boundary data, and
//! randomized validation of the standing structural assumptions.

mod fields;
mod validate;

pub use fields::{MatrixField, ScalarField, VectorField};
pub use validate::{
    validate_problem, validate_problem_with, CheckResult, ValidationOptions, ValidationReport,
};

use crate::domain::Domain;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum ProblemError {
    #[error("ellipticity violated at {point:?}: xi'a xi = {value} outside [{lo}, {hi}]")]
    EllipticityViolation { point: Vec<f64>, value: f64, lo: f64, hi: f64 },
    #[error("driver monotonicity violated at {point:?} (margin {margin})")]
    MonotonicityViolation { point: Vec<f64>, margin: f64 },
    #[error("driver z-Lipschitz bound violated at {point:?} (margin {margin})")]
    LipschitzViolation { point: Vec<f64>, margin: f64 },
    #[error("driver growth bound violated at {point:?} (margin {margin})")]
    GrowthViolation { point: Vec<f64>, margin: f64 },
    #[error("matrix field not symmetric at {point:?} (deviation {margin})")]
    AsymmetricMatrix { point: Vec<f64>, margin: f64 },
    #[error("analytic gradient disagrees with finite differences at {point:?} (rel err {margin})")]
    GradientMismatch { point: Vec<f64>, margin: f64 },
    #[error("implicit domain fails the eikonal check at {point:?} (|grad sd| = {margin})")]
    EikonalViolation { point: Vec<f64>, margin: f64 },
    #[error("boundary data jumps by {margin} between nearby boundary samples at {point:?}")]
    BoundaryModulusViolation { point: Vec<f64>, margin: f64 },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

type DriverFn = Arc<dyn Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync>;

/// Semilinear right-hand side `f(x, y, z)` together with its structural
/// constants: a monotonicity field `c1` with
/// `(y1-y2)(f(x,y1,z)-f(x,y2,z)) <= -c1(x)|y1-y2|^2`, a Lipschitz constant in
/// the gradient slot, and a growth constant `C` with `|f| <= C + C|q|`.
#[derive(Clone)]
pub struct Driver {
    f: DriverFn,
    pub monotonicity: ScalarField,
    pub lipschitz_z: f64,
    pub growth: f64,
}

impl Driver {
    pub fn new(
        f: impl Fn(&[f64], f64, &[f64]) -> f64 + Send + Sync + 'static,
        monotonicity: ScalarField,
        lipschitz_z: f64,
        growth: f64,
    ) -> Self {
        Driver { f: Arc::new(f), monotonicity, lipschitz_z, growth }
    }

    pub fn zero(dim: usize) -> Self {
        Driver::new(|_, _, _| 0.0, ScalarField::constant(dim, 0.0), 0.0, 0.0)
    }

    /// Driver depending on position only (used to route linear forcings
    /// through the semilinear machinery).
    pub fn from_forcing(forcing: ScalarField, growth: f64) -> Self {
        let dim = forcing.dim();
        Driver::new(
            move |x, _y, _z| forcing.eval(x),
            ScalarField::constant(dim, 0.0),
            0.0,
            growth,
        )
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: f64, z: &[f64]) -> f64 {
        (self.f)(x, y, z)
    }
}

/// Active datum of the zeroth-order term.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveMode {
    /// `L2 u = -F` with the forcing field active.
    Linear,
    /// `L2 u = -g(x, u, grad u)` with the driver active.
    Semilinear,
}

/// Complete instance of the boundary value problem
/// `1/2 div(a grad u) + b.grad u - div(bhat u) + q u = -f, u|dD = phi`.
///
/// Immutable after construction; all fields are safe for concurrent reads.
#[derive(Clone)]
pub struct EllipticProblem {
    pub dim: usize,
    pub a: MatrixField,
    pub b: VectorField,
    pub bhat: VectorField,
    pub q: ScalarField,
    driver: Option<Driver>,
    forcing: Option<ScalarField>,
    pub phi: ScalarField,
    pub domain: Domain,
    /// Lower ellipticity bound (declared, sample-checked).
    pub lambda: f64,
    /// Upper ellipticity bound.
    pub lambda_max: f64,
}

impl EllipticProblem {
    /// Linear mode: `L2 u = -F`.
    #[allow(clippy::too_many_arguments)]
    pub fn linear(
        a: MatrixField,
        b: VectorField,
        bhat: VectorField,
        q: ScalarField,
        forcing: ScalarField,
        phi: ScalarField,
        domain: Domain,
        lambda: f64,
        lambda_max: f64,
    ) -> Self {
        let dim = domain.dim();
        let p = EllipticProblem {
            dim,
            a,
            b,
            bhat,
            q,
            driver: None,
            forcing: Some(forcing),
            phi,
            domain,
            lambda,
            lambda_max,
        };
        p.check_shape();
        p
    }

    /// Semilinear mode: `L2 u = -g(x, u, grad u)`.
    #[allow(clippy::too_many_arguments)]
    pub fn semilinear(
        a: MatrixField,
        b: VectorField,
        bhat: VectorField,
        q: ScalarField,
        driver: Driver,
        phi: ScalarField,
        domain: Domain,
        lambda: f64,
        lambda_max: f64,
    ) -> Self {
        let dim = domain.dim();
        let p = EllipticProblem {
            dim,
            a,
            b,
            bhat,
            q,
            driver: Some(driver),
            forcing: None,
            phi,
            domain,
            lambda,
            lambda_max,
        };
        p.check_shape();
        p
    }

    fn check_shape(&self) {
        assert!(self.lambda > 0.0 && self.lambda <= self.lambda_max, "need 0 < lambda <= Lambda");
        assert_eq!(self.a.dim(), self.dim);
        assert_eq!(self.b.dim(), self.dim);
        assert_eq!(self.bhat.dim(), self.dim);
        let (lo, hi) = self.domain.bounding_box();
        assert!(
            lo.iter().chain(hi.iter()).all(|v| v.is_finite()),
            "domain must have a finite bounding box"
        );
    }

    pub fn mode(&self) -> SolveMode {
        if self.driver.is_some() {
            SolveMode::Semilinear
        } else {
            SolveMode::Linear
        }
    }

    pub fn driver(&self) -> Option<&Driver> {
        self.driver.as_ref()
    }

    pub fn forcing(&self) -> Option<&ScalarField> {
        self.forcing.as_ref()
    }

    /// Same problem with the driver replaced (stays in semilinear mode).
    pub fn with_driver(&self, driver: Driver) -> Self {
        let mut p = self.clone();
        p.driver = Some(driver);
        p.forcing = None;
        p
    }
}

/// Absorbs the potential into the driver: returns `f(x,y,z) = q(x) y + g(x,y,z)`,
/// so the semilinear problem can be driven by the potential-free diffusion.
/// The adjusted monotonicity field `k1(x) - max(q(x), 0)` is bookkeeping for
/// diagnostics only.
pub fn fold_q_into_driver(p: &EllipticProblem) -> Driver {
    assert_eq!(p.mode(), SolveMode::Semilinear, "fold_q_into_driver needs semilinear mode");
    let g = p.driver().expect("semilinear mode").clone();
    let q = p.q.clone();
    let q2 = p.q.clone();
    let k1 = g.monotonicity.clone();
    let lipschitz_z = g.lipschitz_z;
    let growth = g.growth;
    let gf = g.f.clone();
    Driver::new(
        move |x, y, z| q.eval(x) * y + gf(x, y, z),
        ScalarField::analytic(p.dim, move |x| k1.eval(x) - q2.eval(x).max(0.0)),
        lipschitz_z,
        growth,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_problem(q: ScalarField, g: Driver) -> EllipticProblem {
        EllipticProblem::semilinear(
            MatrixField::identity(2),
            VectorField::zero(2),
            VectorField::zero(2),
            q,
            g,
            ScalarField::constant(2, 0.0),
            Domain::ball(vec![0.0, 0.0], 1.0),
            1.0,
            1.0,
        )
    }

    #[test]
    fn fold_examples() {
        // q = 0: folded driver equals g pointwise.
        let g = Driver::new(|_, y, _| -y, ScalarField::constant(2, 1.0), 0.0, 1.0);
        let p = toy_problem(ScalarField::constant(2, 0.0), g.clone());
        let f = fold_q_into_driver(&p);
        for y in [-2.0, 0.0, 0.5, 3.0] {
            assert_eq!(f.eval(&[0.1, 0.2], y, &[0.0, 0.0]), g.eval(&[0.1, 0.2], y, &[0.0, 0.0]));
        }

        // q = -1, g = 0, y = 3 -> f = -3.
        let p = toy_problem(ScalarField::constant(2, -1.0), Driver::zero(2));
        let f = fold_q_into_driver(&p);
        assert_eq!(f.eval(&[0.0, 0.0], 3.0, &[0.0, 0.0]), -3.0);

        // q(x) = -|x|^2, g = -y, x = (1,0), y = 2 -> f = -4.
        let q = ScalarField::analytic(2, |x: &[f64]| -(x[0] * x[0] + x[1] * x[1]));
        let g = Driver::new(|_, y, _| -y, ScalarField::constant(2, 1.0), 0.0, 1.0);
        let p = toy_problem(q, g);
        let f = fold_q_into_driver(&p);
        assert_eq!(f.eval(&[1.0, 0.0], 2.0, &[0.0, 0.0]), -4.0);
    }

    #[test]
    fn fold_is_linear_in_g() {
        let g1 = Driver::new(|x, y, _| -y + x[0], ScalarField::constant(2, 1.0), 0.0, 2.0);
        let g2 = Driver::new(|_, y, _| 0.5 * y.sin(), ScalarField::constant(2, -0.5), 0.0, 1.0);
        let gsum = {
            let (a, b) = (g1.clone(), g2.clone());
            Driver::new(
                move |x, y, z| a.eval(x, y, z) + b.eval(x, y, z),
                ScalarField::constant(2, 0.5),
                0.0,
                3.0,
            )
        };
        let q = ScalarField::analytic(2, |x: &[f64]| x[0] - 2.0 * x[1]);
        let fsum = fold_q_into_driver(&toy_problem(q.clone(), gsum));
        let f1 = fold_q_into_driver(&toy_problem(q.clone(), g1));
        let f2 = fold_q_into_driver(&toy_problem(q.clone(), g2));
        for (x, y, z) in [
            ([0.3, -0.4], 1.5, [0.2, 0.1]),
            ([-0.1, 0.9], -2.0, [0.0, 0.0]),
            ([0.0, 0.0], 0.0, [1.0, -1.0]),
        ] {
            let lhs = fsum.eval(&x, y, &z);
            let rhs = f1.eval(&x, y, &z) + f2.eval(&x, y, &z) - q.eval(&x) * y;
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
