//! Randomized validation of the structural assumptions: ellipticity bounds,
//! matrix symmetry, driver monotonicity/Lipschitz/growth, analytic-gradient
//! consistency, and (for implicit domains) the eikonal property of the
//! signed distance.
//!
//! Checks sample uniform points of the bounding box intersected with `D`
//! under a fixed seed; they reject bad declarations, they do not certify
//! field-wide bounds.

use super::{EllipticProblem, ProblemError, SolveMode};
use crate::rng::{derive_key, ChaChaNoise, Noise, STREAM_VALIDATE};

/// Absolute slack for driver inequalities (floating-point noise allowance).
pub const DRIVER_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ValidationOptions {
    /// Half-width of the y-interval sampled in driver checks.
    pub y_range: f64,
    /// Componentwise half-width of the z-box sampled in driver checks.
    pub z_range: f64,
    /// Optional continuity check for the boundary data: pairs of boundary
    /// samples at most `step` apart must differ by at most `bound`.
    pub boundary_modulus: Option<(f64, f64)>,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions { y_range: 3.0, z_range: 3.0, boundary_modulus: None }
    }
}

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    /// Worst observed margin; non-positive margins pass.
    pub worst_margin: f64,
    pub passed: bool,
    pub witness: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    pub n_samples: usize,
    pub seed: u64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// First failing check as a typed error.
    pub fn ensure_passed(&self) -> Result<(), ProblemError> {
        for c in self.checks.iter().filter(|c| !c.passed) {
            let point = c.witness.clone().unwrap_or_default();
            let margin = c.worst_margin;
            return Err(match c.name {
                "ellipticity" => ProblemError::EllipticityViolation {
                    point,
                    value: margin,
                    lo: 0.0,
                    hi: 0.0,
                },
                "driver_monotonicity" => ProblemError::MonotonicityViolation { point, margin },
                "driver_lipschitz_z" => ProblemError::LipschitzViolation { point, margin },
                "driver_growth" => ProblemError::GrowthViolation { point, margin },
                "matrix_symmetry" => ProblemError::AsymmetricMatrix { point, margin },
                "analytic_gradients" => ProblemError::GradientMismatch { point, margin },
                "eikonal" => ProblemError::EikonalViolation { point, margin },
                "boundary_modulus" => {
                    ProblemError::BoundaryModulusViolation { point, margin }
                }
                _ => ProblemError::Invalid(format!("{} failed (margin {})", c.name, margin)),
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "validation over {} samples (seed {}):", self.n_samples, self.seed)?;
        for c in &self.checks {
            writeln!(
                f,
                "  {:<22} {}  worst margin {:+.3e}",
                c.name,
                if c.passed { "pass" } else { "FAIL" },
                c.worst_margin
            )?;
        }
        write!(f, "overall: {}", if self.passed() { "pass" } else { "FAIL" })
    }
}

struct Margin {
    worst: f64,
    witness: Option<Vec<f64>>,
}

impl Margin {
    fn new() -> Self {
        Margin { worst: f64::NEG_INFINITY, witness: None }
    }

    fn update(&mut self, margin: f64, point: &[f64]) {
        if margin > self.worst {
            self.worst = margin;
            self.witness = Some(point.to_vec());
        }
    }

    fn into_check(self, name: &'static str) -> CheckResult {
        // Empty sample sets pass vacuously with margin 0.
        let worst = if self.worst.is_finite() { self.worst } else { 0.0 };
        CheckResult { name, worst_margin: worst, passed: worst <= 0.0, witness: self.witness }
    }
}

/// Validates with default options.
pub fn validate_problem(p: &EllipticProblem, n_samples: usize, rng_seed: u64) -> ValidationReport {
    validate_problem_with(p, n_samples, rng_seed, &ValidationOptions::default())
}

pub fn validate_problem_with(
    p: &EllipticProblem,
    n_samples: usize,
    rng_seed: u64,
    opts: &ValidationOptions,
) -> ValidationReport {
    assert!(n_samples >= 1);
    let d = p.dim;
    let mut noise = ChaChaNoise::from_key(derive_key(rng_seed, &[STREAM_VALIDATE]));
    let (lo, hi) = p.domain.bounding_box();

    let mut ellipticity = Margin::new();
    let mut symmetry = Margin::new();
    let mut mono = Margin::new();
    let mut lip = Margin::new();
    let mut growth = Margin::new();
    let mut gradcheck = Margin::new();
    let mut eikonal = Margin::new();
    let mut modulus = Margin::new();

    let mut x = vec![0.0; d];
    let mut a = vec![0.0; d * d];
    let mut xi = vec![0.0; d];
    let mut z1 = vec![0.0; d];
    let mut z2 = vec![0.0; d];
    let mut gbuf = vec![0.0; d];

    let driver = match p.mode() {
        SolveMode::Semilinear => p.driver(),
        SolveMode::Linear => None,
    };

    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < n_samples && attempts < n_samples * 1000 {
        attempts += 1;
        for k in 0..d {
            x[k] = lo[k] + noise.uniform() * (hi[k] - lo[k]);
        }
        if !p.domain.contains(&x) {
            continue;
        }
        accepted += 1;

        p.a.eval_into(&x, &mut a);

        // Symmetry to 1e-14 componentwise.
        let mut dev: f64 = 0.0;
        for i in 0..d {
            for j in 0..i {
                dev = dev.max((a[i * d + j] - a[j * d + i]).abs());
            }
        }
        symmetry.update(dev - 1e-14, &x);

        // Ellipticity along a random unit direction.
        let mut nrm = 0.0;
        for k in 0..d {
            xi[k] = noise.normal();
            nrm += xi[k] * xi[k];
        }
        let nrm = nrm.sqrt().max(1e-300);
        for k in 0..d {
            xi[k] /= nrm;
        }
        let mut quad = 0.0;
        for i in 0..d {
            for j in 0..d {
                quad += xi[i] * a[i * d + j] * xi[j];
            }
        }
        let tol = 1e-10 * p.lambda_max.max(1.0);
        ellipticity.update((p.lambda - quad).max(quad - p.lambda_max) - tol, &x);

        // Driver structure.
        if let Some(drv) = driver {
            let y1 = (2.0 * noise.uniform() - 1.0) * opts.y_range;
            let mut y2 = (2.0 * noise.uniform() - 1.0) * opts.y_range;
            if y1 == y2 {
                y2 += 0.5 * opts.y_range + 1e-3;
            }
            for k in 0..d {
                z1[k] = (2.0 * noise.uniform() - 1.0) * opts.z_range;
                z2[k] = (2.0 * noise.uniform() - 1.0) * opts.z_range;
            }
            let f11 = drv.eval(&x, y1, &z1);
            let f21 = drv.eval(&x, y2, &z1);
            let f12 = drv.eval(&x, y1, &z2);
            let c1 = drv.monotonicity.eval(&x);
            let dy = y1 - y2;
            mono.update(dy * (f11 - f21) + c1 * dy * dy - DRIVER_TOL, &x);

            let dz: f64 =
                z1.iter().zip(&z2).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
            lip.update((f11 - f12).abs() - drv.lipschitz_z * dz - DRIVER_TOL, &x);

            let qv = p.q.eval(&x).abs();
            growth.update(f11.abs() - drv.growth * (1.0 + qv) - DRIVER_TOL, &x);
        }

        // Analytic gradients (where provided) vs central differences,
        // relative tolerance 1e-5.
        for field in [Some(&p.q), p.forcing(), Some(&p.phi)].into_iter().flatten() {
            if !field.has_gradient() || field.constant_value().is_some() {
                continue;
            }
            field.gradient_into(&x, &mut gbuf);
            let h = 1e-6 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max));
            let mut scale: f64 = 1.0;
            let mut err: f64 = 0.0;
            let mut xp = x.clone();
            for k in 0..d {
                xp[k] = x[k] + h;
                let fp = field.eval(&xp);
                xp[k] = x[k] - h;
                let fm = field.eval(&xp);
                xp[k] = x[k];
                let fd = (fp - fm) / (2.0 * h);
                err = err.max((fd - gbuf[k]).abs());
                scale = scale.max(gbuf[k].abs());
            }
            gradcheck.update(err / scale - 1e-5, &x);
        }

        // Implicit domains: |grad sd| within 10% of 1.
        if !p.domain.is_box() && p.domain.assume_regular() {
            if let Some(g) = eikonal_deviation(&p.domain, &x) {
                eikonal.update(g - 0.10, &x);
            }
        }
    }

    // Boundary modulus of continuity (statistical), when requested.
    if let Some((step, bound)) = opts.boundary_modulus {
        let mut dir = vec![0.0; d];
        let anchor: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let far = 2.0 * lo.iter().zip(hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        let mut prev: Option<(Vec<f64>, f64)> = None;
        if p.domain.contains(&anchor) {
            for _ in 0..n_samples {
                let mut nrm = 0.0;
                for k in 0..d {
                    dir[k] = noise.normal();
                    nrm += dir[k] * dir[k];
                }
                let nrm = nrm.sqrt().max(1e-300);
                let outside: Vec<f64> = anchor
                    .iter()
                    .zip(&dir)
                    .map(|(c, v)| c + far * v / nrm)
                    .collect();
                let Ok(bp) = p.domain.project_exit(&anchor, &outside) else { continue };
                let val = p.phi.eval(&bp);
                if let Some((pp, pv)) = &prev {
                    let dist: f64 =
                        bp.iter().zip(pp).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt();
                    if dist <= step {
                        modulus.update((val - pv).abs() - bound, &bp);
                    }
                }
                prev = Some((bp, val));
            }
        }
    }

    let mut checks = vec![
        symmetry.into_check("matrix_symmetry"),
        ellipticity.into_check("ellipticity"),
    ];
    if driver.is_some() {
        checks.push(mono.into_check("driver_monotonicity"));
        checks.push(lip.into_check("driver_lipschitz_z"));
        checks.push(growth.into_check("driver_growth"));
    }
    checks.push(gradcheck.into_check("analytic_gradients"));
    if !p.domain.is_box() {
        checks.push(eikonal.into_check("eikonal"));
    }
    if opts.boundary_modulus.is_some() {
        checks.push(modulus.into_check("boundary_modulus"));
    }

    ValidationReport { checks, n_samples, seed: rng_seed }
}

/// `| |grad sd| - 1 |` via central differences, or `None` for shapes with
/// exact distances.
fn eikonal_deviation(dom: &crate::domain::Domain, x: &[f64]) -> Option<f64> {
    let h = 1e-5;
    let mut gg = 0.0;
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let fp = dom.signed_distance(&xp);
        xp[k] = x[k] - h;
        let fm = dom.signed_distance(&xp);
        xp[k] = x[k];
        let g = (fp - fm) / (2.0 * h);
        gg += g * g;
    }
    Some((gg.sqrt() - 1.0).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::problem::{Driver, MatrixField, ScalarField, VectorField};

    fn base(a: MatrixField, lambda: f64, lambda_max: f64, driver: Option<Driver>) -> EllipticProblem {
        let phi = ScalarField::constant(2, 0.0);
        let dom = Domain::ball(vec![0.0, 0.0], 1.0);
        match driver {
            Some(drv) => EllipticProblem::semilinear(
                a,
                VectorField::zero(2),
                VectorField::zero(2),
                ScalarField::constant(2, 0.0),
                drv,
                phi,
                dom,
                lambda,
                lambda_max,
            ),
            None => EllipticProblem::linear(
                a,
                VectorField::zero(2),
                VectorField::zero(2),
                ScalarField::constant(2, 0.0),
                ScalarField::constant(2, 0.0),
                phi,
                dom,
                lambda,
                lambda_max,
            ),
        }
    }

    #[test]
    fn identity_matrix_passes_with_zero_margin() {
        let p = base(MatrixField::identity(2), 1.0, 1.0, None);
        let r = validate_problem(&p, 64, 7);
        assert!(r.passed(), "{r}");
        let ell = r.checks.iter().find(|c| c.name == "ellipticity").unwrap();
        assert!(ell.worst_margin <= 0.0 && ell.worst_margin > -1e-9);
    }

    #[test]
    fn diagonal_bounds_are_the_eigenvalues() {
        let a = MatrixField::constant(2, vec![2.0, 0.0, 0.0, 1.0]);
        let p = base(a, 1.0, 2.0, None);
        assert!(validate_problem(&p, 256, 11).passed());
    }

    #[test]
    fn wrong_lambda_is_rejected() {
        let p = base(MatrixField::identity(2), 1.5, 2.0, None);
        let r = validate_problem(&p, 64, 3);
        assert!(!r.passed());
        assert!(matches!(
            r.ensure_passed().unwrap_err(),
            ProblemError::EllipticityViolation { .. }
        ));
    }

    /// Independent scan backing the cubic-driver example: the sharpest valid
    /// monotonicity constant of f(y) = -y^3 - y is 1, because
    /// (y1-y2)(f(y1)-f(y2)) = -(1 + y1^2 + y1 y2 + y2^2)(y1-y2)^2 and the
    /// quadratic form y1^2 + y1 y2 + y2^2 is nonnegative with infimum 0.
    #[test]
    fn cubic_driver_monotonicity_scan() {
        let f = |y: f64| -y * y * y - y;
        let mut sup_margin_c1: f64 = f64::NEG_INFINITY;
        let mut sup_margin_c2: f64 = f64::NEG_INFINITY;
        let n = 200;
        for i in 0..n {
            for j in 0..n {
                let y1 = -2.0 + 4.0 * i as f64 / (n - 1) as f64;
                let y2 = -2.0 + 4.0 * j as f64 / (n - 1) as f64;
                if y1 == y2 {
                    continue;
                }
                let lhs = (y1 - y2) * (f(y1) - f(y2));
                let d2 = (y1 - y2) * (y1 - y2);
                sup_margin_c1 = sup_margin_c1.max(lhs + 1.0 * d2);
                sup_margin_c2 = sup_margin_c2.max(lhs + 2.0 * d2);
            }
        }
        assert!(sup_margin_c1 <= 1e-12, "c1 = 1 must hold: {sup_margin_c1}");
        assert!(sup_margin_c2 > 0.1, "c1 = 2 must be violated: {sup_margin_c2}");
    }

    #[test]
    fn cubic_driver_monotonicity_validation() {
        let mk = |c1: f64| {
            Driver::new(
                |_x, y, _z| -y * y * y - y,
                ScalarField::constant(2, c1),
                0.0,
                40.0,
            )
        };
        let ok = base(MatrixField::identity(2), 1.0, 1.0, Some(mk(1.0)));
        assert!(validate_problem(&ok, 500, 5).passed());

        let bad = base(MatrixField::identity(2), 1.0, 1.0, Some(mk(2.0)));
        let r = validate_problem(&bad, 500, 5);
        assert!(!r.passed());
        assert!(matches!(
            r.ensure_passed().unwrap_err(),
            ProblemError::MonotonicityViolation { .. }
        ));
    }

    #[test]
    fn lipschitz_violation_detected() {
        let drv = Driver::new(
            |_x, y, z| -y + 2.0 * z[0],
            ScalarField::constant(2, 1.0),
            1.0, // true constant is 2
            10.0,
        );
        let p = base(MatrixField::identity(2), 1.0, 1.0, Some(drv));
        let r = validate_problem(&p, 300, 9);
        assert!(matches!(
            r.ensure_passed().unwrap_err(),
            ProblemError::LipschitzViolation { .. }
        ));
    }
}
