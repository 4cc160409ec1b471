//! Forward simulation of the diffusion generated by
//! `L1 = 1/2 div(a grad .) + b . grad` up to its first exit from `D`.
//!
//! The generator is divergence form; the Ito form used for stepping is
//!
//! ```text
//! dX = [ b(X) + 1/2 div_row a(X) ] dt + sigma(X) dW,     sigma sigma' = a,
//! ```
//!
//! so the martingale part carries the sharp bracket `int a(X_s) ds`. The row
//! divergence `(div_row a)_i = sum_j d_j a_ij` comes from the field's analytic
//! divergence when available, otherwise from central differences with step
//! `div_step`.
//!
//! Exits are declared at the first exterior Euler proposal and refined by
//! projecting the crossing segment onto the boundary. Optionally, a half-space
//! Brownian-bridge test fires sub-step exits with probability
//! `exp(-2 d1 d2 / (Lambda_loc dt))`, where `d1, d2` are the endpoint boundary
//! distances and `Lambda_loc` bounds the largest eigenvalue of `a` at the
//! midpoint; the bound is isotropic, hence conservative.
//!
//! Per-step noise consumption is fixed (d normals, then one uniform iff the
//! bridge test is enabled), which keeps coupled runs aligned draw-for-draw.

use crate::domain::DomainError;
use crate::linalg::{cholesky_lower, spectral_bound};
use crate::problem::EllipticProblem;
use crate::rng::Noise;

#[derive(Debug, thiserror::Error)]
pub enum SdeError {
    #[error("diffusion matrix not SPD at {point:?} (pivot {pivot}); ellipticity breached")]
    NotSpd { point: Vec<f64>, pivot: f64 },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Simulation parameters.
#[derive(Clone, Debug)]
pub struct SimConfig {
    pub dt: f64,
    /// Hard cap on path duration; reaching it censors the path.
    pub t_max: f64,
    /// Sub-step Brownian-bridge exit test.
    pub bridge_correction: bool,
    /// Central-difference step for `div_row a` when no analytic divergence is
    /// provided.
    pub div_step: f64,
    pub seed: u64,
}

impl SimConfig {
    pub fn new(dt: f64, seed: u64) -> Self {
        SimConfig { dt, t_max: 50.0, bridge_correction: true, div_step: 1e-5, seed }
    }

    pub fn with_t_max(mut self, t_max: f64) -> Self {
        self.t_max = t_max;
        self
    }

    pub fn with_bridge(mut self, on: bool) -> Self {
        self.bridge_correction = on;
        self
    }

    pub fn validate(&self) {
        assert!(self.dt > 0.0 && self.dt <= self.t_max, "need 0 < dt <= t_max");
        assert!(self.div_step > 0.0);
    }
}

/// Exit data of a stopped path.
#[derive(Clone, Debug)]
pub struct ExitInfo {
    /// Index of the terminal state: for hard exits the first exterior state,
    /// for bridge exits the (interior) endpoint of the step that fired.
    pub index: usize,
    pub time: f64,
    pub point: Vec<f64>,
}

/// One simulated trajectory with its martingale increments.
///
/// `times` advance by `dt` except the last entry, which is the refined exit
/// time. The terminal state is the raw Euler proposal of the stopping step;
/// `exit.point` is the boundary projection. The reconstruction identity
/// `states[k+1] = states[k] + drift_eff(states[k]) dt + mart[k]` holds with
/// the nominal `dt` for every step.
#[derive(Clone, Debug)]
pub struct PathSample {
    pub d: usize,
    pub times: Vec<f64>,
    states: Vec<f64>,
    mart: Vec<f64>,
    pub exit: Option<ExitInfo>,
    pub dt_nominal: f64,
}

impl PathSample {
    pub fn n_steps(&self) -> usize {
        self.mart.len() / self.d
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.d..(k + 1) * self.d]
    }

    pub fn mart_increment(&self, k: usize) -> &[f64] {
        &self.mart[k * self.d..(k + 1) * self.d]
    }

    pub fn exited(&self) -> bool {
        self.exit.is_some()
    }

    /// Binary dump: one little-endian record `(t_k, X_k, dM_k)` per step.
    pub fn write_records(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        for k in 0..self.n_steps() {
            w.write_all(&self.times[k].to_le_bytes())?;
            for v in self.state(k) {
                w.write_all(&v.to_le_bytes())?;
            }
            for v in self.mart_increment(k) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// Cholesky factor `sigma` with `sigma sigma' = a_val`. The pivot floor is
/// `lambda * 1e-8`; failure signals an ellipticity breach at this point.
pub fn diffusion_factor(a_val: &[f64], d: usize, lambda: f64) -> Result<Vec<f64>, SdeError> {
    let mut out = vec![0.0; d * d];
    cholesky_lower(a_val, d, lambda * 1e-8, &mut out)
        .map_err(|pivot| SdeError::NotSpd { point: Vec::new(), pivot })?;
    Ok(out)
}

/// Ito drift `b(x) + 1/2 div_row a(x)`.
pub fn effective_drift(p: &EllipticProblem, x: &[f64], div_step: f64) -> Vec<f64> {
    let d = p.dim;
    let mut out = vec![0.0; d];
    let mut scratch = DriftScratch::new(d);
    drift_into(p, x, div_step, &mut out, &mut scratch);
    out
}

struct DriftScratch {
    div: Vec<f64>,
    a_p: Vec<f64>,
    a_m: Vec<f64>,
    xs: Vec<f64>,
}

impl DriftScratch {
    fn new(d: usize) -> Self {
        DriftScratch { div: vec![0.0; d], a_p: vec![0.0; d * d], a_m: vec![0.0; d * d], xs: vec![0.0; d] }
    }
}

fn drift_into(
    p: &EllipticProblem,
    x: &[f64],
    div_step: f64,
    out: &mut [f64],
    s: &mut DriftScratch,
) {
    let d = p.dim;
    p.b.eval_into(x, out);
    if p.a.divergence_into(x, &mut s.div) {
        for i in 0..d {
            out[i] += 0.5 * s.div[i];
        }
        return;
    }
    // Central differences of the rows: (div_row a)_i = sum_j d_j a_ij.
    s.xs.copy_from_slice(x);
    s.div.fill(0.0);
    for j in 0..d {
        s.xs[j] = x[j] + div_step;
        p.a.eval_into(&s.xs, &mut s.a_p);
        s.xs[j] = x[j] - div_step;
        p.a.eval_into(&s.xs, &mut s.a_m);
        s.xs[j] = x[j];
        for i in 0..d {
            s.div[i] += (s.a_p[i * d + j] - s.a_m[i * d + j]) / (2.0 * div_step);
        }
    }
    for i in 0..d {
        out[i] += 0.5 * s.div[i];
    }
}

/// Per-step record handed to walk observers. `dt_quad` is the left-point
/// quadrature weight for running integrals: the nominal `dt` for full steps,
/// `theta dt` for the hard-exit step, `dt/2` for a bridge-exit step.
pub struct StepRecord<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub x_next: &'a [f64],
    pub dm: &'a [f64],
    pub dt_quad: f64,
    pub dt_nominal: f64,
}

/// Terminal status of a walk.
pub enum WalkEnd {
    Exit { time: f64, point: Vec<f64> },
    Censored { time: f64, last: Vec<f64> },
    Aborted,
}

/// Reusable per-path buffers.
pub struct WalkScratch {
    x: Vec<f64>,
    x_next: Vec<f64>,
    dm: Vec<f64>,
    xi: Vec<f64>,
    a_buf: Vec<f64>,
    chol: Vec<f64>,
    drift: Vec<f64>,
    mid: Vec<f64>,
    drift_scratch: DriftScratch,
}

impl WalkScratch {
    pub fn new(d: usize) -> Self {
        WalkScratch {
            x: vec![0.0; d],
            x_next: vec![0.0; d],
            dm: vec![0.0; d],
            xi: vec![0.0; d],
            a_buf: vec![0.0; d * d],
            chol: vec![0.0; d * d],
            drift: vec![0.0; d],
            mid: vec![0.0; d],
            drift_scratch: DriftScratch::new(d),
        }
    }
}

/// Precomputed fast paths for constant coefficients.
pub struct Engine<'p> {
    p: &'p EllipticProblem,
    cfg: &'p SimConfig,
    d: usize,
    sqrt_dt: f64,
    n_max: usize,
    const_chol: Option<Vec<f64>>,
    const_drift: Option<Vec<f64>>,
    const_lambda_loc: Option<f64>,
    pivot_floor: f64,
}

impl<'p> Engine<'p> {
    pub fn new(p: &'p EllipticProblem, cfg: &'p SimConfig) -> Result<Self, SdeError> {
        cfg.validate();
        let d = p.dim;
        let pivot_floor = p.lambda * 1e-8;
        let const_a = p.a.constant_value();
        let const_chol = match &const_a {
            Some(a) => Some(diffusion_factor(a, d, p.lambda)?),
            None => None,
        };
        let const_lambda_loc = const_a.as_ref().map(|a| spectral_bound(a, d));
        let const_drift = match (p.b.constant_value(), &const_a) {
            // Constant a has zero divergence, so the drift is just b.
            (Some(b), Some(_)) => Some(b),
            _ => None,
        };
        Ok(Engine {
            p,
            cfg,
            d,
            sqrt_dt: cfg.dt.sqrt(),
            n_max: (cfg.t_max / cfg.dt).ceil() as usize,
            const_chol,
            const_drift,
            const_lambda_loc,
            pivot_floor,
        })
    }

    /// Runs one path. `on_step` sees every completed step in order and may
    /// abort by returning `false`.
    pub fn walk(
        &self,
        x0: &[f64],
        noise: &mut impl Noise,
        s: &mut WalkScratch,
        mut on_step: impl FnMut(&StepRecord) -> bool,
    ) -> Result<WalkEnd, SdeError> {
        let d = self.d;
        let dt = self.cfg.dt;
        if !self.p.domain.contains(x0) {
            return Err(DomainError::OutsideDomain(x0.to_vec()).into());
        }
        s.x.copy_from_slice(x0);
        let mut t = 0.0;
        for _ in 0..self.n_max {
            // Spot factor and drift.
            let chol: &[f64] = match &self.const_chol {
                Some(c) => c,
                None => {
                    self.p.a.eval_into(&s.x, &mut s.a_buf);
                    cholesky_lower(&s.a_buf, d, self.pivot_floor, &mut s.chol).map_err(
                        |pivot| SdeError::NotSpd { point: s.x.clone(), pivot },
                    )?;
                    &s.chol
                }
            };
            let drift: &[f64] = match &self.const_drift {
                Some(v) => v,
                None => {
                    drift_into(self.p, &s.x, self.cfg.div_step, &mut s.drift, &mut s.drift_scratch);
                    &s.drift
                }
            };
            for k in 0..d {
                s.xi[k] = noise.normal();
            }
            for i in 0..d {
                let mut acc = 0.0;
                for j in 0..=i {
                    acc += chol[i * d + j] * s.xi[j];
                }
                s.dm[i] = self.sqrt_dt * acc;
                s.x_next[i] = s.x[i] + drift[i] * dt + s.dm[i];
            }

            if !self.p.domain.contains(&s.x_next) {
                // Hard exit: refine along the crossing segment.
                let theta = self.p.domain.exit_fraction(&s.x, &s.x_next)?;
                let point: Vec<f64> = s
                    .x
                    .iter()
                    .zip(&s.x_next)
                    .map(|(a, b)| a + theta * (b - a))
                    .collect();
                let time = t + theta * dt;
                let rec = StepRecord {
                    t,
                    x: &s.x,
                    x_next: &s.x_next,
                    dm: &s.dm,
                    dt_quad: theta * dt,
                    dt_nominal: dt,
                };
                if !on_step(&rec) {
                    return Ok(WalkEnd::Aborted);
                }
                return Ok(WalkEnd::Exit { time, point });
            }

            if self.cfg.bridge_correction {
                let u = noise.uniform();
                let d1 = self.p.domain.boundary_distance(&s.x)?;
                let d2 = self.p.domain.boundary_distance(&s.x_next)?;
                let lam_loc = match self.const_lambda_loc {
                    Some(l) => l,
                    None => {
                        for k in 0..d {
                            s.mid[k] = 0.5 * (s.x[k] + s.x_next[k]);
                        }
                        self.p.a.eval_into(&s.mid, &mut s.a_buf);
                        spectral_bound(&s.a_buf, d)
                    }
                };
                let exponent = -2.0 * d1 * d2 / (lam_loc * dt);
                if exponent > -36.0 && u < exponent.exp() {
                    for k in 0..d {
                        s.mid[k] = 0.5 * (s.x[k] + s.x_next[k]);
                    }
                    let point = self.p.domain.project_to_boundary(&s.mid);
                    let time = t + 0.5 * dt;
                    let rec = StepRecord {
                        t,
                        x: &s.x,
                        x_next: &s.x_next,
                        dm: &s.dm,
                        dt_quad: 0.5 * dt,
                        dt_nominal: dt,
                    };
                    if !on_step(&rec) {
                        return Ok(WalkEnd::Aborted);
                    }
                    return Ok(WalkEnd::Exit { time, point });
                }
            }

            let rec = StepRecord {
                t,
                x: &s.x,
                x_next: &s.x_next,
                dm: &s.dm,
                dt_quad: dt,
                dt_nominal: dt,
            };
            if !on_step(&rec) {
                return Ok(WalkEnd::Aborted);
            }
            std::mem::swap(&mut s.x, &mut s.x_next);
            t += dt;
        }
        Ok(WalkEnd::Censored { time: t, last: s.x.clone() })
    }
}

/// Euler–Maruyama path from `x0`, stopped at the first exit or at `t_max`
/// (censored, `exit = None`). Deterministic given the noise stream.
pub fn simulate_path(
    p: &EllipticProblem,
    x0: &[f64],
    cfg: &SimConfig,
    noise: &mut impl Noise,
) -> Result<PathSample, SdeError> {
    let engine = Engine::new(p, cfg)?;
    let d = p.dim;
    let mut scratch = WalkScratch::new(d);
    let mut times = vec![0.0];
    let mut states = x0.to_vec();
    let mut mart: Vec<f64> = Vec::new();
    let end = engine.walk(x0, noise, &mut scratch, |rec| {
        times.push(rec.t + rec.dt_nominal);
        states.extend_from_slice(rec.x_next);
        mart.extend_from_slice(rec.dm);
        true
    })?;
    let exit = match end {
        WalkEnd::Exit { time, point } => {
            let idx = times.len() - 1;
            times[idx] = time;
            Some(ExitInfo { index: idx, time, point })
        }
        WalkEnd::Censored { .. } => None,
        WalkEnd::Aborted => unreachable!("recording observer never aborts"),
    };
    Ok(PathSample { d, times, states, mart, exit, dt_nominal: cfg.dt })
}

/// Realized quadratic variation minus its compensator,
/// `sum_k dM_k dM_k' - sum_k a(X_k) dt`, as a row-major `d x d` matrix.
/// Zero mean in expectation; the module's physical self-test.
pub fn quadratic_variation_residual(path: &PathSample, p: &EllipticProblem) -> Vec<f64> {
    let d = path.d;
    let mut res = vec![0.0; d * d];
    let mut a_buf = vec![0.0; d * d];
    for k in 0..path.n_steps() {
        let dm = path.mart_increment(k);
        p.a.eval_into(path.state(k), &mut a_buf);
        for i in 0..d {
            for j in 0..d {
                res[i * d + j] += dm[i] * dm[j] - a_buf[i * d + j] * path.dt_nominal;
            }
        }
    }
    res
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::problem::{MatrixField, ScalarField, VectorField};
    use crate::rng::ChaChaNoise;

    fn ball_problem(d: usize, b: VectorField) -> EllipticProblem {
        EllipticProblem::linear(
            MatrixField::identity(d),
            b,
            VectorField::zero(d),
            ScalarField::constant(d, 0.0),
            ScalarField::constant(d, 0.0),
            ScalarField::constant(d, 0.0),
            Domain::ball(vec![0.0; d], 1.0),
            1.0,
            1.0,
        )
    }

    struct ZeroNoise;
    impl Noise for ZeroNoise {
        fn normal(&mut self) -> f64 {
            0.0
        }
        fn uniform(&mut self) -> f64 {
            1.0 - f64::EPSILON
        }
    }

    #[test]
    fn diffusion_factor_examples() {
        let s = diffusion_factor(&[1.0, 0.0, 0.0, 1.0], 2, 1.0).unwrap();
        assert_eq!(s, vec![1.0, 0.0, 0.0, 1.0]);
        let s = diffusion_factor(&[4.0, 0.0, 0.0, 1.0], 2, 1.0).unwrap();
        assert_eq!(s, vec![2.0, 0.0, 0.0, 1.0]);
        let a = [2.0, 1.0, 1.0, 2.0];
        let s = diffusion_factor(&a, 2, 1.0).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    acc += s[i * 2 + k] * s[j * 2 + k];
                }
                assert!((acc - a[i * 2 + j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn effective_drift_examples() {
        let p = ball_problem(2, VectorField::zero(2));
        assert_eq!(effective_drift(&p, &[0.1, 0.2], 1e-5), vec![0.0, 0.0]);

        let p = ball_problem(2, VectorField::constant(vec![1.0, 2.0]));
        assert_eq!(effective_drift(&p, &[0.1, 0.2], 1e-5), vec![1.0, 2.0]);

        // d = 1, a(x) = 1 + x^2: drift = x at x = 0.5, by analytic divergence
        // and by central differences.
        let a_analytic = MatrixField::analytic(1, |x: &[f64], out: &mut [f64]| {
            out[0] = 1.0 + x[0] * x[0];
        })
        .with_divergence(|x: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0]);
        let a_fd = MatrixField::analytic(1, |x: &[f64], out: &mut [f64]| {
            out[0] = 1.0 + x[0] * x[0];
        });
        for a in [a_analytic, a_fd] {
            let p = EllipticProblem::linear(
                a,
                VectorField::zero(1),
                VectorField::zero(1),
                ScalarField::constant(1, 0.0),
                ScalarField::constant(1, 0.0),
                ScalarField::constant(1, 0.0),
                Domain::rect(vec![-1.0], vec![1.0]),
                1.0,
                2.0,
            );
            let drift = effective_drift(&p, &[0.5], 1e-5);
            assert!((drift[0] - 0.5).abs() < 1e-9, "{}", drift[0]);
        }
    }

    #[test]
    fn reconstruction_identity_holds_exactly() {
        let p = ball_problem(2, VectorField::constant(vec![0.3, -0.2]));
        let cfg = SimConfig::new(1e-2, 1).with_bridge(true);
        let mut noise = ChaChaNoise::for_path(11, &[1], 0);
        let path = simulate_path(&p, &[0.1, 0.0], &cfg, &mut noise).unwrap();
        assert!(path.n_steps() > 0);
        let drift = [0.3, -0.2];
        for k in 0..path.n_steps() {
            let xk = path.state(k);
            let xn = path.state(k + 1);
            let dm = path.mart_increment(k);
            for i in 0..2 {
                let lhs = xn[i] - xk[i] - drift[i] * cfg.dt;
                assert_eq!(lhs.to_bits(), dm[i].to_bits(), "step {k} comp {i}");
            }
        }
    }

    #[test]
    fn determinism_bitwise() {
        let p = ball_problem(3, VectorField::zero(3));
        let cfg = SimConfig::new(1e-3, 5);
        for path_idx in [0u64, 7, 123] {
            let mut n1 = ChaChaNoise::for_path(5, &[1], path_idx);
            let mut n2 = ChaChaNoise::for_path(5, &[1], path_idx);
            let p1 = simulate_path(&p, &[0.2, 0.1, -0.3], &cfg, &mut n1).unwrap();
            let p2 = simulate_path(&p, &[0.2, 0.1, -0.3], &cfg, &mut n2).unwrap();
            assert_eq!(p1.times.len(), p2.times.len());
            for (a, b) in p1.states.iter().zip(&p2.states) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
            let (e1, e2) = (p1.exit.unwrap(), p2.exit.unwrap());
            assert_eq!(e1.time.to_bits(), e2.time.to_bits());
        }
    }

    #[test]
    fn huge_drift_exits_through_forced_face() {
        let p = EllipticProblem::linear(
            MatrixField::identity(1),
            VectorField::constant(vec![50.0]),
            VectorField::zero(1),
            ScalarField::constant(1, 0.0),
            ScalarField::constant(1, 0.0),
            ScalarField::constant(1, 0.0),
            Domain::rect(vec![-1.0], vec![1.0]),
            1.0,
            1.0,
        );
        let cfg = SimConfig::new(1e-3, 2);
        for i in 0..100 {
            let mut noise = ChaChaNoise::for_path(2, &[1], i);
            let path = simulate_path(&p, &[0.0], &cfg, &mut noise).unwrap();
            let exit = path.exit.unwrap();
            assert!((exit.point[0] - 1.0).abs() < 1e-9, "path {i} exited at {:?}", exit.point);
        }
    }

    #[test]
    fn exit_monotone_in_domain_size_under_same_noise() {
        let small = ball_problem(2, VectorField::zero(2));
        let mut big = small.clone();
        big.domain = Domain::ball(vec![0.0, 0.0], 1.3);
        let cfg = SimConfig::new(2e-3, 3);
        for i in 0..200 {
            let mut ns = ChaChaNoise::for_path(3, &[1], i);
            let mut nb = ChaChaNoise::for_path(3, &[1], i);
            let ps = simulate_path(&small, &[0.1, -0.2], &cfg, &mut ns).unwrap();
            let pb = simulate_path(&big, &[0.1, -0.2], &cfg, &mut nb).unwrap();
            let ts = ps.exit.as_ref().map(|e| e.time).unwrap_or(cfg.t_max);
            let tb = pb.exit.as_ref().map(|e| e.time).unwrap_or(cfg.t_max);
            assert!(ts <= tb + 1e-12, "path {i}: {ts} > {tb}");
        }
    }

    #[test]
    fn zero_noise_stub_gives_degenerate_residual() {
        let p = ball_problem(2, VectorField::zero(2));
        // One step, no noise, no drift: path sits still and censors.
        let cfg = SimConfig { dt: 0.25, t_max: 0.25, bridge_correction: true, div_step: 1e-5, seed: 0 };
        let mut noise = ZeroNoise;
        let path = simulate_path(&p, &[0.0, 0.0], &cfg, &mut noise).unwrap();
        assert!(!path.exited());
        assert_eq!(path.n_steps(), 1);
        let res = quadratic_variation_residual(&path, &p);
        // dM = 0 forces the residual to minus the compensator, -a(x0) dt.
        assert!((res[0] + 0.25).abs() < 1e-15);
        assert!((res[3] + 0.25).abs() < 1e-15);
        assert!(res[1].abs() < 1e-15 && res[2].abs() < 1e-15);
    }

    #[test]
    fn empty_path_zero_residual() {
        let p = ball_problem(2, VectorField::zero(2));
        let path = PathSample {
            d: 2,
            times: vec![0.0],
            states: vec![0.0, 0.0],
            mart: vec![],
            exit: None,
            dt_nominal: 1e-3,
        };
        assert_eq!(quadratic_variation_residual(&path, &p), vec![0.0; 4]);
    }

    #[test]
    fn mean_exit_time_from_center_matches_law() {
        // Unit ball, a = I, b = 0: E[tau] from the center is 1/d.
        let p = ball_problem(2, VectorField::zero(2));
        let cfg = SimConfig::new(1e-3, 17);
        let n = 3000u64;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for i in 0..n {
            let mut noise = ChaChaNoise::for_path(17, &[1], i);
            let path = simulate_path(&p, &[0.0, 0.0], &cfg, &mut noise).unwrap();
            let t = path.exit.unwrap().time;
            sum += t;
            sumsq += t * t;
        }
        let mean = sum / n as f64;
        let var = (sumsq - n as f64 * mean * mean) / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - 0.5).abs() <= 3.0 * se + 0.01,
            "mean {mean}, se {se}"
        );
    }
}
