//! Monte Carlo evaluation of the linear Dirichlet problem and the
//! exponential-gauge diagnostics.
//!
//! With `L2 = 1/2 div(a grad .) + b . grad + q`, the two exposed functionals
//! are
//!
//! ```text
//! solve_linear:        E_x[ phi(X_tau) + int_0^tau exp(int_0^t q) F(X_t) dt ]
//! solve_linear_gauged: E_x[ exp(int_0^tau q) phi(X_tau) ]
//! ```
//!
//! The first solves `L1 u = -F` when `q = 0` and carries the gauge only on
//! the running term; the second is the homogeneous solve `L2 u = 0, u = phi`.
//! Their sum realizes the full `L2 u = -F` solve; tests pin that split.
//! Quadrature is left-point Riemann, matching the weak order of the Euler
//! scheme.
//!
//! Estimates use common random numbers across evaluation points (path `i`
//! sees the same noise everywhere) and reduce block-by-block in fixed path
//! order, so results do not depend on the worker count.

use crate::problem::{EllipticProblem, ScalarField, SolveMode};
use crate::rng::{ChaChaNoise, STREAM_PATH};
use crate::sde::{Engine, SdeError, SimConfig, WalkEnd, WalkScratch};
use rayon::prelude::*;

/// Exponent cap: `exp(690) < 1e300`, beyond which the gauge is declared
/// overflowed.
pub const GAUGE_EXP_LIMIT: f64 = 690.0;

/// A gauge estimate whose largest single path contributes more than this
/// fraction of the total mass is flagged as unstable (heavy tail).
pub const GAUGE_DOMINANCE_FLAG: f64 = 0.01;

/// Censored-path fraction above which estimates abort.
pub const MAX_CENSORED_FRACTION: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum McError {
    #[error("too many censored paths: fraction {fraction:.3e} exceeds {MAX_CENSORED_FRACTION:.0e}")]
    TooManyCensored { fraction: f64 },
    #[error("gauge overflow: exponent {exponent:.3} exceeds {GAUGE_EXP_LIMIT}")]
    GaugeOverflow { exponent: f64 },
    #[error("path functional requires an exited path")]
    NotExited,
    #[error("forcing field required (problem is not in linear mode)")]
    NotLinearMode,
    #[error(transparent)]
    Sde(#[from] SdeError),
}

/// Monte Carlo statistic with a fixed 95% normal interval.
#[derive(Clone, Copy, Debug)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub n_censored: usize,
    pub ci95: (f64, f64),
}

impl McEstimate {
    fn from_welford(w: &Welford, n_censored: usize) -> Self {
        let mean = w.mean();
        let se = w.std_error();
        McEstimate {
            mean,
            std_error: se,
            n_paths: w.count() as usize,
            n_censored,
            ci95: (mean - 1.96 * se, mean + 1.96 * se),
        }
    }
}

/// Streaming mean/variance accumulator with exact deterministic merge.
#[derive(Clone, Copy, Debug, Default)]
pub struct Welford {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Welford) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n1 = self.n as f64;
        let n2 = other.n as f64;
        let delta = other.mean - self.mean;
        let n = n1 + n2;
        self.mean += delta * n2 / n;
        self.m2 += other.m2 + delta * delta * n1 * n2 / n;
        self.n += other.n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn variance(&self) -> f64 {
        if self.n > 1 {
            self.m2 / (self.n - 1) as f64
        } else {
            0.0
        }
    }

    pub fn std_error(&self) -> f64 {
        (self.variance() / self.n.max(1) as f64).sqrt()
    }
}

/// Per-path outcome of a functional evaluation.
struct PathValue {
    value: f64,
    censored: bool,
    /// Final gauge exponent (0 when no gauge is involved).
    exponent: f64,
}

struct BlockStat {
    w: Welford,
    censored: usize,
    max_exponent: f64,
    max_value: f64,
    sum_value: f64,
}

/// Runs `n_paths` independent paths (seeded `(root, STREAM_PATH, i)`), in
/// blocks, reducing in fixed path order.
fn run_paths<F>(n_paths: usize, d: usize, seed: u64, eval: F) -> Result<Vec<BlockStat>, McError>
where
    F: Fn(&mut ChaChaNoise, &mut WalkScratch) -> Result<PathValue, McError> + Sync,
{
    const BLOCK: usize = 1024;
    let n_blocks = n_paths.div_ceil(BLOCK);
    let results: Vec<Result<BlockStat, McError>> = (0..n_blocks)
        .into_par_iter()
        .map(|blk| {
            let lo = blk * BLOCK;
            let hi = ((blk + 1) * BLOCK).min(n_paths);
            let mut stat = BlockStat {
                w: Welford::default(),
                censored: 0,
                max_exponent: f64::NEG_INFINITY,
                max_value: f64::NEG_INFINITY,
                sum_value: 0.0,
            };
            let mut scratch = WalkScratch::new(d);
            for i in lo..hi {
                let mut noise = ChaChaNoise::for_path(seed, &[STREAM_PATH], i as u64);
                let pv = eval(&mut noise, &mut scratch)?;
                stat.w.push(pv.value);
                stat.censored += pv.censored as usize;
                stat.max_exponent = stat.max_exponent.max(pv.exponent);
                stat.max_value = stat.max_value.max(pv.value);
                stat.sum_value += pv.value;
            }
            Ok(stat)
        })
        .collect();
    results.into_iter().collect()
}

fn merge_blocks(blocks: Vec<BlockStat>) -> (Welford, usize, f64, f64, f64) {
    let mut w = Welford::default();
    let mut censored = 0usize;
    let mut max_exp = f64::NEG_INFINITY;
    let mut max_val = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for b in &blocks {
        w.merge(&b.w);
        censored += b.censored;
        max_exp = max_exp.max(b.max_exponent);
        max_val = max_val.max(b.max_value);
        sum += b.sum_value;
    }
    (w, censored, max_exp, max_val, sum)
}

fn check_censoring(censored: usize, n: usize) -> Result<(), McError> {
    let fraction = censored as f64 / n as f64;
    if fraction > MAX_CENSORED_FRACTION {
        return Err(McError::TooManyCensored { fraction });
    }
    Ok(())
}

/// Functional of one recorded path: `phi(exit) + sum_k exp(Q_k) F(X_k) dt_k`
/// with the left-point gauge `Q_k = sum_{j<k} q(X_j) dt_j`. The gauge weights
/// only the running term; the boundary term is raw.
pub fn path_functional_linear(
    path: &crate::sde::PathSample,
    p: &EllipticProblem,
) -> Result<f64, McError> {
    let exit = path.exit.as_ref().ok_or(McError::NotExited)?;
    let forcing = p.forcing().ok_or(McError::NotLinearMode)?;
    let mut q_int = 0.0;
    let mut f_int = 0.0;
    for k in 0..path.n_steps() {
        let x = path.state(k);
        let dt = path.times[k + 1] - path.times[k];
        if q_int > GAUGE_EXP_LIMIT {
            return Err(McError::GaugeOverflow { exponent: q_int });
        }
        f_int += q_int.exp() * forcing.eval(x) * dt;
        q_int += p.q.eval(x) * dt;
    }
    Ok(p.phi.eval(&exit.point) + f_int)
}

/// Estimates `E_x[phi(X_tau) + int exp(int q) F dt]` at each point, with
/// common random numbers across points. Censored paths (if within budget)
/// contribute `phi` at their last interior state.
pub fn solve_linear(
    p: &EllipticProblem,
    points: &[Vec<f64>],
    n_paths: usize,
    cfg: &SimConfig,
) -> Result<Vec<McEstimate>, McError> {
    let forcing = p.forcing().ok_or(McError::NotLinearMode)?;
    let engine = Engine::new(p, cfg)?;
    let skip_forcing = forcing.is_zero();
    let mut out = Vec::with_capacity(points.len());
    for x0 in points {
        let blocks = run_paths(n_paths, p.dim, cfg.seed, |noise, scratch| {
            let mut q_int = 0.0;
            let mut f_int = 0.0;
            let mut overflow = false;
            let end = engine.walk(x0, noise, scratch, |rec| {
                if !skip_forcing {
                    if q_int > GAUGE_EXP_LIMIT {
                        overflow = true;
                        return false;
                    }
                    f_int += q_int.exp() * forcing.eval(rec.x) * rec.dt_quad;
                }
                q_int += p.q.eval(rec.x) * rec.dt_quad;
                true
            })?;
            if overflow {
                return Err(McError::GaugeOverflow { exponent: q_int });
            }
            let (boundary, censored) = match end {
                WalkEnd::Exit { point, .. } => (p.phi.eval(&point), false),
                WalkEnd::Censored { last, .. } => (p.phi.eval(&last), true),
                WalkEnd::Aborted => unreachable!(),
            };
            Ok(PathValue { value: boundary + f_int, censored, exponent: 0.0 })
        })?;
        let (w, censored, _, _, _) = merge_blocks(blocks);
        check_censoring(censored, n_paths)?;
        out.push(McEstimate::from_welford(&w, censored));
    }
    Ok(out)
}

/// Estimates the homogeneous gauged solve `E_x[exp(int_0^tau q) phi(X_tau)]`
/// (`L2 u = 0` in `D`, `u = phi` on the boundary). The forcing is ignored.
pub fn solve_linear_gauged(
    p: &EllipticProblem,
    points: &[Vec<f64>],
    n_paths: usize,
    cfg: &SimConfig,
) -> Result<Vec<McEstimate>, McError> {
    let engine = Engine::new(p, cfg)?;
    let skip_q = p.q.is_zero();
    let mut out = Vec::with_capacity(points.len());
    for x0 in points {
        let blocks = run_paths(n_paths, p.dim, cfg.seed, |noise, scratch| {
            let mut q_int = 0.0;
            let end = engine.walk(x0, noise, scratch, |rec| {
                if !skip_q {
                    q_int += p.q.eval(rec.x) * rec.dt_quad;
                }
                true
            })?;
            if q_int > GAUGE_EXP_LIMIT {
                return Err(McError::GaugeOverflow { exponent: q_int });
            }
            let (boundary, censored) = match end {
                WalkEnd::Exit { point, .. } => (p.phi.eval(&point), false),
                WalkEnd::Censored { last, .. } => (p.phi.eval(&last), true),
                WalkEnd::Aborted => unreachable!(),
            };
            Ok(PathValue { value: q_int.exp() * boundary, censored, exponent: q_int })
        })?;
        let (w, censored, _, _, _) = merge_blocks(blocks);
        check_censoring(censored, n_paths)?;
        out.push(McEstimate::from_welford(&w, censored));
    }
    Ok(out)
}

/// Exponential-gauge estimate with heavy-tail diagnostics.
#[derive(Clone, Debug)]
pub struct GaugeEstimate {
    pub estimate: McEstimate,
    /// Largest exit-time exponent observed across paths.
    pub max_exponent: f64,
    /// Fraction of the total mass carried by the single largest path weight.
    pub max_term_fraction: f64,
}

impl GaugeEstimate {
    /// Heavy-tail flag: one path dominates the ensemble, so the estimate is
    /// numerically unstable (the integrability hypothesis is in doubt).
    pub fn flagged_unstable(&self) -> bool {
        self.max_term_fraction > GAUGE_DOMINANCE_FLAG
    }
}

/// Monte Carlo estimate of `E_x[exp(int_0^tau (q + extra)(X_s) ds)]`,
/// reporting the max observed exponent and the largest single-path share.
pub fn estimate_gauge(
    p: &EllipticProblem,
    x: &[f64],
    extra: &ScalarField,
    n_paths: usize,
    cfg: &SimConfig,
) -> Result<GaugeEstimate, McError> {
    let engine = Engine::new(p, cfg)?;
    let blocks = run_paths(n_paths, p.dim, cfg.seed, |noise, scratch| {
        let mut q_int = 0.0;
        let end = engine.walk(x, noise, scratch, |rec| {
            q_int += (p.q.eval(rec.x) + extra.eval(rec.x)) * rec.dt_quad;
            q_int <= GAUGE_EXP_LIMIT
        })?;
        if q_int > GAUGE_EXP_LIMIT || matches!(end, WalkEnd::Aborted) {
            return Err(McError::GaugeOverflow { exponent: q_int });
        }
        let censored = matches!(end, WalkEnd::Censored { .. });
        Ok(PathValue { value: q_int.exp(), censored, exponent: q_int })
    })?;
    let (w, censored, max_exp, max_val, sum) = merge_blocks(blocks);
    check_censoring(censored, n_paths)?;
    Ok(GaugeEstimate {
        estimate: McEstimate::from_welford(&w, censored),
        max_exponent: max_exp,
        max_term_fraction: if sum > 0.0 { max_val / sum } else { 0.0 },
    })
}

/// `solve_linear` restricted to the grid protocol used by the Picard solver:
/// estimates at every interior node of `grid_like`, boundary extension at the
/// rest. Used for initial guesses; see the bsde module.
pub(crate) fn gauged_boundary_on_grid(
    p: &EllipticProblem,
    grid: &crate::grid::GridFunction,
    n_paths: usize,
    cfg: &SimConfig,
    stream: &[u64],
) -> Result<(crate::grid::GridFunction, crate::grid::GridFunction, usize), McError> {
    let engine = Engine::new(p, cfg)?;
    let skip_q = p.q.is_zero();
    let n_nodes = grid.len();
    let node_results: Vec<Result<(f64, f64, usize), McError>> = (0..n_nodes)
        .into_par_iter()
        .map(|idx| {
            let x0 = grid.node_point(idx);
            if !p.domain.contains(&x0) {
                return Ok((p.phi.eval(&x0), 0.0, 0));
            }
            let mut w = Welford::default();
            let mut censored = 0usize;
            let mut scratch = WalkScratch::new(p.dim);
            for i in 0..n_paths {
                let mut noise = ChaChaNoise::for_path(cfg.seed, stream, i as u64);
                let mut q_int = 0.0;
                let end = engine.walk(&x0, &mut noise, &mut scratch, |rec| {
                    if !skip_q {
                        q_int += p.q.eval(rec.x) * rec.dt_quad;
                    }
                    true
                })?;
                if q_int > GAUGE_EXP_LIMIT {
                    return Err(McError::GaugeOverflow { exponent: q_int });
                }
                let boundary = match end {
                    WalkEnd::Exit { point, .. } => p.phi.eval(&point),
                    WalkEnd::Censored { last, .. } => {
                        censored += 1;
                        p.phi.eval(&last)
                    }
                    WalkEnd::Aborted => unreachable!(),
                };
                w.push(q_int.exp() * boundary);
            }
            Ok((w.mean(), w.std_error(), censored))
        })
        .collect();
    let mut values = Vec::with_capacity(n_nodes);
    let mut ses = Vec::with_capacity(n_nodes);
    let mut censored_total = 0usize;
    for r in node_results {
        let (v, se, c) = r?;
        values.push(v);
        ses.push(se);
        censored_total += c;
    }
    let (lo, hi) = grid.bbox();
    let u = crate::grid::GridFunction::new(lo.to_vec(), hi.to_vec(), grid.dims().to_vec(), values);
    let se = crate::grid::GridFunction::new(lo.to_vec(), hi.to_vec(), grid.dims().to_vec(), ses);
    Ok((u, se, censored_total))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::problem::{MatrixField, VectorField};
    use crate::rng::ChaChaNoise;
    use crate::sde::simulate_path;

    fn ball2(q: f64, forcing: f64, phi: ScalarField) -> EllipticProblem {
        EllipticProblem::linear(
            MatrixField::identity(2),
            VectorField::zero(2),
            VectorField::zero(2),
            ScalarField::constant(2, q),
            ScalarField::constant(2, forcing),
            phi,
            Domain::ball(vec![0.0, 0.0], 1.0),
            1.0,
            1.0,
        )
    }

    #[test]
    fn constant_boundary_is_reproduced_exactly_per_path() {
        let p = ball2(0.0, 0.0, ScalarField::constant(2, 3.5));
        let cfg = SimConfig::new(5e-3, 2);
        for i in 0..20 {
            let mut noise = ChaChaNoise::for_path(2, &[STREAM_PATH], i);
            let path = simulate_path(&p, &[0.3, 0.1], &cfg, &mut noise).unwrap();
            assert_eq!(path_functional_linear(&path, &p).unwrap(), 3.5);
        }
    }

    #[test]
    fn f_one_q_zero_returns_phi_plus_duration() {
        let p = ball2(0.0, 1.0, ScalarField::constant(2, 2.0));
        let cfg = SimConfig::new(5e-3, 3);
        let mut noise = ChaChaNoise::for_path(3, &[STREAM_PATH], 0);
        let path = simulate_path(&p, &[0.0, 0.0], &cfg, &mut noise).unwrap();
        let tau = path.exit.as_ref().unwrap().time;
        let v = path_functional_linear(&path, &p).unwrap();
        assert!((v - (2.0 + tau)).abs() < 1e-12);
    }

    #[test]
    fn harmonic_estimate_matches_x1() {
        let phi = ScalarField::analytic(2, |x: &[f64]| x[0]);
        let p = ball2(0.0, 0.0, phi);
        let cfg = SimConfig::new(2e-3, 11);
        let est = solve_linear(&p, &[vec![0.3, 0.0]], 4000, &cfg).unwrap();
        let e = &est[0];
        assert!((e.mean - 0.3).abs() <= 3.0 * e.std_error + 0.01, "{e:?}");
        // CI bookkeeping.
        assert!((e.ci95.1 - e.ci95.0 - 2.0 * 1.96 * e.std_error).abs() < 1e-12);
    }

    #[test]
    fn f_zero_branch_ignores_q_entirely() {
        // With F = 0 the plain functional is exactly E[phi], whatever q is.
        let p = ball2(-1.0, 0.0, ScalarField::constant(2, 1.0));
        let cfg = SimConfig::new(5e-3, 7);
        let est = solve_linear(&p, &[vec![0.0, 0.0]], 500, &cfg).unwrap();
        assert_eq!(est[0].mean, 1.0);
        assert_eq!(est[0].std_error, 0.0);
    }

    #[test]
    fn gauge_of_zero_potential_is_one_with_zero_variance() {
        let p = ball2(0.0, 0.0, ScalarField::constant(2, 1.0));
        let cfg = SimConfig::new(5e-3, 7);
        let g = estimate_gauge(&p, &[0.2, 0.2], &ScalarField::constant(2, 0.0), 300, &cfg)
            .unwrap();
        assert_eq!(g.estimate.mean, 1.0);
        assert_eq!(g.estimate.std_error, 0.0);
        assert_eq!(g.max_exponent, 0.0);
        assert!(!g.flagged_unstable() || g.estimate.n_paths < 100);
    }

    #[test]
    fn linearity_under_common_random_numbers() {
        let phi1 = ScalarField::analytic(2, |x: &[f64]| x[0]);
        let phi2 = ScalarField::analytic(2, |x: &[f64]| 0.5 * x[1] - 1.0);
        let phi_sum = ScalarField::analytic(2, |x: &[f64]| x[0] + 0.5 * x[1] - 1.0);
        let mk = |phi: ScalarField, forcing: f64| ball2(0.0, forcing, phi);
        let cfg = SimConfig::new(5e-3, 13);
        let pts = vec![vec![0.1, -0.2]];
        let n = 400;
        let e1 = solve_linear(&mk(phi1, 1.0), &pts, n, &cfg).unwrap()[0].mean;
        let e2 = solve_linear(&mk(phi2, 0.5), &pts, n, &cfg).unwrap()[0].mean;
        let esum = solve_linear(&mk(phi_sum, 1.5), &pts, n, &cfg).unwrap()[0].mean;
        assert!((esum - (e1 + e2)).abs() < 1e-12, "{esum} vs {}", e1 + e2);
    }

    #[test]
    fn nonnegative_functional_for_nonnegative_forcing() {
        let p = ball2(0.0, 2.0, ScalarField::constant(2, 0.0));
        let cfg = SimConfig::new(5e-3, 23);
        for i in 0..50 {
            let mut noise = ChaChaNoise::for_path(23, &[STREAM_PATH], i);
            let path = simulate_path(&p, &[0.4, 0.4], &cfg, &mut noise).unwrap();
            assert!(path_functional_linear(&path, &p).unwrap() >= 0.0);
        }
    }
}
