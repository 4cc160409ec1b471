//! Geometry of the bounded domain `D`: membership, boundary distance and
//! exit-segment projection.
//!
//! Points exactly on the boundary count as *exited* (`contains` is strict),
//! matching the first-exit convention of the path engine.

use crate::problem::ScalarField;
use std::sync::Arc;

#[derive(Debug, thiserror::Error)]
pub enum DomainError {
    #[error("point {0:?} is outside the domain")]
    OutsideDomain(Vec<f64>),
    #[error("exit segment does not cross the boundary (inconsistent signed distance)")]
    NoCrossing,
}

#[derive(Clone)]
enum Shape {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Implicit { sd: Arc<ScalarField>, bbox: (Vec<f64>, Vec<f64>), assume_regular: bool },
}

/// Bounded domain with a computable signed distance (negative inside).
#[derive(Clone)]
pub struct Domain {
    dim: usize,
    shape: Shape,
}

impl Domain {
    pub fn ball(center: Vec<f64>, radius: f64) -> Self {
        assert!(radius > 0.0, "ball radius must be positive");
        Domain { dim: center.len(), shape: Shape::Ball { center, radius } }
    }

    pub fn rect(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(&hi).all(|(a, b)| a < b), "box must have positive extent");
        Domain { dim: lo.len(), shape: Shape::Box { lo, hi } }
    }

    /// Domain given by a signed-distance field (negative inside). Boundary
    /// regularity is the caller's responsibility; `assume_regular` records
    /// that the caller accepted it.
    pub fn implicit(
        sd: ScalarField,
        bbox: (Vec<f64>, Vec<f64>),
        assume_regular: bool,
    ) -> Self {
        let dim = bbox.0.len();
        assert_eq!(bbox.1.len(), dim);
        Domain { dim, shape: Shape::Implicit { sd: Arc::new(sd), bbox, assume_regular } }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_box(&self) -> bool {
        matches!(self.shape, Shape::Box { .. })
    }

    pub fn assume_regular(&self) -> bool {
        match &self.shape {
            Shape::Implicit { assume_regular, .. } => *assume_regular,
            _ => true,
        }
    }

    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match &self.shape {
            Shape::Ball { center, radius } => dist(x, center) - radius,
            Shape::Box { lo, hi } => {
                // Exact SDF of an axis-aligned box.
                let mut inside_max = f64::NEG_INFINITY;
                let mut out_sq = 0.0;
                for i in 0..x.len() {
                    let d = (lo[i] - x[i]).max(x[i] - hi[i]);
                    if d > 0.0 {
                        out_sq += d * d;
                    }
                    inside_max = inside_max.max(d);
                }
                if out_sq > 0.0 {
                    out_sq.sqrt()
                } else {
                    inside_max
                }
            }
            Shape::Implicit { sd, .. } => sd.eval(x),
        }
    }

    /// Strict interior test; boundary points report `false`.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.signed_distance(x) < 0.0
    }

    /// Distance from an interior point to the boundary.
    pub fn boundary_distance(&self, x: &[f64]) -> Result<f64, DomainError> {
        if !self.contains(x) {
            return Err(DomainError::OutsideDomain(x.to_vec()));
        }
        Ok(match &self.shape {
            Shape::Ball { center, radius } => radius - dist(x, center),
            Shape::Box { lo, hi } => {
                let mut m = f64::INFINITY;
                for i in 0..x.len() {
                    m = m.min(x[i] - lo[i]).min(hi[i] - x[i]);
                }
                m
            }
            Shape::Implicit { sd, .. } => sd.eval(x).abs(),
        })
    }

    /// Intersection of the segment `[x_in, x_out]` with the boundary.
    /// Closed form for ball/box, bisection to 1e-12 for implicit shapes.
    pub fn project_exit(&self, x_in: &[f64], x_out: &[f64]) -> Result<Vec<f64>, DomainError> {
        if !self.contains(x_in) {
            return Err(DomainError::OutsideDomain(x_in.to_vec()));
        }
        if self.contains(x_out) {
            return Err(DomainError::NoCrossing);
        }
        let theta = self.exit_fraction(x_in, x_out)?;
        Ok(lerp(x_in, x_out, theta))
    }

    /// Affine coefficient `theta` in [0,1] with `x_in + theta (x_out - x_in)`
    /// on the boundary.
    pub fn exit_fraction(&self, x_in: &[f64], x_out: &[f64]) -> Result<f64, DomainError> {
        match &self.shape {
            Shape::Ball { center, radius } => {
                // |p + t d|^2 = r^2 with p = x_in - c, d = x_out - x_in.
                let mut pp = 0.0;
                let mut pd = 0.0;
                let mut dd = 0.0;
                for i in 0..x_in.len() {
                    let p = x_in[i] - center[i];
                    let d = x_out[i] - x_in[i];
                    pp += p * p;
                    pd += p * d;
                    dd += d * d;
                }
                if dd == 0.0 {
                    return Err(DomainError::NoCrossing);
                }
                let disc = pd * pd - dd * (pp - radius * radius);
                if disc < 0.0 {
                    return Err(DomainError::NoCrossing);
                }
                // One root is negative, one positive; take the positive.
                let t = (-pd + disc.sqrt()) / dd;
                Ok(t.clamp(0.0, 1.0))
            }
            Shape::Box { lo, hi } => {
                let mut t = f64::INFINITY;
                for i in 0..x_in.len() {
                    let d = x_out[i] - x_in[i];
                    if d > 0.0 {
                        t = t.min((hi[i] - x_in[i]) / d);
                    } else if d < 0.0 {
                        t = t.min((lo[i] - x_in[i]) / d);
                    }
                }
                if !t.is_finite() {
                    return Err(DomainError::NoCrossing);
                }
                Ok(t.clamp(0.0, 1.0))
            }
            Shape::Implicit { sd, .. } => {
                let f_in = sd.eval(x_in);
                let f_out = sd.eval(x_out);
                if f_in >= 0.0 || f_out < 0.0 {
                    return Err(DomainError::NoCrossing);
                }
                let mut a = 0.0;
                let mut b = 1.0;
                for _ in 0..100 {
                    if b - a <= 1e-12 {
                        break;
                    }
                    let m = 0.5 * (a + b);
                    let fm = sd.eval(&lerp(x_in, x_out, m));
                    if fm < 0.0 {
                        a = m;
                    } else {
                        b = m;
                    }
                }
                Ok(b)
            }
        }
    }

    /// Nearest boundary point (used for Dirichlet injection at masked grid
    /// nodes and for bridge-exit placement).
    pub fn project_to_boundary(&self, x: &[f64]) -> Vec<f64> {
        match &self.shape {
            Shape::Ball { center, radius } => {
                let r = dist(x, center);
                if r == 0.0 {
                    // Center: pick the +e1 pole.
                    let mut p = center.clone();
                    p[0] += radius;
                    return p;
                }
                let s = radius / r;
                x.iter().zip(center).map(|(xi, ci)| ci + (xi - ci) * s).collect()
            }
            Shape::Box { lo, hi } => {
                if !self.contains(x) {
                    // Outside or on the boundary: clamp componentwise.
                    return x
                        .iter()
                        .enumerate()
                        .map(|(i, &xi)| xi.clamp(lo[i], hi[i]))
                        .collect();
                }
                // Inside: push to the nearest face.
                let mut best_axis = 0;
                let mut best_val = lo[0];
                let mut best_dist = f64::INFINITY;
                for i in 0..x.len() {
                    if x[i] - lo[i] < best_dist {
                        best_dist = x[i] - lo[i];
                        best_axis = i;
                        best_val = lo[i];
                    }
                    if hi[i] - x[i] < best_dist {
                        best_dist = hi[i] - x[i];
                        best_axis = i;
                        best_val = hi[i];
                    }
                }
                let mut p = x.to_vec();
                p[best_axis] = best_val;
                p
            }
            Shape::Implicit { sd, .. } => {
                // Damped sd-gradient descent; adequate for near-boundary points.
                let mut p = x.to_vec();
                let h = 1e-6;
                for _ in 0..40 {
                    let f = sd.eval(&p);
                    if f.abs() < 1e-10 {
                        break;
                    }
                    let mut g = vec![0.0; p.len()];
                    let mut gg = 0.0;
                    for i in 0..p.len() {
                        let mut pp = p.clone();
                        pp[i] += h;
                        let fp = sd.eval(&pp);
                        pp[i] -= 2.0 * h;
                        let fm = sd.eval(&pp);
                        g[i] = (fp - fm) / (2.0 * h);
                        gg += g[i] * g[i];
                    }
                    if gg < 1e-12 {
                        break;
                    }
                    for i in 0..p.len() {
                        p[i] -= f * g[i] / gg;
                    }
                }
                p
            }
        }
    }

    /// Tight axis-aligned bounding box `(lo, hi)`.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match &self.shape {
            Shape::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Shape::Box { lo, hi } => (lo.clone(), hi.clone()),
            Shape::Implicit { bbox, .. } => bbox.clone(),
        }
    }
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn lerp(a: &[f64], b: &[f64], t: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + t * (y - x)).collect()
}
