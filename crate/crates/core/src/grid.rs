//! Grid-backed scalar fields: multilinear interpolation, finite-difference
//! node gradients, and the flat binary on-disk format shared by coefficient
//! fields and solver outputs.

use std::io::{Read, Write};
use std::path::Path;

/// Scalar field sampled on a regular node grid over an axis-aligned box.
///
/// Values are stored row-major with the first axis slowest. Interpolation is
/// multilinear (exact on multilinear functions); evaluation outside the box
/// returns `outside_value`.
#[derive(Clone, Debug)]
pub struct GridFunction {
    lo: Vec<f64>,
    hi: Vec<f64>,
    dims: Vec<usize>,
    values: Vec<f64>,
    outside_value: f64,
}

impl GridFunction {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, dims: Vec<usize>, values: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert_eq!(lo.len(), dims.len());
        assert!(dims.iter().all(|&n| n >= 2), "need at least two nodes per axis");
        assert_eq!(values.len(), dims.iter().product::<usize>());
        GridFunction { lo, hi, dims, values, outside_value: 0.0 }
    }

    pub fn zeros(lo: Vec<f64>, hi: Vec<f64>, dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Self::new(lo, hi, dims, vec![0.0; n])
    }

    /// Samples `f` at every node.
    pub fn from_fn(
        lo: Vec<f64>,
        hi: Vec<f64>,
        dims: Vec<usize>,
        mut f: impl FnMut(&[f64]) -> f64,
    ) -> Self {
        let mut g = Self::zeros(lo, hi, dims);
        let mut x = vec![0.0; g.dim()];
        for idx in 0..g.len() {
            g.node_point_into(idx, &mut x);
            g.values[idx] = f(&x);
        }
        g
    }

    pub fn with_outside_value(mut self, v: f64) -> Self {
        self.outside_value = v;
        self
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bbox(&self) -> (&[f64], &[f64]) {
        (&self.lo, &self.hi)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.dims[axis] - 1) as f64
    }

    /// Strides of the row-major layout (first axis slowest).
    pub fn strides(&self) -> Vec<usize> {
        let d = self.dim();
        let mut s = vec![1usize; d];
        for k in (0..d.saturating_sub(1)).rev() {
            s[k] = s[k + 1] * self.dims[k + 1];
        }
        s
    }

    pub fn node_point(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_point_into(idx, &mut x);
        x
    }

    pub fn node_point_into(&self, idx: usize, x: &mut [f64]) {
        let mut rem = idx;
        let strides = self.strides();
        for k in 0..self.dim() {
            let i = rem / strides[k];
            rem %= strides[k];
            x[k] = self.lo[k] + i as f64 * self.spacing(k);
        }
    }

    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        let mut rem = idx;
        let strides = self.strides();
        let mut mi = vec![0usize; self.dim()];
        for k in 0..self.dim() {
            mi[k] = rem / strides[k];
            rem %= strides[k];
        }
        mi
    }

    pub fn flat_index(&self, mi: &[usize]) -> usize {
        let strides = self.strides();
        mi.iter().zip(&strides).map(|(i, s)| i * s).sum()
    }

    /// Multilinear interpolation; `outside_value` beyond the box.
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let d = self.dim();
        // Cell index and local coordinate per axis.
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        assert!(d <= 8, "grid interpolation supports up to 8 axes");
        for k in 0..d {
            if x[k] < self.lo[k] || x[k] > self.hi[k] {
                return self.outside_value;
            }
            let h = self.spacing(k);
            let u = (x[k] - self.lo[k]) / h;
            let mut c = u.floor() as usize;
            if c >= self.dims[k] - 1 {
                c = self.dims[k] - 2;
            }
            base[k] = c;
            frac[k] = (u - c as f64).clamp(0.0, 1.0);
        }
        let strides = self.strides();
        let corners = 1usize << d;
        let mut acc = 0.0;
        for mask in 0..corners {
            let mut w = 1.0;
            let mut idx = 0usize;
            for k in 0..d {
                if mask >> k & 1 == 1 {
                    w *= frac[k];
                    idx += (base[k] + 1) * strides[k];
                } else {
                    w *= 1.0 - frac[k];
                    idx += base[k] * strides[k];
                }
            }
            acc += w * self.values[idx];
        }
        acc
    }

    /// Per-axis finite-difference gradients at the nodes: central in the
    /// interior, one-sided within one cell of the box faces. Exact on linear
    /// functions.
    pub fn gradient_grids(&self) -> Vec<GridFunction> {
        let d = self.dim();
        let strides = self.strides();
        (0..d)
            .map(|axis| {
                let h = self.spacing(axis);
                let s = strides[axis];
                let n = self.dims[axis];
                let mut g = GridFunction::zeros(self.lo.clone(), self.hi.clone(), self.dims.clone());
                for idx in 0..self.len() {
                    let i = idx / s % n;
                    g.values[idx] = if i == 0 {
                        (self.values[idx + s] - self.values[idx]) / h
                    } else if i == n - 1 {
                        (self.values[idx] - self.values[idx - s]) / h
                    } else {
                        (self.values[idx + s] - self.values[idx - s]) / (2.0 * h)
                    };
                }
                g.outside_value = 0.0;
                g
            })
            .collect()
    }

    pub fn sup_diff(&self, other: &GridFunction) -> f64 {
        assert_eq!(self.dims, other.dims);
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Writes the flat binary format: `d: u32`, `dims: u32 x d`,
    /// `(lo_i, hi_i): f64 x 2d`, then row-major `f64` values, little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&(self.dim() as u32).to_le_bytes())?;
        for &n in &self.dims {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        for k in 0..self.dim() {
            w.write_all(&self.lo[k].to_le_bytes())?;
            w.write_all(&self.hi[k].to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)
    }

    pub fn read_from(r: &mut impl Read) -> std::io::Result<Self> {
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b4)?;
        let d = u32::from_le_bytes(b4) as usize;
        if d == 0 || d > 8 {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("unsupported grid dimension {d}"),
            ));
        }
        let mut dims = Vec::with_capacity(d);
        for _ in 0..d {
            r.read_exact(&mut b4)?;
            dims.push(u32::from_le_bytes(b4) as usize);
        }
        let mut lo = Vec::with_capacity(d);
        let mut hi = Vec::with_capacity(d);
        for _ in 0..d {
            r.read_exact(&mut b8)?;
            lo.push(f64::from_le_bytes(b8));
            r.read_exact(&mut b8)?;
            hi.push(f64::from_le_bytes(b8));
        }
        let n: usize = dims.iter().product();
        if dims.iter().any(|&m| m < 2) {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                "grid needs at least two nodes per axis",
            ));
        }
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        Ok(GridFunction::new(lo, hi, dims, values))
    }

    pub fn read_file(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_exact_on_multilinear() {
        // u(x, y) = 2 + 3x - y + 0.5xy is multilinear: reproduced exactly.
        let f = |x: &[f64]| 2.0 + 3.0 * x[0] - x[1] + 0.5 * x[0] * x[1];
        let g = GridFunction::from_fn(vec![-1.0, 0.0], vec![1.0, 2.0], vec![5, 7], f);
        for &p in &[[0.3, 0.7], [-0.9, 1.9], [0.0, 0.0], [1.0, 2.0], [-1.0, 0.33]] {
            assert!((g.eval(&p) - f(&p)).abs() < 1e-13, "at {p:?}");
        }
    }

    #[test]
    fn gradient_exact_on_linear() {
        let f = |x: &[f64]| 1.0 + 2.0 * x[0] - 3.0 * x[1];
        let g = GridFunction::from_fn(vec![0.0, 0.0], vec![1.0, 1.0], vec![6, 6], f);
        let grads = g.gradient_grids();
        for idx in 0..g.len() {
            assert!((grads[0].values()[idx] - 2.0).abs() < 1e-12);
            assert!((grads[1].values()[idx] + 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_value_returned_beyond_box() {
        let g = GridFunction::from_fn(vec![0.0], vec![1.0], vec![3], |x| x[0])
            .with_outside_value(9.0);
        assert_eq!(g.eval(&[1.5]), 9.0);
        assert_eq!(g.eval(&[-0.1]), 9.0);
        assert!((g.eval(&[0.25]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn file_roundtrip() {
        let g = GridFunction::from_fn(vec![0.0, -1.0], vec![2.0, 1.0], vec![4, 3], |x| {
            x[0] * 10.0 + x[1]
        });
        let dir = std::env::temp_dir().join("elliptic_mc_grid_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.grid");
        g.write_file(&path).unwrap();
        let h = GridFunction::read_file(&path).unwrap();
        assert_eq!(g.dims(), h.dims());
        assert_eq!(g.values(), h.values());
        let (lo, hi) = h.bbox();
        assert_eq!(lo, &[0.0, -1.0]);
        assert_eq!(hi, &[2.0, 1.0]);
    }
}
