//! Small dense and sparse linear algebra used by the path engine and the
//! finite-difference solvers: Cholesky factors of spot diffusion matrices,
//! spectral bounds, Jacobi-preconditioned CG/BiCGStab on CSR matrices, and a
//! dense LU fallback for tiny systems. Everything is deterministic.

/// In-place lower Cholesky of a symmetric `d x d` row-major matrix.
/// Returns `Err(pivot)` with the offending pivot when the matrix is not
/// positive definite beyond `pivot_floor`.
pub fn cholesky_lower(a: &[f64], d: usize, pivot_floor: f64, out: &mut [f64]) -> Result<(), f64> {
    debug_assert_eq!(a.len(), d * d);
    debug_assert_eq!(out.len(), d * d);
    out.fill(0.0);
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= out[i * d + k] * out[j * d + k];
            }
            if i == j {
                if s <= pivot_floor {
                    return Err(s);
                }
                out[i * d + i] = s.sqrt();
            } else {
                out[i * d + j] = s / out[j * d + j];
            }
        }
    }
    Ok(())
}

/// Largest eigenvalue of a symmetric matrix: closed form for d <= 2, power
/// iteration with a fixed start vector otherwise.
pub fn spectral_bound(a: &[f64], d: usize) -> f64 {
    match d {
        1 => a[0],
        2 => {
            let half_tr = 0.5 * (a[0] + a[3]);
            let det_part = 0.25 * (a[0] - a[3]) * (a[0] - a[3]) + a[1] * a[1];
            half_tr + det_part.sqrt()
        }
        _ => {
            let mut v: Vec<f64> = (0..d).map(|i| 1.0 + 0.01 * i as f64).collect();
            let mut w = vec![0.0; d];
            let mut lam = 0.0;
            for _ in 0..64 {
                for i in 0..d {
                    w[i] = (0..d).map(|j| a[i * d + j] * v[j]).sum();
                }
                let n = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n == 0.0 {
                    return 0.0;
                }
                for i in 0..d {
                    v[i] = w[i] / n;
                }
                lam = n;
            }
            lam
        }
    }
}

/// Compressed sparse rows with explicit diagonal access.
#[derive(Clone, Debug)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Builds from per-row (col, val) lists; entries within a row are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            let mut k = 0;
            while k < row.len() {
                let col = row[k].0;
                let mut v = 0.0;
                while k < row.len() && row[k].0 == col {
                    v += row[k].1;
                    k += 1;
                }
                cols.push(col);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Csr { n, row_ptr, cols, vals }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.cols[k] == i {
                    d[i] = self.vals[k];
                }
            }
        }
        d
    }

    pub fn max_asymmetry(&self) -> f64 {
        use std::collections::HashMap;
        let mut map: HashMap<(usize, usize), f64> = HashMap::new();
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                map.insert((i, self.cols[k]), self.vals[k]);
            }
        }
        let mut worst: f64 = 0.0;
        for (&(i, j), &v) in &map {
            let vt = map.get(&(j, i)).copied().unwrap_or(0.0);
            worst = worst.max((v - vt).abs());
        }
        worst
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.n * self.n];
        for i in 0..self.n {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                m[i * self.n + self.cols[k]] = self.vals[k];
            }
        }
        m
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterStats {
    pub iterations: usize,
    pub rel_residual: f64,
}

#[derive(Debug, thiserror::Error)]
#[error("iterative solver stalled at relative residual {rel_residual} after {iterations} iterations")]
pub struct SolverStall {
    pub iterations: usize,
    pub rel_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for SPD systems.
pub fn cg_jacobi(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<IterStats, SolverStall> {
    let n = a.n;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(IterStats { iterations: 0, rel_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 0..max_iters {
        let rel = norm2(&r) / bnorm;
        if rel <= rel_tol {
            return Ok(IterStats { iterations: it, rel_residual: rel });
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(SolverStall { iterations: it, rel_residual: rel });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rel = norm2(&r) / bnorm;
    if rel <= rel_tol {
        Ok(IterStats { iterations: max_iters, rel_residual: rel })
    } else {
        Err(SolverStall { iterations: max_iters, rel_residual: rel })
    }
}

/// Jacobi-preconditioned BiCGStab for nonsymmetric systems.
pub fn bicgstab_jacobi(
    a: &Csr,
    b: &[f64],
    x: &mut [f64],
    rel_tol: f64,
    max_iters: usize,
) -> Result<IterStats, SolverStall> {
    let n = a.n;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        x.fill(0.0);
        return Ok(IterStats { iterations: 0, rel_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d.abs() > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut r = vec![0.0; n];
    a.matvec(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let r0 = r.clone();
    let mut rho = 1.0;
    let mut alpha = 1.0;
    let mut omega = 1.0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    for it in 0..max_iters {
        let rel = norm2(&r) / bnorm;
        if rel <= rel_tol {
            return Ok(IterStats { iterations: it, rel_residual: rel });
        }
        let rho_new = dot(&r0, &r);
        if rho_new.abs() < 1e-300 {
            return Err(SolverStall { iterations: it, rel_residual: rel });
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        for i in 0..n {
            phat[i] = p[i] * inv_diag[i];
        }
        a.matvec(&phat, &mut v);
        let r0v = dot(&r0, &v);
        if r0v.abs() < 1e-300 {
            return Err(SolverStall { iterations: it, rel_residual: rel });
        }
        alpha = rho / r0v;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if norm2(&s) / bnorm <= rel_tol {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok(IterStats { iterations: it + 1, rel_residual: norm2(&s) / bnorm });
        }
        for i in 0..n {
            shat[i] = s[i] * inv_diag[i];
        }
        a.matvec(&shat, &mut t);
        let tt = dot(&t, &t);
        if tt == 0.0 {
            return Err(SolverStall { iterations: it, rel_residual: rel });
        }
        omega = dot(&t, &s) / tt;
        if omega == 0.0 || !omega.is_finite() {
            return Err(SolverStall { iterations: it, rel_residual: rel });
        }
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
    }
    let rel = norm2(&r) / bnorm;
    if rel <= rel_tol {
        Ok(IterStats { iterations: max_iters, rel_residual: rel })
    } else {
        Err(SolverStall { iterations: max_iters, rel_residual: rel })
    }
}

/// Dense LU with partial pivoting; for tiny fallback systems only.
pub fn lu_solve_dense(mut a: Vec<f64>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    let mut perm: Vec<usize> = (0..n).collect();
    for col in 0..n {
        let mut piv = col;
        let mut best = a[perm[col] * n + col].abs();
        for row in col + 1..n {
            let v = a[perm[row] * n + col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best < 1e-300 {
            return None;
        }
        perm.swap(col, piv);
        let prow = perm[col];
        let pval = a[prow * n + col];
        for row in col + 1..n {
            let r = perm[row];
            let factor = a[r * n + col] / pval;
            a[r * n + col] = factor;
            for k in col + 1..n {
                a[r * n + k] -= factor * a[prow * n + k];
            }
            b[r] -= factor * b[prow];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let r = perm[col];
        let mut s = b[r];
        for k in col + 1..n {
            s -= a[r * n + k] * x[k];
        }
        x[col] = s / a[r * n + col];
    }
    Some(x)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
