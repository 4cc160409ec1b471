//! Deterministic finite-difference reference solver for the full
//! divergence-form operator
//!
//! ```text
//! A u = 1/2 div(a grad u) + b . grad u - div(bhat u) + q u,
//! ```
//!
//! used to verify the probabilistic modules. Conservative flux stencils are
//! used for both `div(a grad u)` and `div(bhat u)` (the latter differences
//! face fluxes of `bhat` times face-interpolated `u`, so `bhat` is never
//! differentiated); `b . grad u` is first-order upwind by default, central
//! behind a flag. Non-box domains are handled by a node mask with first-order
//! staircase Dirichlet injection at the nearest boundary projection — a
//! documented limitation absorbed by the desk-scale verification tolerances.
//!
//! Solve conventions match the probabilistic side: the linear problem is
//! `A u = -F` and the semilinear one `A u = -g(x, u, grad u)`.

use crate::grid::GridFunction;
use crate::linalg::{bicgstab_jacobi, lu_solve_dense, Csr, SolverStall};
use crate::problem::{Driver, EllipticProblem, ScalarField};

#[derive(Debug, thiserror::Error)]
pub enum OracleError {
    #[error("grid too coarse: {0}")]
    GridTooCoarse(String),
    #[error(transparent)]
    SolverStall(#[from] SolverStall),
    #[error("newton iteration diverged (residual trace: {trace:?})")]
    NewtonDiverged { trace: Vec<f64> },
}

/// Assembled discrete operator over the domain's bounding-box grid.
pub struct FdSystem {
    lo: Vec<f64>,
    hi: Vec<f64>,
    dims: Vec<usize>,
    h: Vec<f64>,
    strides: Vec<usize>,
    /// Equation index per grid node; `usize::MAX` marks Dirichlet nodes.
    eq_of_node: Vec<usize>,
    /// Grid node per equation.
    node_of_eq: Vec<usize>,
    /// Full stencil rows (global node columns), one per equation.
    full_rows: Vec<Vec<(usize, f64)>>,
    /// Interior-to-interior block.
    matrix: Csr,
    /// Dirichlet couplings: per equation, (boundary node, coefficient).
    boundary_entries: Vec<Vec<(usize, f64)>>,
    /// Injection position per Dirichlet node (nearest boundary projection).
    inject_pos: Vec<Option<Vec<f64>>>,
    /// Largest |row sum| of the pure second-order stencil (constant-null check).
    pub diffusion_row_sum_defect: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct FdOptions {
    /// Central differencing for `b . grad u` instead of upwind.
    pub central_convection: bool,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions { central_convection: false }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig { tol: 1e-9, max_iters: 60, max_halvings: 40 }
    }
}

pub fn fd_assemble(p: &EllipticProblem, dims: &[usize]) -> Result<FdSystem, OracleError> {
    fd_assemble_with(p, dims, FdOptions::default())
}

pub fn fd_assemble_with(
    p: &EllipticProblem,
    dims: &[usize],
    opts: FdOptions,
) -> Result<FdSystem, OracleError> {
    let d = p.dim;
    assert_eq!(dims.len(), d);
    let (lo, hi) = p.domain.bounding_box();
    let n_nodes: usize = dims.iter().product();
    let mut strides = vec![1usize; d];
    for k in (0..d.saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * dims[k + 1];
    }
    let h: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / (dims[k] - 1) as f64).collect();

    let node_pos = |idx: usize| -> Vec<f64> {
        let mut x = vec![0.0; d];
        let mut rem = idx;
        for k in 0..d {
            let i = rem / strides[k];
            rem %= strides[k];
            x[k] = lo[k] + i as f64 * h[k];
        }
        x
    };

    // Classify nodes.
    let mut eq_of_node = vec![usize::MAX; n_nodes];
    let mut node_of_eq = Vec::new();
    for idx in 0..n_nodes {
        if p.domain.contains(&node_pos(idx)) {
            eq_of_node[idx] = node_of_eq.len();
            node_of_eq.push(idx);
        }
    }

    // Resolution check: at least 8 interior nodes on some grid line per axis,
    // and no interior node on the grid edge (its stencil would fall off).
    for axis in 0..d {
        let mut best_run = 0usize;
        for idx in 0..n_nodes {
            let i = idx / strides[axis] % dims[axis];
            if eq_of_node[idx] != usize::MAX {
                if i == 0 || i == dims[axis] - 1 {
                    return Err(OracleError::GridTooCoarse(format!(
                        "interior node on the grid edge along axis {axis}"
                    )));
                }
                // Count run length along the axis starting here.
                if i == 1 || eq_of_node[idx - strides[axis]] == usize::MAX {
                    let mut run = 0;
                    let mut j = idx;
                    while j / strides[axis] % dims[axis] < dims[axis]
                        && eq_of_node[j] != usize::MAX
                    {
                        run += 1;
                        if j / strides[axis] % dims[axis] == dims[axis] - 1 {
                            break;
                        }
                        j += strides[axis];
                    }
                    best_run = best_run.max(run);
                }
            }
        }
        if best_run < 8 {
            return Err(OracleError::GridTooCoarse(format!(
                "only {best_run} interior nodes along axis {axis}, need >= 8"
            )));
        }
    }

    let mut a_buf = vec![0.0; d * d];
    let mut b_buf = vec![0.0; d];
    let mut bh_buf = vec![0.0; d];
    let mut full_rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(node_of_eq.len());
    let mut diffusion_defect: f64 = 0.0;

    for &idx in &node_of_eq {
        let x = node_pos(idx);
        let mut row: Vec<(usize, f64)> = Vec::with_capacity(4 * d + 2 * d * d);
        // Sum of every second-order coefficient pushed: the constant-null
        // check of the pure diffusion stencil.
        let mut diff_row_sum = 0.0;

        // 1/2 sum_j D-_j ( a_jj(face) D+_j u )
        for j in 0..d {
            let mut xf = x.clone();
            xf[j] = x[j] + 0.5 * h[j];
            p.a.eval_into(&xf, &mut a_buf);
            let ap = a_buf[j * d + j];
            xf[j] = x[j] - 0.5 * h[j];
            p.a.eval_into(&xf, &mut a_buf);
            let am = a_buf[j * d + j];
            let cp = 0.5 * ap / (h[j] * h[j]);
            let cm = 0.5 * am / (h[j] * h[j]);
            row.push((idx + strides[j], cp));
            row.push((idx - strides[j], cm));
            row.push((idx, -(cp + cm)));
            diff_row_sum += cp + cm - (cp + cm);
        }

        // 1/2 sum_{j != k} D0_j ( a_jk D0_k u ); symmetric after summing both
        // orders because a is pointwise symmetric.
        for j in 0..d {
            for k in 0..d {
                if j == k {
                    continue;
                }
                let mut xn = x.clone();
                xn[j] = x[j] + h[j];
                p.a.eval_into(&xn, &mut a_buf);
                let ajk_p = a_buf[j * d + k];
                xn[j] = x[j] - h[j];
                p.a.eval_into(&xn, &mut a_buf);
                let ajk_m = a_buf[j * d + k];
                let c = 0.5 / (4.0 * h[j] * h[k]);
                if ajk_p != 0.0 {
                    row.push((idx + strides[j] + strides[k], c * ajk_p));
                    row.push((idx + strides[j] - strides[k], -c * ajk_p));
                    diff_row_sum += c * ajk_p - c * ajk_p;
                }
                if ajk_m != 0.0 {
                    row.push((idx - strides[j] + strides[k], -c * ajk_m));
                    row.push((idx - strides[j] - strides[k], c * ajk_m));
                    diff_row_sum += c * ajk_m - c * ajk_m;
                }
            }
        }
        diffusion_defect = diffusion_defect.max(diff_row_sum.abs());

        // b . grad u
        p.b.eval_into(&x, &mut b_buf);
        for j in 0..d {
            let bj = b_buf[j];
            if bj == 0.0 {
                continue;
            }
            if opts.central_convection {
                push(idx + strides[j], bj / (2.0 * h[j]), &mut row);
                push(idx - strides[j], -bj / (2.0 * h[j]), &mut row);
            } else if bj > 0.0 {
                push(idx, bj / h[j], &mut row);
                push(idx - strides[j], -bj / h[j], &mut row);
            } else {
                push(idx + strides[j], bj / h[j], &mut row);
                push(idx, -bj / h[j], &mut row);
            }
        }

        // -div(bhat u): face fluxes of bhat times face-interpolated u.
        if !p.bhat.is_zero() {
            for j in 0..d {
                let mut xf = x.clone();
                xf[j] = x[j] + 0.5 * h[j];
                p.bhat.eval_into(&xf, &mut bh_buf);
                let fp = bh_buf[j];
                xf[j] = x[j] - 0.5 * h[j];
                p.bhat.eval_into(&xf, &mut bh_buf);
                let fm = bh_buf[j];
                // flux difference: [fp*(u_i+u_{i+e})/2 - fm*(u_{i-e}+u_i)/2]/h
                let c = 1.0 / (2.0 * h[j]);
                push(idx + strides[j], -fp * c, &mut row);
                push(idx, -(fp - fm) * c, &mut row);
                push(idx - strides[j], fm * c, &mut row);
            }
        }

        // + q u
        let qv = p.q.eval(&x);
        if qv != 0.0 {
            row.push((idx, qv));
        }

        full_rows.push(row);
    }
    let diffusion_row_sum_defect = diffusion_defect;

    // Dirichlet injection positions for every masked node: nearest boundary
    // projection (first-order staircase).
    let mut inject_pos: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
    for idx in 0..n_nodes {
        if eq_of_node[idx] == usize::MAX {
            inject_pos[idx] = Some(p.domain.project_to_boundary(&node_pos(idx)));
        }
    }

    // Split into interior matrix and Dirichlet couplings.
    let mut rows_int: Vec<Vec<(usize, f64)>> = Vec::with_capacity(node_of_eq.len());
    let mut boundary_entries: Vec<Vec<(usize, f64)>> = Vec::with_capacity(node_of_eq.len());
    for row in &full_rows {
        let mut mr = Vec::with_capacity(row.len());
        let mut br = Vec::new();
        for &(col, v) in row {
            let eq = eq_of_node[col];
            if eq != usize::MAX {
                mr.push((eq, v));
            } else {
                br.push((col, v));
            }
        }
        rows_int.push(mr);
        boundary_entries.push(br);
    }
    let matrix = Csr::from_rows(rows_int);

    Ok(FdSystem {
        lo: lo.clone(),
        hi: hi.clone(),
        dims: dims.to_vec(),
        h,
        strides,
        eq_of_node,
        node_of_eq,
        full_rows,
        matrix,
        boundary_entries,
        inject_pos,
        diffusion_row_sum_defect,
    })
}

impl FdSystem {
    pub fn n_equations(&self) -> usize {
        self.node_of_eq.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    pub fn node_position(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dims.len()];
        let mut rem = idx;
        for k in 0..self.dims.len() {
            let i = rem / self.strides[k];
            rem %= self.strides[k];
            x[k] = self.lo[k] + i as f64 * self.h[k];
        }
        x
    }

    pub fn is_interior_node(&self, idx: usize) -> bool {
        self.eq_of_node[idx] != usize::MAX
    }

    pub fn interior_nodes(&self) -> &[usize] {
        &self.node_of_eq
    }

    /// Dirichlet values at the masked nodes: `phi` at the nearest boundary
    /// projection.
    fn boundary_values(&self, phi: &ScalarField) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        for (node, pos) in self.inject_pos.iter().enumerate() {
            if let Some(p) = pos {
                out.push((node, phi.eval(p)));
            }
        }
        out
    }

    /// Applies the full stencil to an arbitrary field sampled at all grid
    /// nodes; returns the discrete `A u` per equation. For manufactured
    /// solution checks.
    pub fn apply_to(&self, field: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let n_nodes: usize = self.dims.iter().product();
        let mut vals = vec![0.0; n_nodes];
        for (idx, v) in vals.iter_mut().enumerate() {
            *v = field(&self.node_position(idx));
        }
        self.full_rows
            .iter()
            .map(|row| row.iter().map(|&(col, c)| c * vals[col]).sum())
            .collect()
    }

    /// Assembles the full-grid solution vector (interior values plus the
    /// Dirichlet extension at every masked node) into a `GridFunction`.
    fn to_grid(&self, u_int: &[f64], phi: &ScalarField) -> GridFunction {
        let n_nodes: usize = self.dims.iter().product();
        let mut vals = vec![0.0; n_nodes];
        for (node, pos) in self.inject_pos.iter().enumerate() {
            if let Some(p) = pos {
                vals[node] = phi.eval(p);
            }
        }
        for (eq, &node) in self.node_of_eq.iter().enumerate() {
            vals[node] = u_int[eq];
        }
        GridFunction::new(self.lo.clone(), self.hi.clone(), self.dims.clone(), vals)
    }

    fn solve_system(&self, rhs: &[f64]) -> Result<Vec<f64>, OracleError> {
        let n = self.n_equations();
        let mut x = vec![0.0; n];
        match bicgstab_jacobi(&self.matrix, rhs, &mut x, 1e-10, 40 * n + 200) {
            Ok(_) => Ok(x),
            Err(stall) => {
                if n <= 2500 {
                    lu_solve_dense(self.matrix.to_dense(), rhs.to_vec())
                        .ok_or(OracleError::SolverStall(stall))
                } else {
                    Err(stall.into())
                }
            }
        }
    }

    /// Central-difference gradient at an interior equation node, using the
    /// full-grid vector (boundary nodes filled with their Dirichlet values).
    fn gradient_at(&self, full: &[f64], node: usize, out: &mut [f64]) {
        for k in 0..self.dims.len() {
            out[k] = (full[node + self.strides[k]] - full[node - self.strides[k]])
                / (2.0 * self.h[k]);
        }
    }
}

/// Solves the linear problem `A u = -F, u = phi` on the assembled grid.
pub fn fd_solve_linear(
    sys: &FdSystem,
    forcing: &ScalarField,
    phi: &ScalarField,
) -> Result<GridFunction, OracleError> {
    let n = sys.n_equations();
    let mut rhs = vec![0.0; n];
    let bvals = sys.boundary_values(phi);
    let mut bval_of_node = std::collections::HashMap::new();
    for (node, v) in bvals {
        bval_of_node.insert(node, v);
    }
    for eq in 0..n {
        let x = sys.node_position(sys.node_of_eq[eq]);
        let mut r = -forcing.eval(&x);
        for &(node, c) in &sys.boundary_entries[eq] {
            r -= c * bval_of_node[&node];
        }
        rhs[eq] = r;
    }
    let u = sys.solve_system(&rhs)?;
    Ok(sys.to_grid(&u, phi))
}

/// Damped Newton for `A u = -g(x, u, grad u), u = phi`, with numerical driver
/// partials in the y and z slots.
pub fn fd_solve_semilinear(
    sys: &FdSystem,
    driver: &Driver,
    phi: &ScalarField,
    cfg: NewtonConfig,
) -> Result<GridFunction, OracleError> {
    let n = sys.n_equations();
    let d = sys.dims.len();
    let n_nodes: usize = sys.dims.iter().product();

    // Dirichlet-extended full vector template.
    let mut full = vec![0.0; n_nodes];
    for (node, pos) in sys.inject_pos.iter().enumerate() {
        if let Some(p) = pos {
            full[node] = phi.eval(p);
        }
    }

    let node_xs: Vec<Vec<f64>> =
        sys.node_of_eq.iter().map(|&node| sys.node_position(node)).collect();

    let residual = |u_int: &[f64], full: &mut Vec<f64>| -> Vec<f64> {
        for (eq, &node) in sys.node_of_eq.iter().enumerate() {
            full[node] = u_int[eq];
        }
        let mut grad = vec![0.0; d];
        let mut res = vec![0.0; n];
        let mut au = vec![0.0; n];
        sys.matrix.matvec(u_int, &mut au);
        for eq in 0..n {
            let node = sys.node_of_eq[eq];
            let mut v = au[eq];
            for &(bn, c) in &sys.boundary_entries[eq] {
                v += c * full[bn];
            }
            sys.gradient_at(full, node, &mut grad);
            v += driver.eval(&node_xs[eq], u_int[eq], &grad);
            res[eq] = v;
        }
        res
    };

    // Initial guess: frozen-driver linear solve at (y, z) = (0, 0).
    let mut u = {
        let mut rhs = vec![0.0; n];
        let mut bval = std::collections::HashMap::new();
        for (node, pos) in sys.inject_pos.iter().enumerate() {
            if let Some(p) = pos {
                bval.insert(node, phi.eval(p));
            }
        }
        let zero_z = vec![0.0; d];
        for eq in 0..n {
            let mut r = -driver.eval(&node_xs[eq], 0.0, &zero_z);
            for &(node, c) in &sys.boundary_entries[eq] {
                r -= c * bval[&node];
            }
            rhs[eq] = r;
        }
        sys.solve_system(&rhs)?
    };

    let mut trace = Vec::new();
    let mut res = residual(&u, &mut full);
    let mut res_norm = res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    trace.push(res_norm);

    for _ in 0..cfg.max_iters {
        if res_norm <= cfg.tol {
            return Ok(sys.to_grid(&u, phi));
        }
        // Jacobian: A + diag(dg/dy) + sum_k diag(dg/dz_k) D_k.
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for eq in 0..n {
            let node = sys.node_of_eq[eq];
            let x = &node_xs[eq];
            let mut grad = vec![0.0; d];
            sys.gradient_at(&full, node, &mut grad);
            let y = u[eq];
            let hy = 1e-6 * (1.0 + y.abs());
            let gy_p = driver.eval(x, y + hy, &grad);
            let gy_m = driver.eval(x, y - hy, &grad);
            let dgdy = (gy_p - gy_m) / (2.0 * hy);
            rows[eq].push((eq, dgdy));
            for k in 0..d {
                let hz = 1e-6 * (1.0 + grad[k].abs());
                let zk = grad[k];
                grad[k] = zk + hz;
                let gz_p = driver.eval(x, y, &grad);
                grad[k] = zk - hz;
                let gz_m = driver.eval(x, y, &grad);
                grad[k] = zk;
                let dgdz = (gz_p - gz_m) / (2.0 * hz);
                if dgdz != 0.0 {
                    let up = sys.eq_of_node[node + sys.strides[k]];
                    let dn = sys.eq_of_node[node - sys.strides[k]];
                    if up != usize::MAX {
                        rows[eq].push((up, dgdz / (2.0 * sys.h[k])));
                    }
                    if dn != usize::MAX {
                        rows[eq].push((dn, -dgdz / (2.0 * sys.h[k])));
                    }
                }
            }
        }
        // Merge with A.
        for eq in 0..n {
            for k in sys.matrix.row_ptr[eq]..sys.matrix.row_ptr[eq + 1] {
                rows[eq].push((sys.matrix.cols[k], sys.matrix.vals[k]));
            }
        }
        let jac = Csr::from_rows(rows);
        let neg_res: Vec<f64> = res.iter().map(|v| -v).collect();
        let mut delta = vec![0.0; n];
        match bicgstab_jacobi(&jac, &neg_res, &mut delta, 1e-10, 40 * n + 200) {
            Ok(_) => {}
            Err(stall) => {
                if n <= 2500 {
                    delta = lu_solve_dense(jac.to_dense(), neg_res)
                        .ok_or(OracleError::SolverStall(stall))?;
                } else {
                    return Err(stall.into());
                }
            }
        }
        // Damping: halve until the residual decreases.
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> =
                u.iter().zip(&delta).map(|(ui, di)| ui + step * di).collect();
            let trial_res = residual(&trial, &mut full);
            let trial_norm = trial_res.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if trial_norm < res_norm {
                u = trial;
                res = trial_res;
                res_norm = trial_norm;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        trace.push(res_norm);
        if !accepted {
            return Err(OracleError::NewtonDiverged { trace });
        }
    }
    if res_norm <= cfg.tol {
        Ok(sys.to_grid(&u, phi))
    } else {
        Err(OracleError::NewtonDiverged { trace })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Domain;
    use crate::problem::{MatrixField, VectorField};
    use std::f64::consts::PI;

    fn box2(lo: f64, hi: f64) -> Domain {
        Domain::rect(vec![lo, lo], vec![hi, hi])
    }

    fn plain_problem(dom: Domain) -> EllipticProblem {
        let d = dom.dim();
        EllipticProblem::linear(
            MatrixField::identity(d),
            VectorField::zero(d),
            VectorField::zero(d),
            ScalarField::constant(d, 0.0),
            ScalarField::constant(d, 0.0),
            ScalarField::constant(d, 0.0),
            dom,
            1.0,
            1.0,
        )
    }

    #[test]
    fn one_dimensional_stencil_rows() {
        let p = plain_problem(Domain::rect(vec![0.0], vec![1.0]));
        let sys = fd_assemble(&p, &[11]).unwrap();
        let h = 0.1;
        // Row of an interior node away from the boundary: (1, -2, 1)/h^2 * 1/2.
        let eq = 4; // fifth interior node
        let mut entries: Vec<(usize, f64)> = sys.full_rows[eq].clone();
        entries.sort_by_key(|e| e.0);
        assert_eq!(entries.len(), 3);
        assert!((entries[0].1 - 0.5 / (h * h)).abs() < 1e-9);
        assert!((entries[1].1 + 1.0 / (h * h)).abs() < 1e-9);
        assert!((entries[2].1 - 0.5 / (h * h)).abs() < 1e-9);
        assert!(sys.diffusion_row_sum_defect < 1e-12);
    }

    #[test]
    fn constant_bhat_flux_telescopes_on_constants() {
        let mut p = plain_problem(box2(0.0, 1.0));
        p.bhat = VectorField::constant(vec![0.7, -0.3]);
        let sys = fd_assemble(&p, &[13, 13]).unwrap();
        let applied = sys.apply_to(|_| 1.0);
        for v in applied {
            assert!(v.abs() < 1e-10, "{v}");
        }
    }

    #[test]
    fn manufactured_laplacian_second_order() {
        let u_star = |x: &[f64]| (PI * x[0]).sin() * (PI * x[1]).sin();
        let lap = |x: &[f64]| -PI * PI * u_star(x); // (1/2) Delta u* = -pi^2 u*
        let p = plain_problem(box2(0.0, 1.0));
        let mut errs = Vec::new();
        for n in [17usize, 33, 65] {
            let sys = fd_assemble(&p, &[n, n]).unwrap();
            let applied = sys.apply_to(u_star);
            let mut sup: f64 = 0.0;
            for (eq, v) in applied.iter().enumerate() {
                let x = sys.node_position(sys.interior_nodes()[eq]);
                sup = sup.max((v - lap(&x)).abs());
            }
            errs.push(sup);
        }
        let order1 = (errs[0] / errs[1]).log2();
        let order2 = (errs[1] / errs[2]).log2();
        assert!(order1 > 1.8 && order2 > 1.8, "orders {order1}, {order2}");
    }

    #[test]
    fn self_adjoint_when_drift_free() {
        let a = MatrixField::analytic(2, |x: &[f64], out: &mut [f64]| {
            out[0] = 1.0 + x[0] * x[0];
            out[1] = 0.2 * x[0] * x[1];
            out[2] = 0.2 * x[0] * x[1];
            out[3] = 1.0 + 0.5 * x[1] * x[1];
        });
        let p = EllipticProblem::linear(
            a,
            VectorField::zero(2),
            VectorField::zero(2),
            ScalarField::constant(2, 0.0),
            ScalarField::constant(2, 0.0),
            ScalarField::constant(2, 0.0),
            box2(0.0, 1.0),
            0.5,
            2.0,
        );
        let sys = fd_assemble(&p, &[12, 12]).unwrap();
        assert!(sys.matrix().max_asymmetry() <= 1e-14);
    }

    #[test]
    fn harmonic_polynomial_exact() {
        let p = plain_problem(box2(0.0, 1.0));
        let sys = fd_assemble(&p, &[17, 17]).unwrap();
        let phi = ScalarField::analytic(2, |x: &[f64]| x[0]);
        let u = fd_solve_linear(&sys, &ScalarField::constant(2, 0.0), &phi).unwrap();
        for idx in 0..u.len() {
            let x = u.node_point(idx);
            assert!((u.values()[idx] - x[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn cosh_profile_second_order() {
        // q = -1, F = 0, phi = 1 on (-1, 1): u = cosh(sqrt2 x)/cosh(sqrt2).
        let mk = |n: usize| {
            let p = EllipticProblem::linear(
                MatrixField::identity(1),
                VectorField::zero(1),
                VectorField::zero(1),
                ScalarField::constant(1, -1.0),
                ScalarField::constant(1, 0.0),
                ScalarField::constant(1, 1.0),
                Domain::rect(vec![-1.0], vec![1.0]),
                1.0,
                1.0,
            );
            let sys = fd_assemble(&p, &[n]).unwrap();
            let u =
                fd_solve_linear(&sys, &ScalarField::constant(1, 0.0), &ScalarField::constant(1, 1.0))
                    .unwrap();
            let s2 = 2.0_f64.sqrt();
            let mut sup: f64 = 0.0;
            for idx in 0..u.len() {
                let x = u.node_point(idx)[0];
                let exact = (s2 * x).cosh() / s2.cosh();
                sup = sup.max((u.values()[idx] - exact).abs());
            }
            sup
        };
        let e1 = mk(33);
        let e2 = mk(65);
        let order = (e1 / e2).log2();
        assert!(order > 1.8, "order {order} (errors {e1}, {e2})");
    }

    #[test]
    fn mean_exit_disk_first_order() {
        // (1/2) Delta u = -1 on the unit disk: u = (1 - |x|^2)/2 (d = 2).
        let p = EllipticProblem::linear(
            MatrixField::identity(2),
            VectorField::zero(2),
            VectorField::zero(2),
            ScalarField::constant(2, 0.0),
            ScalarField::constant(2, 1.0),
            ScalarField::constant(2, 0.0),
            Domain::ball(vec![0.0, 0.0], 1.0),
            1.0,
            1.0,
        );
        let sup_err = |n: usize| {
            let sys = fd_assemble(&p, &[n, n]).unwrap();
            let u = fd_solve_linear(&sys, p.forcing().unwrap(), &p.phi).unwrap();
            let mut sup: f64 = 0.0;
            for &node in sys.interior_nodes() {
                let x = sys.node_position(node);
                let exact = (1.0 - x[0] * x[0] - x[1] * x[1]) / 2.0;
                sup = sup.max((u.values()[node] - exact).abs());
            }
            sup
        };
        let e1 = sup_err(41);
        let e2 = sup_err(81);
        assert!(e1 < 0.05, "{e1}");
        let order = (e1 / e2).log2();
        assert!(order > 0.9, "order {order} (errors {e1}, {e2})");
    }

    #[test]
    fn semilinear_matches_linear_for_zero_driver() {
        let p = plain_problem(box2(0.0, 1.0));
        let sys = fd_assemble(&p, &[17, 17]).unwrap();
        let phi = ScalarField::analytic(2, |x: &[f64]| x[0] * x[1]);
        let lin = fd_solve_linear(&sys, &ScalarField::constant(2, 0.0), &phi).unwrap();
        let sem =
            fd_solve_semilinear(&sys, &Driver::zero(2), &phi, NewtonConfig::default()).unwrap();
        assert!(lin.sup_diff(&sem) < 1e-8);
    }

    #[test]
    fn semilinear_cosh_second_order() {
        // (1/2) u'' = u via driver g(y) = -y.
        let drv = Driver::new(|_, y, _| -y, ScalarField::constant(1, 1.0), 0.0, 1.0);
        let p = EllipticProblem::semilinear(
            MatrixField::identity(1),
            VectorField::zero(1),
            VectorField::zero(1),
            ScalarField::constant(1, 0.0),
            drv.clone(),
            ScalarField::constant(1, 1.0),
            Domain::rect(vec![-1.0], vec![1.0]),
            1.0,
            1.0,
        );
        let sup_err = |n: usize| {
            let sys = fd_assemble(&p, &[n]).unwrap();
            let u = fd_solve_semilinear(&sys, &drv, &p.phi, NewtonConfig::default()).unwrap();
            let s2 = 2.0_f64.sqrt();
            let mut sup: f64 = 0.0;
            for idx in 0..u.len() {
                let x = u.node_point(idx)[0];
                sup = sup.max((u.values()[idx] - (s2 * x).cosh() / s2.cosh()).abs());
            }
            sup
        };
        let e1 = sup_err(33);
        let e2 = sup_err(65);
        assert!((e1 / e2).log2() > 1.8, "errors {e1}, {e2}");
    }

    #[test]
    fn cubic_driver_solution_between_zero_and_one() {
        let drv = Driver::new(
            |_, y: f64, _| -y * y * y - y,
            ScalarField::constant(2, 1.0),
            0.0,
            40.0,
        );
        let p = EllipticProblem::semilinear(
            MatrixField::identity(2),
            VectorField::zero(2),
            VectorField::zero(2),
            ScalarField::constant(2, 0.0),
            drv.clone(),
            ScalarField::constant(2, 1.0),
            Domain::ball(vec![0.0, 0.0], 1.0),
            1.0,
            1.0,
        );
        let sys = fd_assemble(&p, &[41, 41]).unwrap();
        let u = fd_solve_semilinear(&sys, &drv, &p.phi, NewtonConfig::default()).unwrap();
        for &node in sys.interior_nodes() {
            let v = u.values()[node];
            assert!(v > 0.0 && v <= 1.0 + 1e-9, "{v}");
        }
    }

    #[test]
    fn discrete_maximum_principle() {
        // q <= 0, bhat = 0, F = 0, with drift: extrema on the boundary.
        let p = EllipticProblem::linear(
            MatrixField::identity(2),
            VectorField::constant(vec![1.0, -0.5]),
            VectorField::zero(2),
            ScalarField::constant(2, -0.3),
            ScalarField::constant(2, 0.0),
            ScalarField::analytic(2, |x: &[f64]| x[0] - 0.2 * x[1]),
            Domain::ball(vec![0.0, 0.0], 1.0),
            1.0,
            1.0,
        );
        let sys = fd_assemble(&p, &[31, 31]).unwrap();
        let u = fd_solve_linear(&sys, &ScalarField::constant(2, 0.0), &p.phi).unwrap();
        // Boundary data range (with q <= 0, zero is a competitor too).
        let mut bmin: f64 = 0.0;
        let mut bmax: f64 = 0.0;
        for (node, pos) in sys.inject_pos.iter().enumerate() {
            let _ = node;
            if let Some(pp) = pos {
                let v = p.phi.eval(pp);
                bmin = bmin.min(v);
                bmax = bmax.max(v);
            }
        }
        for &node in sys.interior_nodes() {
            let v = u.values()[node];
            assert!(v >= bmin - 1e-10 && v <= bmax + 1e-10, "{v} outside [{bmin}, {bmax}]");
        }
    }
}
