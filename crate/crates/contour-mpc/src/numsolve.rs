//! Dense small-scale numerical kernels: linear programming, convex
//! quadratic programming, and discrete-time Riccati/Lyapunov solvers.
//!
//! All solvers are contract-bound: an `Optimal` result carries KKT
//! residuals and the callers (set algebra, MPC) rely on
//! [`crate::tol::FEAS_TOL`] / [`crate::tol::OPT_TOL`] being met.

use crate::tol::{FEAS_TOL, ITER_CAP, OPT_TOL};
use crate::{Error, Matrix, Result, Vector};

/// Linear program  min c'z  s.t.  Gz <= h,  Ez = e.
#[derive(Debug, Clone)]
pub struct LpProblem {
    pub c: Vector,
    pub g: Matrix,
    pub h: Vector,
    pub e_mat: Matrix,
    pub e_rhs: Vector,
}

impl LpProblem {
    pub fn new(c: Vector, g: Matrix, h: Vector) -> Self {
        let n = c.len();
        Self {
            c,
            g,
            h,
            e_mat: Matrix::zeros(0, n),
            e_rhs: Vector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, e_mat: Matrix, e_rhs: Vector) -> Self {
        self.e_mat = e_mat;
        self.e_rhs = e_rhs;
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.g.ncols() != n || self.g.nrows() != self.h.len() {
            return Err(Error::DimensionMismatch("LP inequality system".into()));
        }
        if self.e_mat.ncols() != n || self.e_mat.nrows() != self.e_rhs.len() {
            return Err(Error::DimensionMismatch("LP equality system".into()));
        }
        let finite = self.c.iter().all(|v| v.is_finite())
            && self.g.iter().all(|v| v.is_finite())
            && self.h.iter().all(|v| v.is_finite())
            && self.e_mat.iter().all(|v| v.is_finite())
            && self.e_rhs.iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidArgument("non-finite LP entry".into()));
        }
        Ok(())
    }
}

/// Quadratic program  min 1/2 z'Hz + f'z  s.t.  Gz <= h,  Ez = e.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h_mat: Matrix,
    pub f: Vector,
    pub g: Matrix,
    pub h: Vector,
    pub e_mat: Matrix,
    pub e_rhs: Vector,
}

impl QpProblem {
    pub fn new(h_mat: Matrix, f: Vector, g: Matrix, h: Vector) -> Self {
        let n = f.len();
        Self {
            h_mat,
            f,
            g,
            h,
            e_mat: Matrix::zeros(0, n),
            e_rhs: Vector::zeros(0),
        }
    }

    pub fn with_equalities(mut self, e_mat: Matrix, e_rhs: Vector) -> Self {
        self.e_mat = e_mat;
        self.e_rhs = e_rhs;
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.f.len();
        if self.h_mat.nrows() != n || self.h_mat.ncols() != n {
            return Err(Error::DimensionMismatch("QP cost matrix".into()));
        }
        if self.g.ncols() != n || self.g.nrows() != self.h.len() {
            return Err(Error::DimensionMismatch("QP inequality system".into()));
        }
        if self.e_mat.ncols() != n || self.e_mat.nrows() != self.e_rhs.len() {
            return Err(Error::DimensionMismatch("QP equality system".into()));
        }
        let sym = (&self.h_mat - self.h_mat.transpose()).amax();
        if sym > 1e-8 * (1.0 + self.h_mat.amax()) {
            return Err(Error::InvalidArgument("QP cost matrix not symmetric".into()));
        }
        Ok(())
    }
}

/// Outcome of an LP/QP solve.
#[derive(Debug, Clone)]
pub enum SolveStatus {
    Optimal {
        z: Vector,
        objective: f64,
        feas_residual: f64,
        stat_residual: f64,
    },
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl SolveStatus {
    pub fn is_optimal(&self) -> bool {
        matches!(self, SolveStatus::Optimal { .. })
    }

    pub fn solution(&self) -> Option<&Vector> {
        match self {
            SolveStatus::Optimal { z, .. } => Some(z),
            _ => None,
        }
    }

    pub fn objective(&self) -> Option<f64> {
        match self {
            SolveStatus::Optimal { objective, .. } => Some(*objective),
            _ => None,
        }
    }
}

const PIVOT_TOL: f64 = 1e-10;

/// Dense two-phase tableau simplex. Free variables are split into
/// positive parts; inequality rows get slacks; phase one runs with
/// artificials on every row.
struct Simplex {
    rows: usize,
    // structural + slack columns first, then artificials; the tableau is
    // (rows+1) x stride with the objective in the last row and the rhs in
    // the last column.
    cols: usize,
    t: Vec<f64>,
    stride: usize,
    basis: Vec<usize>,
}

impl Simplex {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.t[r * self.stride + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let stride = self.stride;
        let piv = self.t[pr * stride + pc];
        let inv = 1.0 / piv;
        for c in 0..stride {
            self.t[pr * stride + c] *= inv;
        }
        self.t[pr * stride + pc] = 1.0;
        for r in 0..=self.rows {
            if r == pr {
                continue;
            }
            let factor = self.t[r * stride + pc];
            if factor.abs() <= 1e-14 {
                continue;
            }
            for c in 0..stride {
                self.t[r * stride + c] -= factor * self.t[pr * stride + c];
            }
            self.t[r * stride + pc] = 0.0;
        }
        self.basis[pr] = pc;
    }

    /// Runs the simplex loop on the current objective row over columns
    /// `0..limit`. Returns false on unboundedness.
    fn optimize(&mut self, limit: usize) -> Result<bool> {
        let mut stall = 0usize;
        let mut last_obj = f64::INFINITY;
        for iter in 0..ITER_CAP {
            // Dantzig rule, Bland fallback once the objective stalls.
            let bland = stall > 2 * (self.rows + limit);
            let obj_row = self.rows;
            let mut pc = None;
            if bland {
                for c in 0..limit {
                    if self.at(obj_row, c) < -PIVOT_TOL {
                        pc = Some(c);
                        break;
                    }
                }
            } else {
                let mut best = -PIVOT_TOL;
                for c in 0..limit {
                    let v = self.at(obj_row, c);
                    if v < best {
                        best = v;
                        pc = Some(c);
                    }
                }
            }
            let Some(pc) = pc else { return Ok(true) };
            // ratio test
            let mut pr = None;
            let mut best_ratio = f64::INFINITY;
            for r in 0..self.rows {
                let a = self.at(r, pc);
                if a > PIVOT_TOL {
                    let ratio = self.at(r, self.stride - 1) / a;
                    if ratio < best_ratio - 1e-12
                        || (ratio < best_ratio + 1e-12
                            && pr.map_or(true, |p| self.basis[r] < self.basis[p]))
                    {
                        best_ratio = ratio;
                        pr = Some(r);
                    }
                }
            }
            let Some(pr) = pr else { return Ok(false) };
            self.pivot(pr, pc);
            let obj = self.at(self.rows, self.stride - 1);
            if obj < last_obj - 1e-12 {
                last_obj = obj;
                stall = 0;
            } else {
                stall += 1;
            }
            if iter + 1 == ITER_CAP {
                return Err(Error::NumericalFailure("simplex iteration cap".into()));
            }
        }
        Err(Error::NumericalFailure("simplex iteration cap".into()))
    }
}

/// Solves a dense LP. Status classification (optimal / infeasible /
/// unbounded) is exact up to the solver tolerances.
pub fn solve_lp(p: &LpProblem) -> Result<SolveStatus> {
    p.validate()?;
    let n = p.c.len();
    let mg = p.g.nrows();
    let me = p.e_mat.nrows();
    let rows = mg + me;
    let n_struct = 2 * n; // z = zp - zn
    let cols = n_struct + mg; // + slacks
    let stride = cols + rows + 1;
    let mut t = vec![0.0; (rows + 1) * stride];

    // Row block: [G | I_slack | artificials | h] then [E | 0 | artificials | e],
    // with rows sign-flipped so every rhs is nonnegative.
    for i in 0..rows {
        let (coef, rhs): (Vec<f64>, f64) = if i < mg {
            ((0..n).map(|j| p.g[(i, j)]).collect(), p.h[i])
        } else {
            ((0..n).map(|j| p.e_mat[(i - mg, j)]).collect(), p.e_rhs[i - mg])
        };
        let sign = if rhs < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i * stride + j] = sign * coef[j];
            t[i * stride + n + j] = -sign * coef[j];
        }
        if i < mg {
            t[i * stride + n_struct + i] = sign;
        }
        t[i * stride + cols + i] = 1.0; // artificial
        t[i * stride + stride - 1] = sign * rhs;
    }

    let mut sx = Simplex {
        rows,
        cols,
        t,
        stride,
        basis: (0..rows).map(|i| cols + i).collect(),
    };

    // Phase 1: minimize sum of artificials.
    for i in 0..rows {
        for c in 0..stride {
            sx.t[rows * stride + c] -= sx.t[i * stride + c];
        }
    }
    match sx.optimize(sx.cols) {
        Ok(_) => {}
        Err(_) => return Ok(SolveStatus::NumericalFailure),
    }
    let phase1 = -sx.at(rows, stride - 1);
    if phase1.abs() > 1e-7 {
        return Ok(SolveStatus::Infeasible);
    }
    // Drive leftover artificials out of the basis where possible.
    for r in 0..rows {
        if sx.basis[r] >= cols {
            let mut found = None;
            for c in 0..cols {
                if sx.at(r, c).abs() > 1e-8 {
                    found = Some(c);
                    break;
                }
            }
            if let Some(c) = found {
                sx.pivot(r, c);
            }
            // A row with no eligible column is redundant; its artificial
            // stays basic at zero and never pivots again.
        }
    }

    // Phase 2 objective: c'(zp - zn).
    for c in 0..stride {
        sx.t[rows * stride + c] = 0.0;
    }
    for j in 0..n {
        sx.t[rows * stride + j] = p.c[j];
        sx.t[rows * stride + n + j] = -p.c[j];
    }
    // Price out basic columns.
    for r in 0..rows {
        let b = sx.basis[r];
        if b < cols {
            let factor = sx.t[rows * stride + b];
            if factor.abs() > 0.0 {
                for c in 0..stride {
                    sx.t[rows * stride + c] -= factor * sx.t[r * stride + c];
                }
                sx.t[rows * stride + b] = 0.0;
            }
        }
    }
    let bounded = match sx.optimize(sx.cols) {
        Ok(b) => b,
        Err(_) => return Ok(SolveStatus::NumericalFailure),
    };
    if !bounded {
        return Ok(SolveStatus::Unbounded);
    }

    // Extract primal solution.
    let mut z = Vector::zeros(n);
    for r in 0..rows {
        let b = sx.basis[r];
        let v = sx.at(r, stride - 1);
        if b < n {
            z[b] += v;
        } else if b < 2 * n {
            z[b - n] -= v;
        }
    }

    // Duals from the optimal basis: solve B' y = c_B on the original
    // (unflipped) system, then map to (lambda, mu).
    let (lam, mu) = match lp_duals(p, &sx) {
        Ok(d) => d,
        // A singular final basis is a numerical verdict, not a hard
        // error: callers treat it like any other failed certificate.
        Err(Error::NumericalFailure(_)) => return Ok(SolveStatus::NumericalFailure),
        Err(e) => return Err(e),
    };
    let feas = lp_feas_residual(p, &z);
    let stat_res = (&p.c + p.g.transpose() * &lam + p.e_mat.transpose() * &mu).amax();
    let objective = p.c.dot(&z);
    if feas > FEAS_TOL || stat_res > OPT_TOL {
        return Ok(SolveStatus::NumericalFailure);
    }
    Ok(SolveStatus::Optimal {
        z,
        objective,
        feas_residual: feas,
        stat_residual: stat_res,
    })
}

fn lp_feas_residual(p: &LpProblem, z: &Vector) -> f64 {
    let mut r: f64 = 0.0;
    if p.g.nrows() > 0 {
        let gz = &p.g * z;
        for i in 0..gz.len() {
            r = r.max(gz[i] - p.h[i]);
        }
    }
    if p.e_mat.nrows() > 0 {
        let ez = &p.e_mat * z - &p.e_rhs;
        r = r.max(ez.amax());
    }
    r.max(0.0)
}

/// Recovers (lambda, mu) for  c + G'lambda + E'mu = 0, lambda >= 0,
/// from the final simplex basis.
fn lp_duals(p: &LpProblem, sx: &Simplex) -> Result<(Vector, Vector)> {
    let n = p.c.len();
    let mg = p.g.nrows();
    let me = p.e_mat.nrows();
    let rows = mg + me;
    if rows == 0 {
        return Ok((Vector::zeros(0), Vector::zeros(0)));
    }
    // Column of structural/slack/artificial variable j in the *sign-flipped*
    // constraint matrix, and its phase-2 cost.
    let row_sign: Vec<f64> = (0..rows)
        .map(|i| {
            let rhs = if i < mg { p.h[i] } else { p.e_rhs[i - mg] };
            if rhs < 0.0 {
                -1.0
            } else {
                1.0
            }
        })
        .collect();
    let col = |j: usize, i: usize| -> f64 {
        let s = row_sign[i];
        if j < n {
            s * if i < mg { p.g[(i, j)] } else { p.e_mat[(i - mg, j)] }
        } else if j < 2 * n {
            -s * if i < mg {
                p.g[(i, j - n)]
            } else {
                p.e_mat[(i - mg, j - n)]
            }
        } else if j < 2 * n + mg {
            if i == j - 2 * n {
                s
            } else {
                0.0
            }
        } else {
            // artificial
            if i == j - (2 * n + mg) {
                1.0
            } else {
                0.0
            }
        }
    };
    let cost = |j: usize| -> f64 {
        if j < n {
            p.c[j]
        } else if j < 2 * n {
            -p.c[j - n]
        } else {
            0.0
        }
    };
    let mut b_t = Matrix::zeros(rows, rows);
    let mut c_b = Vector::zeros(rows);
    for (k, &bj) in sx.basis.iter().enumerate() {
        for i in 0..rows {
            b_t[(k, i)] = col(bj, i); // row k of B' = column bj of A
        }
        c_b[k] = cost(bj);
    }
    let y = b_t
        .lu()
        .solve(&c_b)
        .ok_or_else(|| Error::NumericalFailure("singular simplex basis".into()))?;
    // Undo the row sign flips, then convert to the Lagrangian convention.
    let mut lam = Vector::zeros(mg);
    let mut mu = Vector::zeros(me);
    for i in 0..mg {
        lam[i] = (-y[i] * row_sign[i]).max(0.0);
    }
    for i in 0..me {
        mu[i] = -y[mg + i] * row_sign[mg + i];
    }
    Ok((lam, mu))
}

/// Finds any feasible point of the system Gz <= h, Ez = e, or reports
/// infeasibility.
pub fn find_feasible(g: &Matrix, h: &Vector, e_mat: &Matrix, e_rhs: &Vector) -> Result<Option<Vector>> {
    let n = g.ncols().max(e_mat.ncols());
    let p = LpProblem::new(Vector::zeros(n), g.clone(), h.clone())
        .with_equalities(e_mat.clone(), e_rhs.clone());
    match solve_lp(&p)? {
        SolveStatus::Optimal { z, .. } => Ok(Some(z)),
        SolveStatus::Infeasible => Ok(None),
        SolveStatus::Unbounded => unreachable!("zero objective cannot be unbounded"),
        SolveStatus::NumericalFailure => {
            Err(Error::NumericalFailure("feasibility LP failed".into()))
        }
    }
}

/// Solves a convex QP by a primal active-set method. `H` must be
/// positive semidefinite; a tiny ridge is added when it is singular so
/// the equality-constrained subproblems stay well posed.
pub fn solve_qp(p: &QpProblem) -> Result<SolveStatus> {
    p.validate()?;
    let n = p.f.len();
    let mg = p.g.nrows();
    let me = p.e_mat.nrows();

    // Feasible start from a phase-1 LP.
    let z0 = match find_feasible(&p.g, &p.h, &p.e_mat, &p.e_rhs)? {
        Some(z) => z,
        None => return Ok(SolveStatus::Infeasible),
    };

    let mut h_eff = p.h_mat.clone();
    if h_eff.clone().cholesky().is_none() {
        let ridge = 1e-9 * (1.0 + h_eff.amax());
        for i in 0..n {
            h_eff[(i, i)] += ridge;
        }
        if h_eff.clone().cholesky().is_none() {
            return Ok(SolveStatus::NumericalFailure);
        }
    }

    let mut z = z0;
    // Working set: indices into the inequality rows (equalities are
    // always active).
    let mut ws: Vec<usize> = Vec::new();
    let max_iter = 200 * (n + mg + me + 1);
    let mut lam_full = Vector::zeros(mg);
    let mut mu = Vector::zeros(me);
    let mut converged = false;

    for _ in 0..max_iter {
        // Equality-constrained subproblem on the working set.
        let na = me + ws.len();
        let dim = n + na;
        let mut kkt = Matrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n, n)).copy_from(&h_eff);
        for (r, i) in (0..me).enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = p.e_mat[(i, j)];
                kkt[(j, n + r)] = p.e_mat[(i, j)];
            }
        }
        for (r, &gi) in ws.iter().enumerate() {
            for j in 0..n {
                kkt[(n + me + r, j)] = p.g[(gi, j)];
                kkt[(j, n + me + r)] = p.g[(gi, j)];
            }
        }
        let grad = &h_eff * &z + &p.f;
        let mut rhs = Vector::zeros(dim);
        for j in 0..n {
            rhs[j] = -grad[j];
        }
        let sol = match kkt.lu().solve(&rhs) {
            Some(s) => s,
            None => return Ok(SolveStatus::NumericalFailure),
        };
        let step = sol.rows(0, n).into_owned();
        if step.amax() <= 1e-11 * (1.0 + z.amax()) {
            // Stationary on the working set: inspect multipliers.
            mu = sol.rows(n, me).into_owned();
            lam_full.fill(0.0);
            let mut worst = (-1e-9, usize::MAX);
            for (r, &gi) in ws.iter().enumerate() {
                let l = sol[n + me + r];
                lam_full[gi] = l;
                if l < worst.0 {
                    worst = (l, r);
                }
            }
            if worst.1 == usize::MAX {
                converged = true;
                break;
            }
            ws.remove(worst.1);
            continue;
        }
        // Ratio test against inactive inequality rows.
        let mut alpha = 1.0f64;
        let mut blocking = None;
        for i in 0..mg {
            if ws.contains(&i) {
                continue;
            }
            let gp: f64 = (0..n).map(|j| p.g[(i, j)] * step[j]).sum();
            if gp > 1e-12 {
                let slack = p.h[i] - (0..n).map(|j| p.g[(i, j)] * z[j]).sum::<f64>();
                let a = (slack / gp).max(0.0);
                if a < alpha - 1e-14 {
                    alpha = a;
                    blocking = Some(i);
                }
            }
        }
        z += alpha * &step;
        if let Some(b) = blocking {
            ws.push(b);
        }
    }
    if !converged {
        return Ok(SolveStatus::NumericalFailure);
    }

    // Residuals against the *original* H.
    let mut feas: f64 = 0.0;
    if mg > 0 {
        let gz = &p.g * &z;
        for i in 0..mg {
            feas = feas.max(gz[i] - p.h[i]);
        }
    }
    if me > 0 {
        feas = feas.max((&p.e_mat * &z - &p.e_rhs).amax());
    }
    feas = feas.max(0.0);
    let stat = (&p.h_mat * &z + &p.f + p.g.transpose() * &lam_full + p.e_mat.transpose() * &mu).amax();
    if feas > FEAS_TOL || stat > OPT_TOL {
        return Ok(SolveStatus::NumericalFailure);
    }
    let objective = 0.5 * (&p.h_mat * &z).dot(&z) + p.f.dot(&z);
    Ok(SolveStatus::Optimal {
        z,
        objective,
        feas_residual: feas,
        stat_residual: stat,
    })
}

/// Spectral radius via the real Schur-based eigenvalue computation.
pub fn spectral_radius(a: &Matrix) -> f64 {
    a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Discrete-time LQR:  u = Kx  with  K = -(R + B'PB)^{-1} B'PA  and P the
/// stabilizing DARE solution, found by fixed-point iteration.
pub fn dlqr(a: &Matrix, b: &Matrix, qx: &Matrix, r: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || qx.nrows() != n || qx.ncols() != n {
        return Err(Error::DimensionMismatch("dlqr".into()));
    }
    let nu = b.ncols();
    if r.nrows() != nu || r.ncols() != nu {
        return Err(Error::DimensionMismatch("dlqr input weight".into()));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = qx.clone();
    let mut residual = f64::INFINITY;
    for _ in 0..100_000 {
        let s = r + &bt * &p * b;
        let s_inv = s
            .lu()
            .solve(&(&bt * &p * a))
            .ok_or_else(|| Error::NumericalFailure("singular R + B'PB".into()))?;
        let p_next = &at * &p * a - (&at * &p * b) * &s_inv + qx;
        residual = (&p_next - &p).amax();
        p = (&p_next + p_next.transpose()) * 0.5;
        if residual <= 1e-13 * (1.0 + p.amax()) {
            break;
        }
    }
    // DARE residual check.
    let s = r + &bt * &p * b;
    let k = -s
        .lu()
        .solve(&(&bt * &p * a))
        .ok_or_else(|| Error::NumericalFailure("singular R + B'PB".into()))?;
    let dare = &at * &p * a - (&at * &p * b) * (r + &bt * &p * b).lu().solve(&(&bt * &p * a)).unwrap()
        + qx
        - &p;
    if dare.amax() > 1e-9 * (1.0 + p.amax()) || !residual.is_finite() {
        return Err(Error::NumericalFailure(
            "Riccati iteration did not converge (pair not stabilizable?)".into(),
        ));
    }
    let acl = a + b * &k;
    if spectral_radius(&acl) >= 1.0 - 1e-9 {
        return Err(Error::NumericalFailure(
            "LQR gain not stabilizing (pair not stabilizable?)".into(),
        ));
    }
    Ok((k, p))
}

/// Discrete Lyapunov equation  P = Acl' P Acl + W  via the vectorized
/// direct solve.
pub fn dlyap(acl: &Matrix, w: &Matrix) -> Result<Matrix> {
    let n = acl.nrows();
    if acl.ncols() != n || w.nrows() != n || w.ncols() != n {
        return Err(Error::DimensionMismatch("dlyap".into()));
    }
    if spectral_radius(acl) >= 1.0 {
        return Err(Error::InvalidArgument(
            "dlyap requires spectral radius < 1".into(),
        ));
    }
    let at = acl.transpose();
    let kron = at.kronecker(&at); // vec(A' P A) = (A' (x) A') vec(P)
    let n2 = n * n;
    let lhs = Matrix::identity(n2, n2) - kron;
    let wvec = Vector::from_iterator(n2, w.iter().cloned());
    let pvec = lhs
        .lu()
        .solve(&wvec)
        .ok_or_else(|| Error::NumericalFailure("singular Lyapunov system".into()))?;
    let p = Matrix::from_iterator(n, n, pvec.iter().cloned());
    let p = (&p + p.transpose()) * 0.5;
    let res = (&at * &p * acl + w - &p).amax();
    if res > 1e-9 * (1.0 + p.amax()) {
        return Err(Error::NumericalFailure("Lyapunov residual too large".into()));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn mat(rows: usize, cols: usize, data: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, data)
    }

    fn vec_(data: &[f64]) -> Vector {
        Vector::from_row_slice(data)
    }

    fn assert_optimal(st: &SolveStatus) -> (&Vector, f64) {
        match st {
            SolveStatus::Optimal {
                z,
                objective,
                feas_residual,
                stat_residual,
            } => {
                assert!(*feas_residual <= FEAS_TOL, "feas {feas_residual}");
                assert!(*stat_residual <= OPT_TOL, "stat {stat_residual}");
                (z, *objective)
            }
            other => panic!("expected Optimal, got {other:?}"),
        }
    }

    #[test]
    fn lp_one_active_constraint() {
        // min z s.t. z >= 1
        let p = LpProblem::new(vec_(&[1.0]), mat(1, 1, &[-1.0]), vec_(&[-1.0]));
        let st = solve_lp(&p).unwrap();
        let (z, obj) = assert_optimal(&st);
        assert_abs_diff_eq!(z[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(obj, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn lp_contradictory_halfspaces() {
        let p = LpProblem::new(
            vec_(&[1.0]),
            mat(2, 1, &[1.0, -1.0]),
            vec_(&[-1.0, -1.0]),
        );
        assert!(matches!(solve_lp(&p).unwrap(), SolveStatus::Infeasible));
    }

    #[test]
    fn lp_unbounded_ray() {
        // min -z s.t. z >= 0
        let p = LpProblem::new(vec_(&[-1.0]), mat(1, 1, &[-1.0]), vec_(&[0.0]));
        assert!(matches!(solve_lp(&p).unwrap(), SolveStatus::Unbounded));
    }

    #[test]
    fn lp_with_equalities() {
        // min x + y s.t. x + y = 1, x,y >= 0 -> obj 1
        let p = LpProblem::new(
            vec_(&[1.0, 1.0]),
            mat(2, 2, &[-1.0, 0.0, 0.0, -1.0]),
            vec_(&[0.0, 0.0]),
        )
        .with_equalities(mat(1, 2, &[1.0, 1.0]), vec_(&[1.0]));
        let (_, obj) = assert_optimal(&solve_lp(&p).unwrap());
        assert_abs_diff_eq!(obj, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn qp_projection_onto_halfspace() {
        // min (z-1)^2 s.t. z <= 0 -> z = 0
        let p = QpProblem::new(mat(1, 1, &[2.0]), vec_(&[-2.0]), mat(1, 1, &[1.0]), vec_(&[0.0]));
        let st = solve_qp(&p).unwrap();
        let (z, _) = assert_optimal(&st);
        assert_abs_diff_eq!(z[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn qp_unconstrained_stationarity() {
        let h = mat(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let f = vec_(&[1.0, -2.0]);
        let p = QpProblem::new(h.clone(), f.clone(), Matrix::zeros(0, 2), Vector::zeros(0));
        let st = solve_qp(&p).unwrap();
        let (z, _) = assert_optimal(&st);
        let expect = -h.lu().solve(&f).unwrap();
        assert_abs_diff_eq!((z - expect).amax(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn qp_box_constrained_matches_grid_search() {
        let mut rng = StdRng::seed_from_u64(7);
        let m: Matrix = Matrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
        let h = &m * m.transpose() + Matrix::identity(3, 3) * 0.5;
        let f = Vector::from_fn(3, |_, _| rng.gen_range(-1.0..1.0));
        // box [-1,1]^3
        let mut g = Matrix::zeros(6, 3);
        let mut hb = Vector::zeros(6);
        for i in 0..3 {
            g[(i, i)] = 1.0;
            hb[i] = 1.0;
            g[(3 + i, i)] = -1.0;
            hb[3 + i] = 1.0;
        }
        let p = QpProblem::new(h.clone(), f.clone(), g, hb);
        let st = solve_qp(&p).unwrap();
        let (z, obj) = assert_optimal(&st);
        // 100^3 grid oracle
        let mut best = f64::INFINITY;
        let steps = 100;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let x = vec_(&[
                        -1.0 + 2.0 * i as f64 / steps as f64,
                        -1.0 + 2.0 * j as f64 / steps as f64,
                        -1.0 + 2.0 * k as f64 / steps as f64,
                    ]);
                    let v = 0.5 * (&h * &x).dot(&x) + f.dot(&x);
                    if v < best {
                        best = v;
                    }
                }
            }
        }
        assert!(obj <= best + 1e-3, "solver {obj} vs grid {best}");
        assert!(z.amax() <= 1.0 + 1e-9);
    }

    #[test]
    fn qp_objective_below_random_feasible_points() {
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..5 {
            let m: Matrix = Matrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let h = &m * m.transpose() + Matrix::identity(3, 3) * 0.1;
            let f = Vector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
            let mut g = Matrix::zeros(6, 3);
            let mut hb = Vector::zeros(6);
            for i in 0..3 {
                g[(i, i)] = 1.0;
                hb[i] = 2.0;
                g[(3 + i, i)] = -1.0;
                hb[3 + i] = 2.0;
            }
            let p = QpProblem::new(h.clone(), f.clone(), g, hb);
            let (_, obj) = assert_optimal(&solve_qp(&p).unwrap());
            for _ in 0..1000 {
                let x = Vector::from_fn(3, |_, _| rng.gen_range(-2.0..2.0));
                let v = 0.5 * (&h * &x).dot(&x) + f.dot(&x);
                assert!(obj <= v + 1e-9);
            }
        }
    }

    #[test]
    fn qp_infeasible() {
        let p = QpProblem::new(
            mat(1, 1, &[2.0]),
            vec_(&[0.0]),
            mat(2, 1, &[1.0, -1.0]),
            vec_(&[-1.0, -1.0]),
        );
        assert!(matches!(solve_qp(&p).unwrap(), SolveStatus::Infeasible));
    }

    #[test]
    fn dlqr_scalar_fixed_point_oracle() {
        let a = mat(1, 1, &[0.5]);
        let b = mat(1, 1, &[1.0]);
        let q = mat(1, 1, &[1.0]);
        let r = mat(1, 1, &[1.0]);
        // scalar Riccati oracle: p = a^2 p - (a p b)^2/(r + b^2 p) + q
        let mut p_or = 1.0f64;
        for _ in 0..10_000 {
            let pn = 0.25 * p_or - (0.5 * p_or).powi(2) / (1.0 + p_or) + 1.0;
            if (pn - p_or).abs() < 1e-14 {
                p_or = pn;
                break;
            }
            p_or = pn;
        }
        let (k, p) = dlqr(&a, &b, &q, &r).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], p_or, epsilon = 1e-12);
        assert!((0.5 + k[(0, 0)]).abs() < 1.0);
    }

    #[test]
    fn dlqr_deadbeat_plant() {
        let (k, p) = dlqr(
            &mat(1, 1, &[0.0]),
            &mat(1, 1, &[2.0]),
            &mat(1, 1, &[1.0]),
            &mat(1, 1, &[1.0]),
        )
        .unwrap();
        assert_abs_diff_eq!(k[(0, 0)], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn dlqr_random_stable_closed_loop() {
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..10 {
            let mut a: Matrix = Matrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let sr = spectral_radius(&a);
            a *= 0.9 / sr.max(0.1);
            let b = Matrix::identity(3, 3);
            let q = Matrix::identity(3, 3);
            let r = Matrix::identity(3, 3) * 0.5;
            let (k, _) = dlqr(&a, &b, &q, &r).unwrap();
            let cl = &a + &b * &k;
            assert!(spectral_radius(&cl) < 1.0 - 1e-9);
        }
    }

    #[test]
    fn dlyap_scalar_geometric_series() {
        let p = dlyap(&mat(1, 1, &[0.5]), &mat(1, 1, &[1.0])).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 4.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn dlyap_zero_forcing() {
        let p = dlyap(&mat(2, 2, &[0.3, 0.1, 0.0, 0.2]), &Matrix::zeros(2, 2)).unwrap();
        assert_abs_diff_eq!(p.amax(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dlyap_random_stable_residual() {
        let mut rng = StdRng::seed_from_u64(11);
        for _ in 0..10 {
            let mut a: Matrix = Matrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            a *= 0.85 / spectral_radius(&a).max(0.1);
            let m: Matrix = Matrix::from_fn(3, 3, |_, _| rng.gen_range(-1.0..1.0));
            let w = &m * m.transpose();
            let p = dlyap(&a, &w).unwrap();
            let res = (a.transpose() * &p * &a + &w - &p).norm();
            assert!(res <= 1e-9 * (1.0 + p.amax()));
            assert!((&p - p.transpose()).amax() <= 1e-12 * (1.0 + p.amax()));
        }
    }

    #[test]
    fn dlyap_rejects_unstable() {
        assert!(dlyap(&mat(1, 1, &[1.1]), &mat(1, 1, &[1.0])).is_err());
    }
}
