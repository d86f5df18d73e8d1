//! Online control: steady-state target selection, terminal-ingredient
//! synthesis with per-edge certification, dwell-time bookkeeping, the
//! condensed switched-MPC QP, and the closed-loop driver.

use crate::contour::{contouring_error, ContourSegment};
use crate::invariance::{ModeGraph, ModeModel, SwitchCiFamily};
use crate::numsolve::{dlqr, dlyap, solve_qp, QpProblem, SolveStatus};
use crate::polytope::Polytope;
use crate::{Error, Matrix, Result, Vector};
use std::collections::BTreeMap;

/// MPC tuning: horizon, weights, and the global input/state sets.
#[derive(Debug, Clone)]
pub struct MpcConfig {
    pub n: usize,
    pub q: Matrix,
    pub r: Matrix,
    pub q_s: Matrix,
    pub u_set: Polytope,
    pub x_set: Polytope,
}

impl MpcConfig {
    pub fn new(
        n: usize,
        q: Matrix,
        r: Matrix,
        q_s: Matrix,
        u_set: Polytope,
        x_set: Polytope,
    ) -> Result<Self> {
        if n < 1 {
            return Err(Error::InvalidArgument("horizon must be >= 1".into()));
        }
        for (name, w) in [("Q", &q), ("R", &r), ("Q_s", &q_s)] {
            if w.nrows() != w.ncols() {
                return Err(Error::DimensionMismatch(format!("{name} must be square")));
            }
            if (w - w.transpose()).amax() > 1e-9 * (1.0 + w.amax()) {
                return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
            }
            if w.clone().symmetric_eigen().eigenvalues.min() <= 0.0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive definite")));
            }
        }
        if q.nrows() != 2 || q_s.nrows() != 2 {
            return Err(Error::DimensionMismatch("output weights must be 2x2".into()));
        }
        Ok(Self { n, q, r, q_s, u_set, x_set })
    }
}

/// Per-mode terminal gain/cost pair plus the per-edge certificate
/// (minimum eigenvalue of the terminal-cost decrease condition).
#[derive(Debug, Clone)]
pub struct TerminalIngredients {
    pub gains: BTreeMap<usize, (Matrix, Matrix)>,
    pub certificates: BTreeMap<(usize, usize), f64>,
}

impl TerminalIngredients {
    pub fn p_of(&self, mode: usize) -> Result<&Matrix> {
        self.gains
            .get(&mode)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::ModeError { mode, msg: "no terminal ingredients".into() })
    }

    pub fn k_of(&self, mode: usize) -> Result<&Matrix> {
        self.gains
            .get(&mode)
            .map(|(k, _)| k)
            .ok_or_else(|| Error::ModeError { mode, msg: "no terminal ingredients".into() })
    }
}

/// Constrained equilibrium whose output is Q_s-closest to the reference.
#[derive(Debug, Clone)]
pub struct SteadyTarget {
    pub x_s: Vector,
    pub u_s: Vector,
    pub y_s: Vector,
}

/// Switching-signal bookkeeping: current mode, announced next mode, and
/// the remaining-dwell countdown.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DwellState {
    pub sigma: usize,
    pub sigma_next: usize,
    pub delta: usize,
}

fn min_eig_sym(m: &Matrix) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    s.symmetric_eigen().eigenvalues.min()
}

/// Steady-state target: minimize ||r - y_s||^2_{Q_s} over constrained
/// equilibria x_s = A x_s + B u_s, (x_s, u_s) in X x U.
pub fn steady_target(r: (f64, f64), model: &ModeModel, cfg: &MpcConfig) -> Result<SteadyTarget> {
    let nx = model.n_states();
    let nu = model.n_inputs();
    let nz = nx + nu;
    let rv = Vector::from_row_slice(&[r.0, r.1]);
    // objective over z = (x_s, u_s)
    let ctqc = model.c.transpose() * &cfg.q_s * &model.c;
    let mut h_mat = Matrix::zeros(nz, nz);
    h_mat.view_mut((0, 0), (nx, nx)).copy_from(&(2.0 * ctqc));
    let mut f = Vector::zeros(nz);
    f.rows_mut(0, nx)
        .copy_from(&(-2.0 * model.c.transpose() * &cfg.q_s * &rv));
    // equality (A - I) x_s + B u_s = 0
    let mut e_mat = Matrix::zeros(nx, nz);
    e_mat
        .view_mut((0, 0), (nx, nx))
        .copy_from(&(&model.a - Matrix::identity(nx, nx)));
    e_mat.view_mut((0, nx), (nx, nu)).copy_from(&model.b);
    let e_rhs = Vector::zeros(nx);
    // inequalities: x_s in X, u_s in U
    let (a_x, b_x) = cfg.x_set.rows();
    let (a_u, b_u) = cfg.u_set.rows();
    let mut g = Matrix::zeros(a_x.nrows() + a_u.nrows(), nz);
    g.view_mut((0, 0), (a_x.nrows(), nx)).copy_from(a_x);
    g.view_mut((a_x.nrows(), nx), (a_u.nrows(), nu)).copy_from(a_u);
    let mut hvec = Vector::zeros(a_x.nrows() + a_u.nrows());
    hvec.rows_mut(0, a_x.nrows()).copy_from(b_x);
    hvec.rows_mut(a_x.nrows(), a_u.nrows()).copy_from(b_u);

    let qp = QpProblem::new(h_mat, f, g, hvec).with_equalities(e_mat, e_rhs);
    match solve_qp(&qp)? {
        SolveStatus::Optimal { z, .. } => {
            let x_s = Vector::from(z.rows(0, nx));
            let u_s = Vector::from(z.rows(nx, nu));
            let resid = (&model.a * &x_s + &model.b * &u_s - &x_s).amax();
            if resid > 1e-9 {
                return Err(Error::NumericalFailure(format!(
                    "steady target equilibrium residual {resid:.3e}"
                )));
            }
            let y_s = &model.c * &x_s;
            Ok(SteadyTarget { x_s, u_s, y_s })
        }
        SolveStatus::Infeasible => Err(Error::Infeasible(
            "no constrained equilibrium exists for this mode".into(),
        )),
        SolveStatus::Unbounded => Err(Error::Unbounded("steady-target QP".into())),
        SolveStatus::NumericalFailure => {
            Err(Error::NumericalFailure("steady-target QP".into()))
        }
    }
}

/// LQR terminal gains, Lyapunov terminal costs, and per-edge
/// certification of the terminal-cost decrease condition
/// P_m - Acl_m' P_n Acl_m - C'QC - K'RK >= -1e-8, with lambda-scaling of
/// P_m (smallest lambda in [1, 1e6], bisection tolerance 1e-6) when an
/// edge check fails.
pub fn synthesize_terminal(
    models: &[ModeModel],
    graph: &ModeGraph,
    cfg: &MpcConfig,
) -> Result<TerminalIngredients> {
    let mut ks: BTreeMap<usize, Matrix> = BTreeMap::new();
    let mut ps: BTreeMap<usize, Matrix> = BTreeMap::new();
    let mut ws: BTreeMap<usize, Matrix> = BTreeMap::new();
    let mut acls: BTreeMap<usize, Matrix> = BTreeMap::new();
    for &m in &graph.modes {
        let model = models
            .iter()
            .find(|md| md.mode_id == m)
            .ok_or_else(|| Error::ModeError { mode: m, msg: "no model".into() })?;
        let qx = model.c.transpose() * &cfg.q * &model.c;
        let (k, _) = dlqr(&model.a, &model.b, &qx, &cfg.r)?;
        let acl = &model.a + &model.b * &k;
        let w = &qx + k.transpose() * &cfg.r * &k;
        let p = dlyap(&acl, &w)?;
        ks.insert(m, k);
        ps.insert(m, p);
        ws.insert(m, w);
        acls.insert(m, acl);
    }
    // every mode certifies its self-loop plus all listed outgoing edges
    let out_edges = |m: usize| -> Vec<usize> {
        let mut e: Vec<usize> = vec![m];
        for n in graph.successors(m) {
            if n != m && !e.contains(&n) {
                e.push(n);
            }
        }
        e
    };
    let cert = |lam: f64, m: usize, n: usize, ps: &BTreeMap<usize, Matrix>| -> f64 {
        let p_n = if n == m { lam * &ps[&m] } else { ps[&n].clone() };
        let expr = lam * &ps[&m] - acls[&m].transpose() * p_n * &acls[&m] - &ws[&m];
        min_eig_sym(&expr)
    };
    for _pass in 0..60 {
        let mut changed = false;
        for &m in &graph.modes {
            let ok = |lam: f64, ps: &BTreeMap<usize, Matrix>| {
                out_edges(m).iter().all(|&n| cert(lam, m, n, ps) >= -1e-8)
            };
            if ok(1.0, &ps) {
                continue;
            }
            if !ok(1e6, &ps) {
                return Err(Error::NumericalFailure(
                    "Assumption 3 unsatisfiable with Lyapunov-based P".into(),
                ));
            }
            let (mut lo, mut hi) = (1.0, 1e6);
            while hi - lo > 1e-6 {
                let mid = 0.5 * (lo + hi);
                if ok(mid, &ps) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let scaled = hi * &ps[&m];
            ps.insert(m, scaled);
            changed = true;
        }
        if !changed {
            break;
        }
    }
    let mut certificates = BTreeMap::new();
    for &m in &graph.modes {
        for n in out_edges(m) {
            let e = cert(1.0, m, n, &ps);
            if e < -1e-8 {
                return Err(Error::NumericalFailure(format!(
                    "Assumption 3 unsatisfiable with Lyapunov-based P: edge ({m}, {n}) \
                     certificate {e:.3e}"
                )));
            }
            certificates.insert((m, n), e);
        }
    }
    let gains = graph
        .modes
        .iter()
        .map(|&m| (m, (ks[&m].clone(), ps[&m].clone())))
        .collect();
    Ok(TerminalIngredients { gains, certificates })
}

/// Remaining-dwell-time recursion: decrement (floored at 0) while the
/// mode persists; reset to the new mode's dwell bound on an admissible
/// switch.
pub fn update_dwell(ds: &DwellState, sigma_new: usize, graph: &ModeGraph) -> Result<DwellState> {
    if sigma_new == ds.sigma {
        return Ok(DwellState {
            delta: ds.delta.saturating_sub(1),
            ..*ds
        });
    }
    if ds.delta > 0 {
        return Err(Error::DwellViolation(format!(
            "switch {} -> {sigma_new} attempted with {} samples of dwell remaining",
            ds.sigma, ds.delta
        )));
    }
    if !graph.has_edge(ds.sigma, sigma_new) {
        return Err(Error::DwellViolation(format!(
            "switch {} -> {sigma_new} is not an edge of the mode graph",
            ds.sigma
        )));
    }
    Ok(DwellState {
        sigma: sigma_new,
        sigma_next: ds.sigma_next,
        delta: graph.dwell_of(sigma_new),
    })
}

/// One condensed-QP MPC solve: stage cost on the output/input tracking
/// errors, state-space terminal cost, input constraints at every step,
/// S_active on predicted states while dwelling and the switch CI set
/// afterwards. Returns the first input, the optimal cost, and the
/// predicted state sequence x(1..N).
#[allow(clippy::too_many_arguments)]
pub fn mpc_step(
    x: &Vector,
    ds: &DwellState,
    target: &SteadyTarget,
    family: &SwitchCiFamily,
    s_active: &Polytope,
    models: &[ModeModel],
    cfg: &MpcConfig,
    terminals: &TerminalIngredients,
) -> Result<(Vector, f64, Vec<Vector>)> {
    let model = models
        .iter()
        .find(|m| m.mode_id == ds.sigma)
        .ok_or_else(|| Error::ModeError { mode: ds.sigma, msg: "no model".into() })?;
    let nx = model.n_states();
    let nu = model.n_inputs();
    let n = cfg.n;
    let nv = n * nu;
    let p_term = terminals.p_of(ds.sigma)?;
    let c_sigma = family.get(ds.sigma)?;

    // prediction operators: x(i) = a_pow[i] x + phi[i] v
    let mut a_pow: Vec<Matrix> = Vec::with_capacity(n + 1);
    a_pow.push(Matrix::identity(nx, nx));
    for i in 1..=n {
        a_pow.push(&a_pow[i - 1] * &model.a);
    }
    let mut phi: Vec<Matrix> = Vec::with_capacity(n + 1);
    phi.push(Matrix::zeros(nx, nv));
    for i in 1..=n {
        let mut m = Matrix::zeros(nx, nv);
        for j in 0..i {
            m.view_mut((0, j * nu), (nx, nu))
                .copy_from(&(&a_pow[i - 1 - j] * &model.b));
        }
        phi.push(m);
    }

    let qy = model.c.transpose() * &cfg.q * &model.c;
    let mut h_mat = Matrix::zeros(nv, nv);
    let mut f = Vector::zeros(nv);
    let y0 = &model.c * x;
    let e0 = &y0 - &target.y_s;
    let mut constant = (e0.transpose() * &cfg.q * &e0)[(0, 0)];
    // output stage terms i = 1..N-1 (i = 0 is the constant above)
    for i in 1..n {
        let alpha = &a_pow[i] * x;
        h_mat += 2.0 * phi[i].transpose() * &qy * &phi[i];
        let lin = &qy * &alpha - model.c.transpose() * &cfg.q * &target.y_s;
        f += 2.0 * phi[i].transpose() * &lin;
        let ea = &model.c * &alpha - &target.y_s;
        constant += (ea.transpose() * &cfg.q * &ea)[(0, 0)];
    }
    // input stage terms
    for i in 0..n {
        h_mat
            .view_mut((i * nu, i * nu), (nu, nu))
            .add_assign(&(2.0 * &cfg.r));
        f.rows_mut(i * nu, nu)
            .add_assign(&(-2.0 * &cfg.r * &target.u_s));
    }
    constant += (target.u_s.transpose() * &cfg.r * &target.u_s)[(0, 0)] * n as f64;
    // terminal term on x(N)
    {
        let alpha = &a_pow[n] * x;
        h_mat += 2.0 * phi[n].transpose() * p_term * &phi[n];
        f += 2.0 * phi[n].transpose() * (p_term * (&alpha - &target.x_s));
        let ea = &alpha - &target.x_s;
        constant += (ea.transpose() * p_term * &ea)[(0, 0)];
    }

    // constraints: u(i) in U; x(i+1) in S_active for i < delta, in
    // C_sigma for delta <= i <= N-1
    let (a_u, b_u) = cfg.u_set.rows();
    let mut g_rows: Vec<Matrix> = Vec::new();
    let mut h_rows: Vec<Vector> = Vec::new();
    for i in 0..n {
        let mut g = Matrix::zeros(a_u.nrows(), nv);
        g.view_mut((0, i * nu), (a_u.nrows(), nu)).copy_from(a_u);
        g_rows.push(g);
        h_rows.push(b_u.clone());
    }
    for i in 0..n {
        let set = if i < ds.delta { s_active } else { c_sigma };
        let (a_s, b_s) = set.rows();
        if a_s.nrows() == 0 {
            continue;
        }
        let alpha = &a_pow[i + 1] * x;
        g_rows.push(a_s * &phi[i + 1]);
        h_rows.push(b_s - a_s * alpha);
    }
    let total_rows: usize = g_rows.iter().map(|g| g.nrows()).sum();
    let mut g = Matrix::zeros(total_rows, nv);
    let mut h = Vector::zeros(total_rows);
    let mut at = 0;
    for (gr, hr) in g_rows.iter().zip(&h_rows) {
        g.view_mut((at, 0), (gr.nrows(), nv)).copy_from(gr);
        h.rows_mut(at, hr.len()).copy_from(hr);
        at += gr.nrows();
    }

    let h_mat = (&h_mat + h_mat.transpose()) * 0.5;
    let qp = QpProblem::new(h_mat, f, g, h);
    match solve_qp(&qp)? {
        SolveStatus::Optimal { z, objective, .. } => {
            let u0 = Vector::from(z.rows(0, nu));
            let cost = objective + constant;
            let predicted: Vec<Vector> = (1..=n).map(|i| &a_pow[i] * x + &phi[i] * &z).collect();
            Ok((u0, cost, predicted))
        }
        SolveStatus::Infeasible => Err(Error::Infeasible(format!(
            "MPC QP infeasible in mode {} with delta = {}",
            ds.sigma, ds.delta
        ))),
        SolveStatus::Unbounded => Err(Error::Unbounded("MPC QP".into())),
        SolveStatus::NumericalFailure => Err(Error::NumericalFailure("MPC QP".into())),
    }
}

use std::ops::AddAssign;

/// One sample of the closed loop.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    pub r: (f64, f64),
    pub x: Vector,
    pub u: Vector,
    pub y: (f64, f64),
    pub sigma: usize,
    pub delta: usize,
    pub eps: f64,
    pub cost: f64,
    pub qp_status: &'static str,
}

/// Immutable bundle of the offline artifacts the closed loop needs.
pub struct LoopArtifacts<'a> {
    pub models: &'a [ModeModel],
    pub graph: &'a ModeGraph,
    pub family: &'a SwitchCiFamily,
    pub terminals: &'a TerminalIngredients,
    pub cfg: &'a MpcConfig,
    pub contour: &'a [ContourSegment],
    /// Terminal regulation stops once ||y - y_s|| falls below this.
    pub settle_tol: f64,
    /// Cap on extra settling samples after the last reference point.
    pub settle_cap: usize,
}

/// Closed-loop driver: at each sample, pick the steady target for the
/// current reference, solve the MPC QP, apply the first input through
/// the plant hook, then advance the switching signal. The `supervisor`
/// returns (desired mode, announced next mode) for a sample index,
/// measured state, and current mode. After the last reference point the
/// loop continues until ||y - y_s|| <= settle_tol or settle_cap extra
/// steps. Records accumulate in `records` so that an infeasibility
/// still leaves the trace prefix behind.
pub fn control_loop<P, S>(
    art: &LoopArtifacts,
    refs: &[(f64, f64)],
    x0: Vector,
    ds0: DwellState,
    mut plant: P,
    mut supervisor: S,
    records: &mut Vec<StepRecord>,
) -> Result<()>
where
    P: FnMut(&Vector, &Vector) -> Vector,
    S: FnMut(usize, &Vector, usize) -> (usize, usize),
{
    if refs.is_empty() {
        return Err(Error::InvalidArgument("empty reference stream".into()));
    }
    let n_r = refs.len();
    let mut x = x0;
    let mut ds = ds0;
    let mut k = 0usize;
    loop {
        let r = refs[k.min(n_r - 1)];
        let model = art
            .models
            .iter()
            .find(|m| m.mode_id == ds.sigma)
            .ok_or_else(|| Error::ModeError { mode: ds.sigma, msg: "no model".into() })?;
        let target = steady_target(r, model, art.cfg)?;
        let (u0, cost, _) = mpc_step(
            &x,
            &ds,
            &target,
            art.family,
            &model.s,
            art.models,
            art.cfg,
            art.terminals,
        )
        .map_err(|e| Error::MpcInfeasible { step: k, msg: e.to_string() })?;
        let yv = &model.c * &x;
        let y = (yv[0], yv[1]);
        let eps = contouring_error(y.0, y.1, art.contour);
        records.push(StepRecord {
            k,
            r,
            x: x.clone(),
            u: u0.clone(),
            y,
            sigma: ds.sigma,
            delta: ds.delta,
            eps,
            cost,
            qp_status: "optimal",
        });
        if k + 1 >= n_r {
            let settled = (&yv - &target.y_s).norm() <= art.settle_tol;
            if settled || k + 1 >= n_r + art.settle_cap {
                return Ok(());
            }
        }
        x = plant(&x, &u0);
        let (desired, next) = supervisor((k + 1).min(n_r - 1), &x, ds.sigma);
        ds = if desired != ds.sigma && ds.delta == 0 && art.graph.has_edge(ds.sigma, desired) {
            update_dwell(&ds, desired, art.graph)?
        } else {
            update_dwell(&ds, ds.sigma, art.graph)?
        };
        ds.sigma_next = next;
        k += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::invariance::{switch_ci_sets, ReachOp};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;

    fn interval(lo: f64, hi: f64) -> Polytope {
        Polytope::from_box(&[lo], &[hi]).unwrap()
    }

    /// Two decoupled discrete double integrators (x, vx, y, vy).
    fn dual_integrator(ts: f64) -> (Matrix, Matrix, Matrix) {
        let a = Matrix::from_row_slice(
            4,
            4,
            &[
                1.0, ts, 0.0, 0.0, //
                0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, ts, //
                0.0, 0.0, 0.0, 1.0,
            ],
        );
        let b = Matrix::from_row_slice(
            4,
            2,
            &[
                0.5 * ts * ts,
                0.0,
                ts,
                0.0,
                0.0,
                0.5 * ts * ts,
                0.0,
                ts,
            ],
        );
        let c = Matrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        (a, b, c)
    }

    fn dual_integrator_mode(box_half: f64) -> (ModeModel, MpcConfig) {
        let (a, b, c) = dual_integrator(0.1);
        let x_set = Polytope::from_box(
            &[-box_half, -1.0, -box_half, -1.0],
            &[box_half, 1.0, box_half, 1.0],
        )
        .unwrap();
        let u_set = Polytope::from_box(&[-2.0, -2.0], &[2.0, 2.0]).unwrap();
        let model = ModeModel::new(
            0,
            a,
            b,
            c,
            interval(-box_half, box_half),
            x_set.clone(),
        )
        .unwrap();
        let cfg = MpcConfig::new(
            3,
            Matrix::identity(2, 2) * 10.0,
            Matrix::identity(2, 2) * 0.1,
            Matrix::identity(2, 2),
            u_set,
            x_set,
        )
        .unwrap();
        (model, cfg)
    }

    #[test]
    fn steady_target_interior_reference() {
        let (model, cfg) = dual_integrator_mode(1.0);
        let t = steady_target((0.3, -0.4), &model, &cfg).unwrap();
        assert_abs_diff_eq!(t.y_s[0], 0.3, epsilon = 1e-8);
        assert_abs_diff_eq!(t.y_s[1], -0.4, epsilon = 1e-8);
        assert!(t.u_s.amax() < 1e-6);
        assert!((&model.a * &t.x_s + &model.b * &t.u_s - &t.x_s).amax() < 1e-9);
    }

    #[test]
    fn steady_target_projects_outside_reference() {
        let (model, cfg) = dual_integrator_mode(1.0);
        let t = steady_target((5.0, 0.2), &model, &cfg).unwrap();
        // Q_s = I: Euclidean projection of (5.0, 0.2) onto the box
        assert_abs_diff_eq!(t.y_s[0], 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(t.y_s[1], 0.2, epsilon = 1e-6);
    }

    #[test]
    fn steady_target_no_equilibrium_errors() {
        // x+ = 2x + u: equilibria satisfy x_s = -u_s in [-0.1, 0.1],
        // but X = [1, 2] excludes them all
        let model = ModeModel::new(
            0,
            Matrix::from_element(1, 1, 2.0),
            Matrix::from_element(1, 1, 1.0),
            Matrix::from_row_slice(2, 1, &[1.0, 0.0]),
            interval(-1.0, 1.0),
            interval(1.0, 2.0),
        )
        .unwrap();
        let cfg = MpcConfig::new(
            1,
            Matrix::identity(2, 2),
            Matrix::identity(1, 1),
            Matrix::identity(2, 2),
            interval(-0.1, 0.1),
            interval(1.0, 2.0),
        )
        .unwrap();
        assert!(matches!(
            steady_target((1.5, 0.0), &model, &cfg),
            Err(Error::Infeasible(_))
        ));
    }

    fn scalar_out_c() -> Matrix {
        Matrix::from_row_slice(2, 1, &[1.0, 0.0])
    }

    fn scalar_mode(id: usize, a: f64, b: f64, s: Polytope) -> ModeModel {
        ModeModel::new(
            id,
            Matrix::from_element(1, 1, a),
            Matrix::from_element(1, 1, b),
            scalar_out_c(),
            interval(-10.0, 10.0),
            s,
        )
        .unwrap()
    }

    fn scalar_cfg(n: usize, q: f64, r: f64, u: Polytope, x: Polytope) -> MpcConfig {
        MpcConfig::new(
            n,
            Matrix::from_diagonal(&Vector::from_row_slice(&[q, q])),
            Matrix::from_element(1, 1, r),
            Matrix::identity(2, 2),
            u,
            x,
        )
        .unwrap()
    }

    #[test]
    fn terminal_scalar_closed_form() {
        // a = 0.5, b = 1, q = 1, r = 1: DARE root of P^2 - P/4 - 1 = 0
        let model = scalar_mode(0, 0.5, 1.0, interval(-1.0, 1.0));
        let graph = ModeGraph::new(vec![0], vec![(0, 0)], BTreeMap::from([(0, 1)])).unwrap();
        let cfg = scalar_cfg(3, 1.0, 1.0, interval(-1.0, 1.0), interval(-1.0, 1.0));
        let t = synthesize_terminal(&[model], &graph, &cfg).unwrap();
        let p_expect = 0.5 * (0.25 + (0.0625f64 + 4.0).sqrt());
        let (k, p) = &t.gains[&0];
        assert_abs_diff_eq!(p[(0, 0)], p_expect, epsilon = 1e-9);
        assert_abs_diff_eq!(k[(0, 0)], -0.5 * p_expect / (1.0 + p_expect), epsilon = 1e-9);
        // the self-loop certificate is the Lyapunov residual, ~0
        assert!(t.certificates[&(0, 0)].abs() < 1e-8);
    }

    #[test]
    fn terminal_lambda_scaling_engages() {
        // mode 1 barely stable with weak input authority: large P;
        // edge (0, 1) forces mode 0's P upward
        let models = vec![
            scalar_mode(0, 0.5, 1.0, interval(-1.0, 1.0)),
            scalar_mode(1, 0.99, 0.1, interval(-1.0, 1.0)),
        ];
        let graph = ModeGraph::new(
            vec![0, 1],
            vec![(0, 1)],
            BTreeMap::from([(0, 1), (1, 1)]),
        )
        .unwrap();
        let cfg = scalar_cfg(3, 1.0, 1.0, interval(-1.0, 1.0), interval(-1.0, 1.0));
        let t = synthesize_terminal(&models, &graph, &cfg).unwrap();
        for (&edge, &e) in &t.certificates {
            assert!(e >= -1e-8, "edge {edge:?}: {e}");
        }
        // mode 0's P exceeds the unscaled Lyapunov value
        let p_lyap = 0.5 * (0.25 + (0.0625f64 + 4.0).sqrt());
        assert!(t.gains[&0].1[(0, 0)] > p_lyap * 1.2);
    }

    #[test]
    fn update_dwell_recursion() {
        let graph = ModeGraph::new(
            vec![0, 1],
            vec![(0, 1)],
            BTreeMap::from([(0, 3), (1, 5)]),
        )
        .unwrap();
        let ds = DwellState { sigma: 0, sigma_next: 1, delta: 3 };
        let ds = update_dwell(&ds, 0, &graph).unwrap();
        assert_eq!(ds.delta, 2);
        let ds0 = DwellState { sigma: 0, sigma_next: 1, delta: 0 };
        assert_eq!(update_dwell(&ds0, 0, &graph).unwrap().delta, 0);
        let switched = update_dwell(&ds0, 1, &graph).unwrap();
        assert_eq!(switched.sigma, 1);
        assert_eq!(switched.delta, 5);
        // dwell violation and non-edge switch
        assert!(matches!(
            update_dwell(&ds, 1, &graph),
            Err(Error::DwellViolation(_))
        ));
        assert!(matches!(
            update_dwell(&ds0, 7, &graph),
            Err(Error::DwellViolation(_))
        ));
    }

    fn scalar_problem() -> (Vec<ModeModel>, ModeGraph, MpcConfig, SwitchCiFamily, TerminalIngredients)
    {
        let models = vec![scalar_mode(0, 1.0, 1.0, interval(-1.0, 1.0))];
        let graph = ModeGraph::new(vec![0], vec![(0, 0)], BTreeMap::from([(0, 1)])).unwrap();
        let cfg = scalar_cfg(1, 1.0, 1.0, interval(-1.0, 1.0), interval(-1.0, 1.0));
        let family = switch_ci_sets(&models, &graph, &cfg.u_set, 200, &ReachOp::Exact { shrink: 0.0 }).unwrap();
        let terminals = synthesize_terminal(&models, &graph, &cfg).unwrap();
        (models, graph, cfg, family, terminals)
    }

    #[test]
    fn mpc_step_equilibrium_returns_us() {
        let (models, _graph, cfg, family, terminals) = scalar_problem();
        let target = steady_target((0.0, 0.0), &models[0], &cfg).unwrap();
        let ds = DwellState { sigma: 0, sigma_next: 0, delta: 0 };
        let x = target.x_s.clone();
        let (u0, cost, _) = mpc_step(
            &x, &ds, &target, &family, &models[0].s, &models, &cfg, &terminals,
        )
        .unwrap();
        assert!(u0.amax() < 1e-6);
        assert!(cost.abs() < 1e-8);
    }

    #[test]
    fn mpc_step_matches_grid_oracle() {
        let (models, _graph, cfg, family, terminals) = scalar_problem();
        let target = steady_target((0.0, 0.0), &models[0], &cfg).unwrap();
        let ds = DwellState { sigma: 0, sigma_next: 0, delta: 0 };
        let x = Vector::from_element(1, 0.7);
        let (u0, cost, _) = mpc_step(
            &x, &ds, &target, &family, &models[0].s, &models, &cfg, &terminals,
        )
        .unwrap();
        // N = 1: J(u) = y0^2 + u^2 + P (x + u)^2, x + u in [-1, 1]
        let p = terminals.gains[&0].1[(0, 0)];
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=1_000_000u32 {
            let u = -1.0 + 2.0 * i as f64 / 1_000_000.0;
            let xn = 0.7 + u;
            if !(-1.0..=1.0).contains(&xn) {
                continue;
            }
            let j = 0.7f64.powi(2) + u * u + p * xn * xn;
            if j < best.0 {
                best = (j, u);
            }
        }
        assert_abs_diff_eq!(u0[0], best.1, epsilon = 1e-3);
        assert_abs_diff_eq!(cost, best.0, epsilon = 1e-3);
    }

    #[test]
    fn mpc_step_infeasible_far_outside() {
        let models = vec![scalar_mode(0, 1.0, 1.0, interval(-1.0, 1.0))];
        let graph = ModeGraph::new(vec![0], vec![(0, 0)], BTreeMap::from([(0, 1)])).unwrap();
        let cfg = scalar_cfg(1, 1.0, 1.0, interval(-0.1, 0.1), interval(-1.0, 1.0));
        let family = switch_ci_sets(&models, &graph, &cfg.u_set, 200, &ReachOp::Exact { shrink: 0.0 }).unwrap();
        let terminals = synthesize_terminal(&models, &graph, &cfg).unwrap();
        let target = steady_target((0.0, 0.0), &models[0], &cfg).unwrap();
        let ds = DwellState { sigma: 0, sigma_next: 0, delta: 0 };
        let x = Vector::from_element(1, 5.0);
        let r = mpc_step(
            &x, &ds, &target, &family, &models[0].s, &models, &cfg, &terminals,
        );
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    fn dual_problem() -> (
        Vec<ModeModel>,
        ModeGraph,
        MpcConfig,
        SwitchCiFamily,
        TerminalIngredients,
    ) {
        let (model, cfg) = dual_integrator_mode(1.0);
        let models = vec![model];
        let graph = ModeGraph::new(vec![0], vec![(0, 0)], BTreeMap::from([(0, 1)])).unwrap();
        let family = switch_ci_sets(&models, &graph, &cfg.u_set, 200, &ReachOp::Exact { shrink: 0.0 }).unwrap();
        let terminals = synthesize_terminal(&models, &graph, &cfg).unwrap();
        (models, graph, cfg, family, terminals)
    }

    #[test]
    fn control_loop_zero_length_path() {
        let (models, graph, cfg, family, terminals) = dual_problem();
        let contour = vec![ContourSegment::line(0.0, 1.0, 0.0).unwrap()];
        let art = LoopArtifacts {
            models: &models,
            graph: &graph,
            family: &family,
            terminals: &terminals,
            cfg: &cfg,
            contour: &contour,
            settle_tol: 1e-4,
            settle_cap: 5000,
        };
        let x0 = Vector::from_row_slice(&[0.3, 0.0, 0.0, 0.0]);
        let ds0 = DwellState { sigma: 0, sigma_next: 0, delta: 0 };
        let a = models[0].a.clone();
        let b = models[0].b.clone();
        let mut recs = Vec::new();
        control_loop(
            &art,
            &[(0.3, 0.0)],
            x0,
            ds0,
            |x, u| &a * x + &b * u,
            |_, _, _| (0, 0),
            &mut recs,
        )
        .unwrap();
        assert_eq!(recs.len(), 1);
        assert_abs_diff_eq!(recs[0].eps, 0.0, epsilon = 1e-10);
        assert!(recs[0].u.amax() < 1e-6);
    }

    #[test]
    fn control_loop_regulates_and_costs_decrease() {
        let (models, graph, cfg, family, terminals) = dual_problem();
        let contour = vec![ContourSegment::line(0.0, 1.0, 0.0).unwrap()];
        let art = LoopArtifacts {
            models: &models,
            graph: &graph,
            family: &family,
            terminals: &terminals,
            cfg: &cfg,
            contour: &contour,
            settle_tol: 1e-4,
            settle_cap: 5000,
        };
        let x0 = Vector::from_row_slice(&[0.0, 0.0, 0.0, 0.0]);
        let ds0 = DwellState { sigma: 0, sigma_next: 0, delta: 0 };
        let a = models[0].a.clone();
        let b = models[0].b.clone();
        let c = models[0].c.clone();
        let refs = vec![(0.2, 0.0); 30];
        let mut recs = Vec::new();
        control_loop(
            &art,
            &refs,
            x0,
            ds0,
            |x, u| &a * x + &b * u,
            |_, _, _| (0, 0),
            &mut recs,
        )
        .unwrap();
        // settled near the target
        let last = recs.last().unwrap();
        assert!((last.y.0 - 0.2).abs() < 1e-4 && last.y.1.abs() < 1e-4);
        // Lyapunov decrease along the constant-reference segment
        let y_s = Vector::from_row_slice(&[0.2, 0.0]);
        for w in recs.windows(2) {
            let y = &c * &w[0].x;
            let e = &y - &y_s;
            let stage = (e.transpose() * &cfg.q * &e)[(0, 0)];
            assert!(
                w[1].cost - w[0].cost <= -stage + 1e-6,
                "k = {}: {} vs {}",
                w[0].k,
                w[1].cost - w[0].cost,
                -stage
            );
        }
    }
}
