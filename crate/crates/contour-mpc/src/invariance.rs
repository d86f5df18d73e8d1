//! Backward reachable sets and the switch control-invariant fixed point
//! over a mode-transition graph with dwell times.

use crate::numsolve::{find_feasible, solve_lp, LpProblem, SolveStatus};
use crate::polytope::Polytope;
use crate::tol::SET_SLACK;
use crate::{Error, Matrix, Result, Vector};
use rayon::prelude::*;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

/// One dynamic mode: discrete-time (A, B, C), the scheduling-variable
/// region that activates it, and its feasible state set S.
#[derive(Debug, Clone)]
pub struct ModeModel {
    pub mode_id: usize,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    /// Interval of the scheduling variable (x_m) where this mode is active.
    pub region: Polytope,
    /// State constraints intersected with the mode's contouring constraints.
    pub s: Polytope,
}

impl ModeModel {
    /// Validates dimensions and checks (A,B) stabilizable and (A,C)
    /// detectable by the PBH rank test. Detectability (rather than full
    /// observability) is the property the synthesis actually needs: the
    /// torsional states drop out of the output map at the mid-beam
    /// linearization point, but they are asymptotically stable there.
    pub fn new(
        mode_id: usize,
        a: Matrix,
        b: Matrix,
        c: Matrix,
        region: Polytope,
        s: Polytope,
    ) -> Result<Self> {
        let nx = a.nrows();
        if a.ncols() != nx {
            return Err(Error::DimensionMismatch("A must be square".into()));
        }
        if b.nrows() != nx {
            return Err(Error::DimensionMismatch("B row count must match A".into()));
        }
        if c.ncols() != nx {
            return Err(Error::DimensionMismatch("C column count must match A".into()));
        }
        if s.dim() != nx {
            return Err(Error::DimensionMismatch("S must live in state space".into()));
        }
        let eigs = a.clone().complex_eigenvalues();
        let rank_tol = 1e-8 * (1.0 + a.norm());
        for lam in eigs.iter() {
            if lam.norm() < 1.0 - 1e-9 {
                continue;
            }
            // stabilizability: rank [lam I - A | B] = n_x
            let nu = b.ncols();
            let mut m = Matrix::zeros(nx, nx + nu).map(|v| nalgebra::Complex::new(v, 0.0));
            for i in 0..nx {
                for j in 0..nx {
                    m[(i, j)] = nalgebra::Complex::new(-a[(i, j)], 0.0);
                }
                m[(i, i)] += *lam;
                for j in 0..nu {
                    m[(i, nx + j)] = nalgebra::Complex::new(b[(i, j)], 0.0);
                }
            }
            if m.rank(rank_tol) < nx {
                return Err(Error::ModeError {
                    mode: mode_id,
                    msg: format!("(A,B) not stabilizable: PBH fails at |lambda| = {}", lam.norm()),
                });
            }
            // detectability: rank [lam I - A ; C] = n_x
            let ny = c.nrows();
            let mut m = Matrix::zeros(nx + ny, nx).map(|v| nalgebra::Complex::new(v, 0.0));
            for i in 0..nx {
                for j in 0..nx {
                    m[(i, j)] = nalgebra::Complex::new(-a[(i, j)], 0.0);
                }
                m[(i, i)] += *lam;
            }
            for i in 0..ny {
                for j in 0..nx {
                    m[(nx + i, j)] = nalgebra::Complex::new(c[(i, j)], 0.0);
                }
            }
            if m.rank(rank_tol) < nx {
                return Err(Error::ModeError {
                    mode: mode_id,
                    msg: format!("(A,C) not detectable: PBH fails at |lambda| = {}", lam.norm()),
                });
            }
        }
        Ok(Self {
            mode_id,
            a,
            b,
            c,
            region,
            s,
        })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_inputs(&self) -> usize {
        self.b.ncols()
    }
}

/// Mode-transition graph G = (M, E) with per-mode minimum dwell times.
#[derive(Debug, Clone)]
pub struct ModeGraph {
    pub modes: Vec<usize>,
    pub edges: Vec<(usize, usize)>,
    pub dwell: BTreeMap<usize, usize>,
}

impl ModeGraph {
    pub fn new(
        modes: Vec<usize>,
        edges: Vec<(usize, usize)>,
        dwell: BTreeMap<usize, usize>,
    ) -> Result<Self> {
        let mode_set: BTreeSet<usize> = modes.iter().copied().collect();
        if mode_set.len() != modes.len() {
            return Err(Error::InvalidArgument("duplicate mode ids".into()));
        }
        for &(m, n) in &edges {
            if !mode_set.contains(&m) || !mode_set.contains(&n) {
                return Err(Error::InvalidArgument(format!(
                    "edge ({m}, {n}) references an unlisted mode"
                )));
            }
        }
        for &m in &modes {
            match dwell.get(&m) {
                Some(&d) if d >= 1 => {}
                Some(_) => {
                    return Err(Error::InvalidArgument(format!("dwell time of mode {m} must be >= 1")))
                }
                None => {
                    return Err(Error::InvalidArgument(format!("missing dwell time for mode {m}")))
                }
            }
        }
        Ok(Self { modes, edges, dwell })
    }

    pub fn dwell_of(&self, m: usize) -> usize {
        self.dwell[&m]
    }

    pub fn successors(&self, m: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .filter(move |&&(a, _)| a == m)
            .map(|&(_, n)| n)
    }

    pub fn has_edge(&self, m: usize, n: usize) -> bool {
        self.edges.contains(&(m, n))
    }
}

/// Converged output of Algorithm 1: one control-invariant set per mode.
#[derive(Debug, Clone)]
pub struct SwitchCiFamily {
    pub sets: BTreeMap<usize, Polytope>,
    pub iterations_used: usize,
    pub converged: bool,
}

impl SwitchCiFamily {
    pub fn get(&self, mode: usize) -> Result<&Polytope> {
        self.sets.get(&mode).ok_or_else(|| Error::ModeError {
            mode,
            msg: "mode missing from switch CI family".into(),
        })
    }

    /// Text form: "family k_modes iterations converged" then one
    /// "mode <id>" + polytope block per mode.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "family {} {} {}",
            self.sets.len(),
            self.iterations_used,
            if self.converged { 1 } else { 0 }
        );
        for (id, set) in &self.sets {
            let _ = writeln!(s, "mode {id}");
            s.push_str(&set.to_text());
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty family file".into()))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        if parts.len() != 4 || parts[0] != "family" {
            return Err(Error::Parse(format!("bad family header: {header}")));
        }
        let k: usize = parts[1].parse().map_err(|_| Error::Parse("bad mode count".into()))?;
        let iterations_used: usize =
            parts[2].parse().map_err(|_| Error::Parse("bad iteration count".into()))?;
        let converged = parts[3] == "1";
        let mut sets = BTreeMap::new();
        for _ in 0..k {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("truncated family file".into()))?;
            let id: usize = line
                .strip_prefix("mode ")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("bad mode header: {line}")))?;
            sets.insert(id, Polytope::from_lines(&mut lines)?);
        }
        Ok(Self {
            sets,
            iterations_used,
            converged,
        })
    }
}

/// One-step backward reachable set B_m(S, I) = {x in S : exists u in U
/// with A x + B u in I}, computed by lifting to (x, u) and projecting
/// back onto x.
pub fn backward_reachable(
    model: &ModeModel,
    s: &Polytope,
    i_set: &Polytope,
    u: &Polytope,
) -> Result<Polytope> {
    backward_reachable_within(model, s, i_set, u, 0.0)
}

/// [`backward_reachable`] with an inner-approximation margin: the
/// projection tightens intermediate rows by `shrink` per eliminated
/// input coordinate (see [`Polytope::project_within`]). The result is a
/// subset of the exact backward reachable set, which is the sound
/// direction for invariance synthesis and certification.
pub fn backward_reachable_within(
    model: &ModeModel,
    s: &Polytope,
    i_set: &Polytope,
    u: &Polytope,
    shrink: f64,
) -> Result<Polytope> {
    let nx = model.n_states();
    let nu = model.n_inputs();
    if s.dim() != nx || i_set.dim() != nx {
        return Err(Error::DimensionMismatch("S and I must live in state space".into()));
    }
    if u.dim() != nu {
        return Err(Error::DimensionMismatch("U must live in input space".into()));
    }
    if i_set.is_empty()? {
        return Ok(Polytope::empty(nx));
    }
    let (a_s, b_s) = s.rows();
    let (a_u, b_u) = u.rows();
    let (a_i, b_i) = i_set.rows();
    let (rs, ru, ri) = (a_s.nrows(), a_u.nrows(), a_i.nrows());
    let mut g = Matrix::zeros(rs + ru + ri, nx + nu);
    let mut h = Vector::zeros(rs + ru + ri);
    g.view_mut((0, 0), (rs, nx)).copy_from(a_s);
    h.rows_mut(0, rs).copy_from(b_s);
    g.view_mut((rs, nx), (ru, nu)).copy_from(a_u);
    h.rows_mut(rs, ru).copy_from(b_u);
    g.view_mut((rs + ru, 0), (ri, nx)).copy_from(&(a_i * &model.a));
    g.view_mut((rs + ru, nx), (ri, nu)).copy_from(&(a_i * &model.b));
    h.rows_mut(rs + ru, ri).copy_from(b_i);
    let lifted = Polytope::new(g, h)?;
    let keep: Vec<usize> = (0..nx).collect();
    lifted.project_within(&keep, shrink)
}

/// i-step backward reachable set B_m^i(S, I); i = 0 returns I. Stops
/// early once an iterate is a fixed point of the one-step map, since all
/// later iterates are then identical. `shrink` is the per-elimination
/// inner margin passed to every one-step computation.
pub fn backward_reachable_k(
    model: &ModeModel,
    s: &Polytope,
    i_set: &Polytope,
    u: &Polytope,
    i: usize,
    shrink: f64,
) -> Result<Polytope> {
    let mut cur = i_set.clone();
    for step in 0..i {
        let next = backward_reachable_within(model, s, &cur, u, shrink)?;
        // The pipeline is deterministic, so at a fixed point the
        // H-representations coincide row for row — check that first and
        // fall back to the LP-based semantic test only occasionally.
        if rows_identical(&next, &cur) || (step % 8 == 7 && next.set_eq(&cur)?) {
            return Ok(next);
        }
        cur = next;
    }
    Ok(cur)
}

/// Exact row-for-row identity of two H-representations (sufficient, not
/// necessary, for set equality).
fn rows_identical(a: &Polytope, b: &Polytope) -> bool {
    if a.num_rows() != b.num_rows() || a.dim() != b.dim() {
        return false;
    }
    let (aa, ab) = a.rows();
    let (ba, bb) = b.rows();
    let tol = 1e-12;
    (0..a.num_rows()).all(|i| {
        (ab[i] - bb[i]).abs() <= tol
            && (0..a.dim()).all(|j| (aa[(i, j)] - ba[(i, j)]).abs() <= tol)
    })
}

/// Backward-reachability operator used by Algorithm 1 and by family
/// certification.
///
/// `Exact` is the Fourier-Motzkin projection of the (x, u) lifting —
/// the full "there exists an input" semantics — with an optional inner
/// margin. It is precise but its intermediate representations grow
/// quickly over long dwell chains.
///
/// `Feedback` fixes an affine control policy u = u_eq + K(x - x_eq),
/// with (x_eq, u_eq) a constrained equilibrium chosen inside the target
/// set, and intersects the closed-loop preimages directly: no
/// projection at all, and a d-step chain unrolls into rows along powers
/// of the closed-loop map, which decay geometrically. The result is a
/// subset of the exact backward reachable set, which is the sound
/// direction both for synthesis and certification.
/// Per-mode data for the `Feedback` operator: the stabilizing gain and
/// an optional dynamically consistent reference trajectory
/// (x_ref[j + 1] = A x_ref[j] + B u_ff[j]) covering the mode's dwell
/// window. With a reference, the policy is the time-varying affine law
/// u_j = u_ff[j] + K (x_j - x_ref[j]); without one (or for horizons the
/// reference does not cover) the policy is anchored at a constrained
/// equilibrium chosen inside the target set.
#[derive(Debug, Clone)]
pub struct ModePolicy {
    pub k: Matrix,
    pub x_ref: Vec<Vector>,
    pub u_ff: Vec<Vector>,
}

impl ModePolicy {
    pub fn gain_only(k: Matrix) -> Self {
        Self { k, x_ref: Vec::new(), u_ff: Vec::new() }
    }
}

#[derive(Debug, Clone)]
pub enum ReachOp {
    Exact { shrink: f64 },
    Feedback { policies: BTreeMap<usize, ModePolicy> },
}

impl ReachOp {
    /// d-step backward reachable set of `i_set` through `model` under
    /// this operator. `entry` is an optional hint for the `Feedback`
    /// form: the region the trajectories of interest start from (the
    /// predecessor's feasible set, for a dwell term). The policy's
    /// anchor equilibrium is then chosen inside `i_set ∩ entry` when
    /// one exists there, so the closed loop parks just inside the
    /// handoff instead of transiting the whole set. The hint does not
    /// affect soundness — any fixed policy yields an inner
    /// approximation — and `Exact` ignores it.
    pub fn reach(
        &self,
        model: &ModeModel,
        s: &Polytope,
        i_set: &Polytope,
        u: &Polytope,
        steps: usize,
        entry: Option<&Polytope>,
    ) -> Result<Polytope> {
        match self {
            ReachOp::Exact { shrink } => {
                backward_reachable_k(model, s, i_set, u, steps, *shrink)
            }
            ReachOp::Feedback { policies } => {
                let pol = policies.get(&model.mode_id).ok_or_else(|| Error::ModeError {
                    mode: model.mode_id,
                    msg: "no feedback policy for mode".into(),
                })?;
                feedback_reach(model, s, i_set, u, pol, steps, entry)
            }
        }
    }
}

/// Constrained equilibrium (x_eq, u_eq) with A x_eq + B u_eq = x_eq,
/// x_eq in `i_set`, u_eq in `u`, maximizing the uniform depth inside
/// both sets. Returns `None` if no equilibrium exists in the target.
fn equilibrium_in(
    model: &ModeModel,
    i_set: &Polytope,
    u: &Polytope,
) -> Result<Option<(Vector, Vector)>> {
    let nx = model.n_states();
    let nu = model.n_inputs();
    let (a_i, b_i) = i_set.rows();
    let (a_u, b_u) = u.rows();
    let (mi, mu) = (a_i.nrows(), a_u.nrows());
    // variables (x_eq, u_eq, r); maximize r
    let nz = nx + nu + 1;
    let mut g = Matrix::zeros(mi + mu, nz);
    let mut h = Vector::zeros(mi + mu);
    g.view_mut((0, 0), (mi, nx)).copy_from(a_i);
    h.rows_mut(0, mi).copy_from(b_i);
    g.view_mut((mi, nx), (mu, nu)).copy_from(a_u);
    h.rows_mut(mi, mu).copy_from(b_u);
    for r in 0..mi + mu {
        g[(r, nx + nu)] = 1.0;
    }
    let mut e_mat = Matrix::zeros(nx, nz);
    e_mat
        .view_mut((0, 0), (nx, nx))
        .copy_from(&(&model.a - Matrix::identity(nx, nx)));
    e_mat.view_mut((0, nx), (nx, nu)).copy_from(&model.b);
    // Row-normalize the equalities: (A - I, B) rows scale with the sample
    // period and starve the simplex phase 1 of usable pivots otherwise.
    for r in 0..nx {
        let nrm = e_mat.row(r).norm();
        if nrm > 0.0 {
            for j in 0..nz {
                e_mat[(r, j)] /= nrm;
            }
        }
    }
    let mut c = Vector::zeros(nz);
    c[nx + nu] = -1.0;
    let lp = LpProblem::new(c, g, h).with_equalities(e_mat, Vector::zeros(nx));
    match solve_lp(&lp)? {
        SolveStatus::Optimal { z, .. } => {
            if z[nx + nu] < 0.0 {
                return Ok(None); // equilibrium only outside the sets
            }
            Ok(Some((
                Vector::from(z.rows(0, nx)),
                Vector::from(z.rows(nx, nu)),
            )))
        }
        SolveStatus::Infeasible => Ok(None),
        SolveStatus::Unbounded => Err(Error::Unbounded("equilibrium depth LP".into())),
        SolveStatus::NumericalFailure => Err(Error::NumericalFailure(
            "equilibrium depth LP failed".into(),
        )),
    }
}

/// d-step backward reachable set under an affine policy
/// u_j = ubar_j + K (x_j - xbar_j) along a dynamically consistent
/// pair sequence (xbar_j, ubar_j): the intersection of S- and
/// U-preimages of the deviation dynamics e_{j+1} = (A + B K) e_j,
/// ending in the target. Rows are pre-pruned against a bounding box of
/// S (the j = 0 block keeps all of S, so any row implied on the box is
/// redundant), which discards the geometrically decayed tail cheaply;
/// an LP sweep reduces the rest.
///
/// The pair sequence is the policy's reference when `pol` carries one
/// long enough for the horizon, and a constrained equilibrium inside
/// the target otherwise (preferring one inside `entry` when given, so
/// the closed loop parks just inside the handoff instead of transiting
/// the whole set).
fn feedback_reach(
    model: &ModeModel,
    s: &Polytope,
    i_set: &Polytope,
    u: &Polytope,
    pol: &ModePolicy,
    steps: usize,
    entry: Option<&Polytope>,
) -> Result<Polytope> {
    let nx = model.n_states();
    if steps == 0 {
        return i_set.remove_redundant();
    }
    if i_set.is_empty()? {
        return Ok(Polytope::empty(nx));
    }
    let k_gain = &pol.k;
    let use_ref = steps >= 2 && pol.u_ff.len() >= steps && pol.x_ref.len() > steps;
    let (xbar, ubar): (Vec<Vector>, Vec<Vector>) = if use_ref {
        (
            pol.x_ref[..=steps].to_vec(),
            pol.u_ff[..steps].to_vec(),
        )
    } else {
        // Anchor near the entry region when possible, in the target at
        // large otherwise.
        let mut eq = match entry {
            Some(e) => equilibrium_in(model, &i_set.intersect(e)?, u)?,
            None => None,
        };
        if eq.is_none() {
            eq = equilibrium_in(model, i_set, u)?;
        }
        let (x_eq, u_eq) = match eq {
            Some(eq) => eq,
            None => return Ok(Polytope::empty(nx)),
        };
        (vec![x_eq; steps + 1], vec![u_eq; steps])
    };
    let acl = &model.a + &model.b * k_gain;
    let (a_s, b_s) = s.rows();
    let (a_u, b_u) = u.rows();
    let (a_i, b_i) = i_set.rows();
    let (lo, hi) = s.bounding_box()?;
    // sup of a'x over the box; rows implied there are dropped on sight.
    let sup_box = |row: &Vector| -> f64 {
        (0..nx)
            .map(|j| if row[j] >= 0.0 { row[j] * hi[j] } else { row[j] * lo[j] })
            .sum()
    };
    let mut rows: Vec<f64> = Vec::new();
    let mut offs: Vec<f64> = Vec::new();
    let mut push_block = |a_blk: &Matrix, h_blk: &Vector, keep_all: bool| {
        for r in 0..a_blk.nrows() {
            let row: Vector = a_blk.row(r).transpose();
            if !keep_all && sup_box(&row) <= h_blk[r] {
                continue;
            }
            rows.extend(row.iter());
            offs.push(h_blk[r]);
        }
    };
    // phi = Acl^j; x_j = xbar_j + phi (x - xbar_0),
    // u_j = ubar_j + K phi (x - xbar_0)
    let x0 = &xbar[0];
    let mut phi = Matrix::identity(nx, nx);
    for j in 0..steps {
        let g_s = a_s * &phi;
        let h_s = b_s + &g_s * x0 - a_s * &xbar[j];
        push_block(&g_s, &h_s, j == 0);
        let g_u = a_u * k_gain * &phi;
        let h_u = b_u + &g_u * x0 - a_u * &ubar[j];
        push_block(&g_u, &h_u, false);
        phi = &acl * phi;
    }
    let g_i = a_i * &phi;
    let h_i = b_i + &g_i * x0 - a_i * &xbar[steps];
    push_block(&g_i, &h_i, false);
    let m = offs.len();
    let raw = Polytope::new(
        Matrix::from_row_slice(m, nx, &rows),
        Vector::from_vec(offs),
    )?;
    raw.remove_redundant()
}

fn model_by_id(models: &[ModeModel], id: usize) -> Result<&ModeModel> {
    models
        .iter()
        .find(|m| m.mode_id == id)
        .ok_or_else(|| Error::ModeError {
            mode: id,
            msg: "no model for mode listed in the graph".into(),
        })
}

/// Algorithm 1: iterate I_m <- I_m ∩ B_m(S_m, I_m) ∩_{(m,n) in E}
/// B_n^{d_n}(S_n, I_n) from I_m = S_m until semantic fixpoint.
pub fn switch_ci_sets(
    models: &[ModeModel],
    graph: &ModeGraph,
    u: &Polytope,
    max_iter: usize,
    op: &ReachOp,
) -> Result<SwitchCiFamily> {
    let mut iterates: BTreeMap<usize, Polytope> = BTreeMap::new();
    for &m in &graph.modes {
        let model = model_by_id(models, m)?;
        if model.s.is_empty()? {
            return Err(Error::ModeError {
                mode: m,
                msg: "feasible set S is empty".into(),
            });
        }
        iterates.insert(m, model.s.remove_redundant()?);
    }

    // Modes whose iterate changed in the previous sweep. A mode's update
    // only depends on its own iterate and its successors' edge terms, so
    // anything outside this frontier is already at its local fixpoint and
    // can be skipped, and cached edge terms stay valid until their target
    // changes.
    let mut changed: BTreeSet<usize> = graph.modes.iter().copied().collect();
    let mut edge_cache: BTreeMap<(usize, usize), Polytope> = BTreeMap::new();
    for iter in 1..=max_iter {
        // The dwell-horizon BRS of edge (m, n) depends on the target's
        // previous iterate (plus the static S_m entry hint); recompute
        // only where the target changed.
        let stale: Vec<(usize, usize)> = graph
            .edges
            .iter()
            .copied()
            .filter(|e| changed.contains(&e.1) || !edge_cache.contains_key(e))
            .collect();
        let progress = std::env::var_os("CONTOUR_MPC_PROGRESS").is_some();
        let fresh: BTreeMap<(usize, usize), Polytope> = stale
            .into_par_iter()
            .map(|(m, n)| {
                let model = model_by_id(models, n)?;
                let entry = &model_by_id(models, m)?.s;
                let t0 = std::time::Instant::now();
                let term = op.reach(
                    model,
                    &model.s,
                    &iterates[&n],
                    u,
                    graph.dwell_of(n),
                    Some(entry),
                )?;
                if progress {
                    eprintln!(
                        "switch_ci_sets: iter {iter} edge term for ({m}, {n}) \
                         (dwell {}) -> {} rows in {:.1?}",
                        graph.dwell_of(n),
                        term.num_rows(),
                        t0.elapsed()
                    );
                }
                Ok(((m, n), term))
            })
            .collect::<Result<_>>()?;
        edge_cache.extend(fresh);
        let edge_terms = &edge_cache;

        let active: Vec<usize> = graph
            .modes
            .iter()
            .copied()
            .filter(|&m| {
                changed.contains(&m) || graph.successors(m).any(|n| changed.contains(&n))
            })
            .collect();
        let updated: BTreeMap<usize, (Polytope, bool)> = active
            .par_iter()
            .map(|&m| {
                let model = model_by_id(models, m)?;
                let prev = &iterates[&m];
                // Apply the edge terms first: they pin the iterate to the
                // handoff regions, and the one-step term afterwards can
                // then anchor its policy inside that remainder instead of
                // at the deep point of the whole previous iterate (which
                // for long modes sits far from every handoff).
                let mut cur = prev.clone();
                for n in graph.successors(m) {
                    cur = cur.intersect(&edge_terms[&(m, n)])?;
                    if cur.is_empty()? {
                        return Err(Error::ModeError {
                            mode: m,
                            msg: format!(
                                "no switch CI family exists under given dwell times: \
                                 iterate emptied by the edge ({m}, {n}) dwell term at iteration {iter}"
                            ),
                        });
                    }
                }
                let cur = cur.remove_redundant()?;
                let brs = op.reach(model, &model.s, &cur, u, 1, None)?;
                let cur = cur.intersect(&brs)?;
                if cur.is_empty()? {
                    return Err(Error::ModeError {
                        mode: m,
                        msg: format!(
                            "no switch CI family exists under given dwell times: \
                             iterate emptied by the one-step invariance term at iteration {iter}"
                        ),
                    });
                }
                // cur <= prev holds by construction: the intersection
                // keeps every row of prev.
                let cur = cur.remove_redundant()?;
                let same = cur.set_eq(prev)?;
                Ok((m, (cur, same)))
            })
            .collect::<Result<_>>()?;

        changed.clear();
        for (m, (cur, same)) in updated {
            if !same {
                changed.insert(m);
            }
            iterates.insert(m, cur);
        }
        if std::env::var_os("CONTOUR_MPC_PROGRESS").is_some() {
            eprintln!(
                "switch_ci_sets: iteration {iter}, {} modes still changing",
                changed.len()
            );
        }
        if changed.is_empty() {
            return Ok(SwitchCiFamily {
                sets: iterates,
                iterations_used: iter,
                converged: true,
            });
        }
    }
    Err(Error::NumericalFailure(format!(
        "Algorithm 1 did not converge within {max_iter} iterations"
    )))
}

/// A single Definition 3 violation found by [`verify_family`].
#[derive(Debug, Clone)]
pub enum Violation {
    EmptySet { mode: usize },
    NotInFeasibleSet { mode: usize, witness: Vector },
    Invariance { mode: usize, witness: Vector },
    EdgeInclusion { from: usize, to: usize, witness: Vector },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::EmptySet { mode } => write!(f, "C_{mode} is empty"),
            Violation::NotInFeasibleSet { mode, witness } => {
                write!(f, "C_{mode} not contained in S_{mode}; witness {witness:?}")
            }
            Violation::Invariance { mode, witness } => {
                write!(f, "C_{mode} not control invariant; witness {witness:?}")
            }
            Violation::EdgeInclusion { from, to, witness } => write!(
                f,
                "C_{from} not contained in B_{to}^d(S_{to}, C_{to}); witness {witness:?}"
            ),
        }
    }
}

/// Certification report for a switch CI family.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub violations: Vec<Violation>,
    pub invariance_samples_per_mode: usize,
    pub edges_checked: usize,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Point of `inner` that violates a facet of `outer`, if any: maximizes
/// each facet row of `outer` over `inner` and returns the first argmax
/// exceeding the offset.
fn containment_witness(outer: &Polytope, inner: &Polytope) -> Result<Option<Vector>> {
    let (a_out, b_out) = outer.rows();
    let (a_in, b_in) = inner.rows();
    for r in 0..a_out.nrows() {
        let c: Vector = -a_out.row(r).transpose();
        let lp = LpProblem::new(c, a_in.clone(), b_in.clone());
        match solve_lp(&lp)? {
            SolveStatus::Optimal { z, objective, .. } => {
                if -objective > b_out[r] + SET_SLACK {
                    return Ok(Some(z));
                }
            }
            SolveStatus::Unbounded => {
                // unbounded in a violating direction: take a far point
                // along the recession ray is overkill; report the
                // Chebyshev center as the witness anchor
                let (center, _) = inner.chebyshev_center()?;
                return Ok(Some(center));
            }
            SolveStatus::Infeasible => return Ok(None), // inner empty
            SolveStatus::NumericalFailure => {
                return Err(Error::NumericalFailure(
                    "containment witness LP failed".into(),
                ))
            }
        }
    }
    Ok(None)
}

/// Post-hoc certification of Definition 3: exact containment C_m ⊆ S_m,
/// exact one-step invariance C_m ⊆ B_m(S_m, C_m), exact edge inclusions
/// C_m ⊆ B_n^{d_n}(S_n, C_n), plus `n_samples` per-mode sampled
/// one-step controllability feasibility checks.
pub fn verify_family(
    family: &SwitchCiFamily,
    models: &[ModeModel],
    graph: &ModeGraph,
    u: &Polytope,
    n_samples: usize,
    seed: u64,
    op: &ReachOp,
) -> Result<VerifyReport> {
    let mut violations = Vec::new();
    let mut edges_checked = 0;
    let (a_u, b_u) = u.rows();
    for &m in &graph.modes {
        let c_m = family.get(m)?;
        let model = model_by_id(models, m)?;
        if c_m.is_empty()? {
            violations.push(Violation::EmptySet { mode: m });
            continue;
        }
        if let Some(w) = containment_witness(&model.s, c_m)? {
            violations.push(Violation::NotInFeasibleSet { mode: m, witness: w });
        }
        let brs = op.reach(model, &model.s, c_m, u, 1, None)?;
        if let Some(w) = containment_witness(&brs, c_m)? {
            violations.push(Violation::Invariance { mode: m, witness: w });
        }
        if n_samples > 0 {
            let (a_c, b_c) = c_m.rows();
            let nu = model.n_inputs();
            for x in c_m.sample_uniform(n_samples, seed ^ (m as u64).wrapping_mul(0x9e3779b9))? {
                // find u in U with A x + B u in C_m
                let ru = a_u.nrows();
                let rc = a_c.nrows();
                let mut g = Matrix::zeros(ru + rc, nu);
                let mut h = Vector::zeros(ru + rc);
                g.view_mut((0, 0), (ru, nu)).copy_from(a_u);
                h.rows_mut(0, ru).copy_from(b_u);
                g.view_mut((ru, 0), (rc, nu)).copy_from(&(a_c * &model.b));
                h.rows_mut(ru, rc).copy_from(&(b_c - a_c * &model.a * &x));
                if find_feasible(&g, &h, &Matrix::zeros(0, nu), &Vector::zeros(0))?.is_none() {
                    violations.push(Violation::Invariance { mode: m, witness: x });
                }
            }
        }
    }
    for &(m, n) in &graph.edges {
        let c_m = family.get(m)?;
        let c_n = family.get(n)?;
        let model_n = model_by_id(models, n)?;
        let model_m = model_by_id(models, m)?;
        let reach = op.reach(
            model_n,
            &model_n.s,
            c_n,
            u,
            graph.dwell_of(n),
            Some(&model_m.s),
        )?;
        if let Some(w) = containment_witness(&reach, c_m)? {
            violations.push(Violation::EdgeInclusion { from: m, to: n, witness: w });
        }
        edges_checked += 1;
    }
    Ok(VerifyReport {
        violations,
        invariance_samples_per_mode: n_samples,
        edges_checked,
    })
}
