//! Desk-scale dual-drive gantry stand-in: a 5-mode switched linear
//! plant, the line-circle-line reference generator under velocity and
//! acceleration limits, composite-mode assembly, and the closed-loop
//! experiment.

use crate::contour::{
    circular_feasible_sectors, polygon_side_counts_with_slack, AnnulusApprox, Arc,
    ContourSegment, Line, Tolerance,
};
use crate::invariance::{switch_ci_sets, ModeGraph, ModeModel, ModePolicy, ReachOp, SwitchCiFamily};
use crate::numsolve::dlqr;
use crate::mpc::{
    control_loop, synthesize_terminal, DwellState, LoopArtifacts, MpcConfig, StepRecord,
    TerminalIngredients,
};
use crate::polytope::Polytope;
use crate::tol::SET_SLACK;
use crate::{Error, Matrix, Result, Vector};
use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

/// Physical and discretization parameters of the synthetic gantry.
/// State: (x_m, dx_m, y_N, dy_N, theta, dtheta); inputs: three drive
/// currents (end-effector axis, common Y, differential).
#[derive(Debug, Clone)]
pub struct GantryParams {
    pub t_s: f64,
    pub travel: (f64, f64),
    pub boundaries: [f64; 4],
    pub lin_points: [f64; 5],
    /// Per-mode torsional natural frequency (rad/s).
    pub omega: [f64; 5],
    pub zeta: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub u_max: f64,
    // state-box limits used to build X
    pub v_max_state: f64,
    pub y_max_state: f64,
    pub theta_max: f64,
    pub theta_dot_max: f64,
}

impl Default for GantryParams {
    fn default() -> Self {
        Self {
            t_s: 1.0 / 500.0,
            travel: (-0.125, 0.125),
            boundaries: [-0.075, -0.025, 0.025, 0.075],
            lin_points: [-0.1, -0.05, 0.0, 0.05, 0.1],
            omega: [
                TAU * 12.0,
                TAU * 15.0,
                TAU * 18.0,
                TAU * 15.0,
                TAU * 12.0,
            ],
            zeta: 0.05,
            k1: 5.0,
            k2: 2.5,
            k3: 40.0,
            u_max: 5.0,
            v_max_state: 0.3,
            y_max_state: 0.1,
            theta_max: 0.01,
            theta_dot_max: 1.0,
        }
    }
}

impl GantryParams {
    pub fn validate(&self) -> Result<()> {
        if self.t_s <= 0.0 {
            return Err(Error::InvalidArgument("sample period must be positive".into()));
        }
        if !(0.0 < self.zeta && self.zeta < 1.0) {
            return Err(Error::InvalidArgument("damping ratio must be in (0, 1)".into()));
        }
        if self.omega.iter().any(|&w| w <= 0.0) {
            return Err(Error::InvalidArgument("stiffness must be positive".into()));
        }
        let mut prev = self.travel.0;
        for &b in &self.boundaries {
            if b <= prev {
                return Err(Error::InvalidArgument(
                    "region boundaries must increase within the travel".into(),
                ));
            }
            prev = b;
        }
        if self.travel.1 <= prev {
            return Err(Error::InvalidArgument("travel end below last boundary".into()));
        }
        Ok(())
    }

    /// Region index (0..5) of a beam position. Regions are half-open
    /// [lo, hi) except the last, which closes the travel.
    pub fn region_of(&self, x_m: f64) -> usize {
        self.boundaries.iter().filter(|&&b| x_m >= b).count()
    }

    /// Interval of region `j` as a 1-D polytope.
    pub fn region_interval(&self, j: usize) -> Polytope {
        let lo = if j == 0 { self.travel.0 } else { self.boundaries[j - 1] };
        let hi = if j == 4 { self.travel.1 } else { self.boundaries[j] };
        Polytope::from_box(&[lo], &[hi]).expect("region interval")
    }

    /// Global state constraint box X.
    pub fn state_box(&self) -> Polytope {
        Polytope::from_box(
            &[
                self.travel.0,
                -self.v_max_state,
                -self.y_max_state,
                -self.v_max_state,
                -self.theta_max,
                -self.theta_dot_max,
            ],
            &[
                self.travel.1,
                self.v_max_state,
                self.y_max_state,
                self.v_max_state,
                self.theta_max,
                self.theta_dot_max,
            ],
        )
        .expect("state box")
    }

    /// Input current box U.
    pub fn input_box(&self) -> Polytope {
        Polytope::from_box(
            &[-self.u_max, -self.u_max, -self.u_max],
            &[self.u_max, self.u_max, self.u_max],
        )
        .expect("input box")
    }

    /// Output map of region `j`: x_e = x_m, y_e = y_N + xbar_j * theta.
    pub fn output_map(&self, j: usize) -> Matrix {
        Matrix::from_row_slice(
            2,
            6,
            &[
                1.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 1.0, 0.0, self.lin_points[j], 0.0,
            ],
        )
    }
}

/// Dense matrix exponential by scaling and squaring with a Taylor tail.
fn expm(m: &Matrix) -> Matrix {
    let n = m.nrows();
    let norm = m.amax() * n as f64;
    let s = if norm > 0.25 { (norm / 0.25).log2().ceil() as i32 } else { 0 };
    let a = m / 2f64.powi(s);
    let mut term = Matrix::identity(n, n);
    let mut sum = Matrix::identity(n, n);
    for k in 1..=25 {
        term = &term * &a / k as f64;
        sum += &term;
        if term.amax() < 1e-20 {
            break;
        }
    }
    let mut r = sum;
    for _ in 0..s {
        r = &r * &r;
    }
    r
}

/// Zero-order-hold discretization of (A_c, B_c) at sample period t_s.
fn zoh(a_c: &Matrix, b_c: &Matrix, t_s: f64) -> (Matrix, Matrix) {
    let n = a_c.nrows();
    let m = b_c.ncols();
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(a_c);
    aug.view_mut((0, n), (n, m)).copy_from(b_c);
    let e = expm(&(aug * t_s));
    (
        Matrix::from(e.view((0, 0), (n, n))),
        Matrix::from(e.view((0, n), (n, m))),
    )
}

/// Five per-region discretized models. The attached feasible set is the
/// plain state box; contouring constraints are added later per
/// composite mode.
pub fn build_plant(p: &GantryParams) -> Result<Vec<ModeModel>> {
    p.validate()?;
    let x_box = p.state_box();
    let mut models = Vec::with_capacity(5);
    for j in 0..5 {
        let w = p.omega[j];
        let a_c = Matrix::from_row_slice(
            6,
            6,
            &[
                0.0, 1.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 1.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, 0.0, 0.0, //
                0.0, 0.0, 0.0, 0.0, 0.0, 1.0, //
                0.0, 0.0, 0.0, 0.0, -w * w, -2.0 * p.zeta * w,
            ],
        );
        let b_c = Matrix::from_row_slice(
            6,
            3,
            &[
                0.0, 0.0, 0.0, //
                p.k1, 0.0, 0.0, //
                0.0, 0.0, 0.0, //
                0.0, p.k2, p.k2, //
                0.0, 0.0, 0.0, //
                0.0, -p.k3, p.k3,
            ],
        );
        let (a_d, b_d) = zoh(&a_c, &b_c, p.t_s);
        models.push(ModeModel::new(
            j,
            a_d,
            b_d,
            p.output_map(j),
            p.region_interval(j),
            x_box.clone(),
        )?);
    }
    Ok(models)
}

/// Geometric path description with explicit endpoints (the implicit
/// [`ContourSegment`] form drops the traversal information the
/// reference generator needs).
#[derive(Debug, Clone, Copy)]
pub enum PathSegment {
    Line { from: (f64, f64), to: (f64, f64) },
    /// Counterclockwise for end_angle > start_angle.
    Arc { center: (f64, f64), r: f64, start_angle: f64, end_angle: f64 },
}

impl PathSegment {
    pub fn start(&self) -> (f64, f64) {
        match self {
            PathSegment::Line { from, .. } => *from,
            PathSegment::Arc { center, r, start_angle, .. } => {
                (center.0 + r * start_angle.cos(), center.1 + r * start_angle.sin())
            }
        }
    }

    pub fn end(&self) -> (f64, f64) {
        match self {
            PathSegment::Line { to, .. } => *to,
            PathSegment::Arc { center, r, end_angle, .. } => {
                (center.0 + r * end_angle.cos(), center.1 + r * end_angle.sin())
            }
        }
    }

    pub fn length(&self) -> f64 {
        match self {
            PathSegment::Line { from, to } => {
                ((to.0 - from.0).powi(2) + (to.1 - from.1).powi(2)).sqrt()
            }
            PathSegment::Arc { r, start_angle, end_angle, .. } => {
                r * (end_angle - start_angle).abs()
            }
        }
    }

    pub fn point_at(&self, s: f64) -> (f64, f64) {
        match self {
            PathSegment::Line { from, to } => {
                let l = self.length();
                let t = if l > 0.0 { s / l } else { 0.0 };
                (from.0 + t * (to.0 - from.0), from.1 + t * (to.1 - from.1))
            }
            PathSegment::Arc { center, r, start_angle, end_angle } => {
                let dir = if end_angle >= start_angle { 1.0 } else { -1.0 };
                let ang = start_angle + dir * s / r;
                (center.0 + r * ang.cos(), center.1 + r * ang.sin())
            }
        }
    }

    pub fn to_contour_segment(&self) -> Result<ContourSegment> {
        match self {
            PathSegment::Line { from, to } => {
                // implicit line through the two points
                let (dx, dy) = (to.0 - from.0, to.1 - from.1);
                ContourSegment::line(-dy, dx, dy * from.0 - dx * from.1)
            }
            PathSegment::Arc { center, r, start_angle, end_angle } => {
                let (lo, hi) = if end_angle >= start_angle {
                    (*start_angle, *end_angle)
                } else {
                    (*end_angle, *start_angle)
                };
                ContourSegment::arc(center.0, center.1, *r, lo, hi)
            }
        }
    }
}

/// One reference sample.
#[derive(Debug, Clone, Copy)]
pub struct RefSample {
    pub k: usize,
    pub pos: (f64, f64),
    pub segment: usize,
}

/// One composite mode: a dynamics region paired with a contour piece
/// (for arcs additionally an inner-edge index), plus its sample window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompositeMode {
    pub id: usize,
    pub region: usize,
    pub segment: usize,
    pub lens: Option<usize>,
    pub start_k: usize,
    pub end_k: usize,
}

/// Time-indexed reference with segment bookkeeping and (after
/// [`ReferencePlan::assign_modes`]) the composite-mode chain with dwell
/// bounds.
#[derive(Debug, Clone)]
pub struct ReferencePlan {
    pub samples: Vec<RefSample>,
    pub segments: Vec<ContourSegment>,
    pub dwell_bounds: BTreeMap<usize, usize>,
    pub mode_sequence: Vec<CompositeMode>,
    pub t_s: f64,
}

/// Rest-to-rest trapezoidal (or triangular) profile duration.
fn profile_duration(l: f64, v_max: f64, a_max: f64) -> f64 {
    if l <= v_max * v_max / a_max {
        2.0 * (l / a_max).sqrt()
    } else {
        l / v_max + v_max / a_max
    }
}

/// Arc length traveled at time t under the rest-to-rest profile.
fn profile_position(t: f64, l: f64, v_max: f64, a_max: f64) -> f64 {
    let (v_p, t_a) = if l <= v_max * v_max / a_max {
        let vp = (l * a_max).sqrt();
        (vp, vp / a_max)
    } else {
        (v_max, v_max / a_max)
    };
    let t_total = profile_duration(l, v_max, a_max);
    let t = t.clamp(0.0, t_total);
    if t <= t_a {
        0.5 * a_max * t * t
    } else if t <= t_total - t_a {
        0.5 * a_max * t_a * t_a + v_p * (t - t_a)
    } else {
        let td = t_total - t;
        l - 0.5 * a_max * td * td
    }
}

/// Samples the path under per-segment rest-to-rest speed profiles
/// (segments join at rest, respecting tangent discontinuities).
pub fn generate_reference(
    path: &[PathSegment],
    v_max: f64,
    a_max: f64,
    t_s: f64,
) -> Result<ReferencePlan> {
    if path.is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    if v_max <= 0.0 || a_max <= 0.0 {
        return Err(Error::InvalidArgument("speed limits must be positive".into()));
    }
    for w in path.windows(2) {
        let e = w[0].end();
        let s = w[1].start();
        if ((e.0 - s.0).powi(2) + (e.1 - s.1).powi(2)).sqrt() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "disconnected path: segment ends at ({}, {}) but next starts at ({}, {})",
                e.0, e.1, s.0, s.1
            )));
        }
    }
    let durations: Vec<f64> = path
        .iter()
        .map(|seg| profile_duration(seg.length(), v_max, a_max))
        .collect();
    let total: f64 = durations.iter().sum();
    let n_samples = (total / t_s).ceil() as usize;
    let mut samples = Vec::with_capacity(n_samples);
    let mut segments = Vec::with_capacity(path.len());
    let mut windows = vec![(usize::MAX, 0usize); path.len()];
    for k in 1..=n_samples {
        let mut t = (k as f64 * t_s).min(total);
        let mut si = 0;
        while si + 1 < path.len() && t > durations[si] {
            t -= durations[si];
            si += 1;
        }
        let s = profile_position(t, path[si].length(), v_max, a_max);
        let pos = path[si].point_at(s);
        let idx = k - 1;
        if windows[si].0 == usize::MAX {
            windows[si].0 = idx;
        }
        windows[si].1 = idx + 1;
        samples.push(RefSample { k: idx, pos, segment: si });
    }
    for (si, seg) in path.iter().enumerate() {
        let mut cs = seg.to_contour_segment()?;
        cs.time_window = windows[si];
        segments.push(cs);
    }
    let plan = ReferencePlan {
        samples,
        segments,
        dwell_bounds: BTreeMap::new(),
        mode_sequence: Vec::new(),
        t_s,
    };
    plan.check_limits(v_max, a_max)?;
    Ok(plan)
}

impl ReferencePlan {
    fn check_limits(&self, v_max: f64, a_max: f64) -> Result<()> {
        let p = &self.samples;
        for i in 1..p.len() {
            let d = ((p[i].pos.0 - p[i - 1].pos.0).powi(2)
                + (p[i].pos.1 - p[i - 1].pos.1).powi(2))
            .sqrt();
            if d > v_max * self.t_s + 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "reference speed violated at sample {i}"
                )));
            }
        }
        // on arcs the centripetal component v^2/r adds (orthogonally)
        // to the tangential profile limit
        let centripetal = self
            .segments
            .iter()
            .filter_map(|s| match &s.kind {
                crate::contour::SegmentKind::Arc(a) => Some(v_max * v_max / a.r_c),
                _ => None,
            })
            .fold(0.0f64, f64::max);
        let a_bound = (a_max * a_max + centripetal * centripetal).sqrt();
        for i in 2..p.len() {
            let ax = p[i].pos.0 - 2.0 * p[i - 1].pos.0 + p[i - 2].pos.0;
            let ay = p[i].pos.1 - 2.0 * p[i - 1].pos.1 + p[i - 2].pos.1;
            if (ax * ax + ay * ay).sqrt() > a_bound * self.t_s * self.t_s + 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "reference acceleration violated at sample {i}"
                )));
            }
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        self.samples.iter().map(|s| s.pos).collect()
    }

    /// Splits the reference timeline into composite modes (region x
    /// contour piece/sector) and derives dwell bounds. `dwell_margin`
    /// samples are subtracted from each bound (floored at 1) to absorb
    /// the jitter between reference and realized region crossings.
    pub fn assign_modes(
        &mut self,
        params: &GantryParams,
        annulus: Option<&AnnulusApprox>,
        dwell_margin: usize,
    ) -> Result<()> {
        let sector_of = |pos: (f64, f64), ann: &AnnulusApprox| -> usize {
            let ang = (pos.1 - ann.center.1).atan2(pos.0 - ann.center.0);
            let w = TAU / ann.n_i as f64;
            let rel = (ang - ann.phase + 0.5 * w).rem_euclid(TAU);
            (rel / w).floor() as usize % ann.n_i
        };
        let mut seq: Vec<CompositeMode> = Vec::new();
        for s in &self.samples {
            let region = params.region_of(s.pos.0);
            let lens = match (&self.segments[s.segment].kind, annulus) {
                (crate::contour::SegmentKind::Arc(_), Some(ann)) => Some(sector_of(s.pos, ann)),
                (crate::contour::SegmentKind::Arc(_), None) => {
                    return Err(Error::InvalidArgument(
                        "arc segment requires an annulus approximation".into(),
                    ))
                }
                _ => None,
            };
            match seq.last_mut() {
                Some(m)
                    if m.region == region && m.segment == s.segment && m.lens == lens =>
                {
                    m.end_k = s.k + 1;
                }
                _ => {
                    let id = seq.len();
                    seq.push(CompositeMode {
                        id,
                        region,
                        segment: s.segment,
                        lens,
                        start_k: s.k,
                        end_k: s.k + 1,
                    });
                }
            }
        }
        self.dwell_bounds = seq
            .iter()
            .map(|m| (m.id, (m.end_k - m.start_k).saturating_sub(dwell_margin).max(1)))
            .collect();
        self.mode_sequence = seq;
        Ok(())
    }
}

/// Per-sample record collection plus run statistics.
#[derive(Debug, Clone)]
pub struct TraceSummary {
    pub max_eps: f64,
    pub max_track: (f64, f64),
    pub switch_count: usize,
    pub infeasibility_count: usize,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub records: Vec<StepRecord>,
    pub summary: TraceSummary,
    pub t_s: f64,
}

impl Trace {
    pub fn from_records(records: Vec<StepRecord>, t_s: f64, infeasibility_count: usize) -> Self {
        let mut max_eps: f64 = 0.0;
        let mut max_track = (0.0f64, 0.0f64);
        let mut switch_count = 0;
        for (i, r) in records.iter().enumerate() {
            max_eps = max_eps.max(r.eps);
            max_track.0 = max_track.0.max((r.y.0 - r.r.0).abs());
            max_track.1 = max_track.1.max((r.y.1 - r.r.1).abs());
            if i > 0 && records[i - 1].sigma != r.sigma {
                switch_count += 1;
            }
        }
        Trace {
            records,
            summary: TraceSummary { max_eps, max_track, switch_count, infeasibility_count },
            t_s,
        }
    }

    /// CSV form, one row per sample, 12 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "k,t,rx,ry,x1,x2,x3,x4,x5,x6,u1,u2,u3,ye_x,ye_y,mode,delta,eps,cost,qp_status\n",
        );
        for r in &self.records {
            let _ = write!(out, "{},{:.11e},{:.11e},{:.11e}", r.k, r.k as f64 * self.t_s, r.r.0, r.r.1);
            for i in 0..6 {
                let _ = write!(out, ",{:.11e}", r.x[i]);
            }
            for i in 0..3 {
                let _ = write!(out, ",{:.11e}", r.u[i]);
            }
            let _ = writeln!(
                out,
                ",{:.11e},{:.11e},{},{},{:.11e},{:.11e},{}",
                r.y.0, r.y.1, r.sigma, r.delta, r.eps, r.cost, r.qp_status
            );
        }
        out
    }
}

/// Controller tuning knobs for an experiment.
#[derive(Debug, Clone)]
pub struct Tuning {
    pub horizon: usize,
    pub q: (f64, f64),
    pub r: (f64, f64, f64),
    pub v_max: f64,
    pub a_max: f64,
    pub dwell_margin: usize,
    /// Comparison slack handed to the polygon side-count search.
    pub side_count_slack: f64,
    pub settle_tol: f64,
    pub settle_cap: usize,
    pub max_iter: usize,
}

impl Default for Tuning {
    fn default() -> Self {
        Self {
            horizon: 3,
            q: (1e5, 1e5),
            r: (1e-1, 1e-3, 1e-2),
            v_max: 0.1,
            a_max: 1.0,
            dwell_margin: 6,
            side_count_slack: SET_SLACK,
            settle_tol: 1e-4,
            settle_cap: 5000,
            max_iter: 200,
        }
    }
}

/// Everything the online loop consumes, producible once and cacheable.
#[derive(Debug, Clone)]
pub struct OfflineArtifacts {
    pub plant: Vec<ModeModel>,
    pub plan: ReferencePlan,
    pub annulus: Option<AnnulusApprox>,
    pub side_counts: Option<(usize, usize)>,
    pub composite: Vec<ModeModel>,
    pub graph: ModeGraph,
    pub family: SwitchCiFamily,
    pub cfg: MpcConfig,
}

fn mpc_config(params: &GantryParams, tuning: &Tuning) -> Result<MpcConfig> {
    MpcConfig::new(
        tuning.horizon,
        Matrix::from_diagonal(&Vector::from_row_slice(&[tuning.q.0, tuning.q.1])),
        Matrix::from_diagonal(&Vector::from_row_slice(&[tuning.r.0, tuning.r.1, tuning.r.2])),
        Matrix::identity(2, 2),
        params.input_box(),
        params.state_box(),
    )
}

/// Offline pipeline output minus the (expensive) switch CI family;
/// finish with [`PreparedOffline::solve_family`] or attach a cached
/// family via [`PreparedOffline::with_family`].
#[derive(Debug, Clone)]
pub struct PreparedOffline {
    pub plant: Vec<ModeModel>,
    pub plan: ReferencePlan,
    pub annulus: Option<AnnulusApprox>,
    pub side_counts: Option<(usize, usize)>,
    pub composite: Vec<ModeModel>,
    pub graph: ModeGraph,
    pub cfg: MpcConfig,
}

/// Backward-reachability operator for the gantry scenario: the feedback
/// form with, per composite mode, a moderate LQR gain on the contour
/// outputs and a dynamically consistent reference trajectory tracking
/// the mode's slice of the plan over its dwell window.
///
/// The gain weights deliberately differ from the online controller's:
/// they trade off how fast the closed-loop powers decay (offline run
/// time) against how far from the reference the policy saturates the
/// drives (how much of each feasible set the computed invariant sets
/// retain). The online gains are far too stiff for the second
/// criterion; this choice keeps peak gain entries below ~100, so the
/// policy stays within the +/-5 A drive limits across the full width of
/// every composite feasible set.
///
/// The reference makes the dwell terms track the actual contour through
/// the mode instead of contracting to a single interior point: an
/// equilibrium-anchored policy entering an arc lens cuts the corner the
/// polygonal tube was sized against and leaves the feasible set, while
/// the deviation from the moving reference only has to stay within the
/// tube margin.
pub fn scenario_reach_op(composite: &[ModeModel], plan: &ReferencePlan) -> Result<ReachOp> {
    let q = Matrix::identity(2, 2) * 1e4;
    let r = Matrix::identity(3, 3);
    let t_s = plan.t_s;
    let window: BTreeMap<usize, (usize, usize)> = plan
        .mode_sequence
        .iter()
        .map(|cm| (cm.id, (cm.start_k, cm.end_k)))
        .collect();
    let pos = |k: usize| plan.samples[k.min(plan.samples.len() - 1)].pos;
    let plan_state = |k: usize| -> Vector {
        let p = pos(k);
        let p1 = pos(k + 1);
        Vector::from_row_slice(&[
            p.0,
            (p1.0 - p.0) / t_s,
            p.1,
            (p1.1 - p.1) / t_s,
            0.0,
            0.0,
        ])
    };
    let mut policies = BTreeMap::new();
    for m in composite {
        let qx = m.c.transpose() * &q * &m.c;
        let (k, _) = dlqr(&m.a, &m.b, &qx, &r)?;
        let &(start_k, _) = window.get(&m.mode_id).ok_or_else(|| Error::ModeError {
            mode: m.mode_id,
            msg: "mode missing from the plan".into(),
        })?;
        let d = plan.dwell_bounds[&m.mode_id];
        // Reference pair sequence: feedforward from a least-squares
        // inverse of B against the plan increments, plus the gain
        // correction that keeps the generated trajectory pinned to the
        // plan (the recursion below is what defines x_ref, so the pair
        // is dynamically consistent by construction).
        let b_svd = m.b.clone().svd(true, true);
        let mut x_ref: Vec<Vector> = Vec::with_capacity(d + 1);
        let mut u_ff: Vec<Vector> = Vec::with_capacity(d);
        x_ref.push(plan_state(start_k));
        for j in 0..d {
            let p_now = plan_state(start_k + j);
            let p_next = plan_state(start_k + j + 1);
            let ff = b_svd
                .solve(&(&p_next - &m.a * &p_now), 1e-12)
                .map_err(|e| Error::NumericalFailure(format!("feedforward solve: {e}")))?;
            let uj = &ff + &k * (&x_ref[j] - &p_now);
            x_ref.push(&m.a * &x_ref[j] + &m.b * &uj);
            u_ff.push(uj);
        }
        policies.insert(m.mode_id, ModePolicy { k, x_ref, u_ff });
    }
    Ok(ReachOp::Feedback { policies })
}

impl PreparedOffline {
    /// See [`scenario_reach_op`].
    pub fn reach_op(&self) -> Result<ReachOp> {
        scenario_reach_op(&self.composite, &self.plan)
    }

    /// Runs Algorithm 1 to produce the switch CI family.
    pub fn solve_family(self, max_iter: usize) -> Result<OfflineArtifacts> {
        let op = self.reach_op()?;
        let family =
            switch_ci_sets(&self.composite, &self.graph, &self.cfg.u_set, max_iter, &op)?;
        self.with_family(family)
    }

    /// Attaches a previously computed family after a shape check
    /// (same mode ids, same state dimension).
    pub fn with_family(self, family: SwitchCiFamily) -> Result<OfflineArtifacts> {
        for m in &self.composite {
            match family.get(m.mode_id) {
                Ok(c) if c.dim() == m.n_states() => {}
                Ok(_) => {
                    return Err(Error::Config(format!(
                        "cached set for mode {} has the wrong dimension",
                        m.mode_id
                    )))
                }
                Err(_) => {
                    return Err(Error::Config(format!(
                        "cached family is missing mode {}",
                        m.mode_id
                    )))
                }
            }
        }
        if family.sets.len() != self.composite.len() {
            return Err(Error::Config(
                "cached family lists modes the scenario does not have".into(),
            ));
        }
        Ok(OfflineArtifacts {
            plant: self.plant,
            plan: self.plan,
            annulus: self.annulus,
            side_counts: self.side_counts,
            composite: self.composite,
            graph: self.graph,
            family,
            cfg: self.cfg,
        })
    }
}

/// Offline pipeline: plant, reference plan, annulus approximation,
/// composite modes with contouring-constrained feasible sets, and the
/// switch CI family.
pub fn compile_offline(
    params: &GantryParams,
    path: &[PathSegment],
    tol: Tolerance,
    tuning: &Tuning,
) -> Result<OfflineArtifacts> {
    prepare_offline(params, path, tol, tuning)?.solve_family(tuning.max_iter)
}

/// Everything in [`compile_offline`] except Algorithm 1 itself.
pub fn prepare_offline(
    params: &GantryParams,
    path: &[PathSegment],
    tol: Tolerance,
    tuning: &Tuning,
) -> Result<PreparedOffline> {
    let plant = build_plant(params)?;
    let cfg = mpc_config(params, tuning)?;
    let mut plan = generate_reference(path, tuning.v_max, tuning.a_max, params.t_s)?;

    // one annulus approximation shared by all arc segments (the §V-style
    // scenarios have a single circle; multiple concentric arcs would
    // need one approximation each)
    let arc = path.iter().find_map(|p| match p {
        PathSegment::Arc { center, r, start_angle, end_angle } => Some(Arc {
            x_o: center.0,
            y_o: center.1,
            r_c: *r,
            angle_start: start_angle.min(*end_angle),
            angle_end: start_angle.max(*end_angle),
        }),
        _ => None,
    });
    let (annulus, side_counts) = match arc {
        Some(arc) => {
            let (n_i, n_o) =
                polygon_side_counts_with_slack(arc.r_c, tol, tuning.side_count_slack)?;
            // phase at the arc's start angle so the handoff from the
            // preceding segment lands mid-lens
            let ann = circular_feasible_sectors(&arc, tol, n_i, n_o, arc.angle_start)?;
            (Some(ann), Some((n_i, n_o)))
        }
        None => (None, None),
    };
    plan.assign_modes(params, annulus.as_ref(), tuning.dwell_margin)?;

    // composite models: region dynamics + contouring-constrained S
    let x_box = params.state_box();
    let mut composite = Vec::with_capacity(plan.mode_sequence.len());
    for cm in &plan.mode_sequence {
        let base = &plant[cm.region];
        let out_set = match cm.lens {
            Some(p) => annulus
                .as_ref()
                .expect("lens mode without annulus")
                .lens_set(p)?,
            None => {
                let seg = &plan.segments[cm.segment];
                match &seg.kind {
                    crate::contour::SegmentKind::Line(l) => {
                        let bound = tol.eps_c * (l.a * l.a + l.b * l.b).sqrt();
                        Polytope::new(
                            Matrix::from_row_slice(2, 2, &[l.a, l.b, -l.a, -l.b]),
                            Vector::from_row_slice(&[bound - l.c, bound + l.c]),
                        )?
                    }
                    crate::contour::SegmentKind::Arc(_) => unreachable!("arc handled via lens"),
                }
            }
        };
        let s = x_box.intersect(&out_set.preimage(&base.c)?)?;
        if s.is_empty()? {
            return Err(Error::ModeError {
                mode: cm.id,
                msg: "composite feasible set is empty".into(),
            });
        }
        composite.push(ModeModel::new(
            cm.id,
            base.a.clone(),
            base.b.clone(),
            base.c.clone(),
            params.region_interval(cm.region),
            s,
        )?);
    }
    let modes: Vec<usize> = plan.mode_sequence.iter().map(|m| m.id).collect();
    let edges: Vec<(usize, usize)> = modes.windows(2).map(|w| (w[0], w[1])).collect();
    let graph = ModeGraph::new(modes, edges, plan.dwell_bounds.clone())?;
    Ok(PreparedOffline {
        plant,
        plan,
        annulus,
        side_counts,
        composite,
        graph,
        cfg,
    })
}

/// Closed-loop simulation against the switched plant. `x0_override`
/// replaces the default start (path start, at rest).
pub fn simulate(
    params: &GantryParams,
    art: &OfflineArtifacts,
    tuning: &Tuning,
    x0_override: Option<Vector>,
) -> Result<Trace> {
    let terminals: TerminalIngredients =
        synthesize_terminal(&art.composite, &art.graph, &art.cfg)?;
    let refs = art.plan.positions();
    let seq = &art.plan.mode_sequence;
    let contour = &art.plan.segments;
    let loop_art = LoopArtifacts {
        models: &art.composite,
        graph: &art.graph,
        family: &art.family,
        terminals: &terminals,
        cfg: &art.cfg,
        contour,
        settle_tol: tuning.settle_tol,
        settle_cap: tuning.settle_cap,
    };
    let start = refs
        .first()
        .map(|_| art.plan.samples[0].pos)
        .unwrap_or((0.0, 0.0));
    // default start: segment start of the path (the first sample is one
    // step in), at rest
    let seg0 = &art.plan.segments[0];
    let x0 = x0_override.unwrap_or_else(|| {
        let p0 = match &seg0.kind {
            crate::contour::SegmentKind::Line(_) => {
                // first sample minus nothing: use the reference start
                // extrapolated to t = 0 via the first sample itself
                start
            }
            _ => start,
        };
        Vector::from_row_slice(&[p0.0, 0.0, p0.1, 0.0, 0.0, 0.0])
    });
    let ds0 = DwellState {
        sigma: seq[0].id,
        sigma_next: seq.get(1).map(|m| m.id).unwrap_or(seq[0].id),
        delta: art.graph.dwell_of(seq[0].id),
    };
    let plant_models = &art.plant;
    let plant = |x: &Vector, u: &Vector| -> Vector {
        let j = params.region_of(x[0]);
        &plant_models[j].a * x + &plant_models[j].b * u
    };
    let seq_ref = seq.clone();
    let params_c = params.clone();
    let supervisor = move |k: usize, x: &Vector, sigma: usize| -> (usize, usize) {
        let last = seq_ref.len() - 1;
        if sigma >= last {
            return (sigma, sigma);
        }
        let cur = &seq_ref[sigma];
        let nm = &seq_ref[sigma + 1];
        let desired = if nm.segment == cur.segment && nm.lens == cur.lens {
            // pure region change: gate on the measured beam position
            if params_c.region_of(x[0]) == nm.region { sigma + 1 } else { sigma }
        } else {
            // contour-piece/sector change: gate on the reference clock
            if k >= nm.start_k { sigma + 1 } else { sigma }
        };
        let announced = (desired + 1).min(last);
        (desired, announced)
    };
    let mut records = Vec::new();
    let result = control_loop(&loop_art, &refs, x0, ds0, plant, supervisor, &mut records);
    match result {
        Ok(()) => Ok(Trace::from_records(records, params.t_s, 0)),
        Err(e) => Err(e),
    }
}

/// End-to-end §V-style experiment: offline compilation plus the closed
/// loop.
pub fn run_experiment(
    params: &GantryParams,
    path: &[PathSegment],
    tol: Tolerance,
    tuning: &Tuning,
) -> Result<Trace> {
    let art = compile_offline(params, path, tol, tuning)?;
    simulate(params, &art, tuning, None)
}

/// The §V-style line-circle-line path: approach line, full circle of
/// radius 0.08 m around the origin, and the retraced line.
pub fn reference_path() -> Vec<PathSegment> {
    vec![
        PathSegment::Line { from: (-0.12, 0.0), to: (-0.08, 0.0) },
        PathSegment::Arc { center: (0.0, 0.0), r: 0.08, start_angle: PI, end_angle: 3.0 * PI },
        PathSegment::Line { from: (-0.08, 0.0), to: (-0.12, 0.0) },
    ]
}

/// Suppresses an unused-import warning until the CLI consumes it.
pub(crate) fn _line_type_anchor(_: Line) {}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn double_integrator_step_response() {
        let p = GantryParams::default();
        let models = build_plant(&p).unwrap();
        // u = (1, 0, 0): x_m follows 1/2 k1 t^2 exactly under ZOH
        let u = Vector::from_row_slice(&[1.0, 0.0, 0.0]);
        let mut x = Vector::zeros(6);
        for k in 1..=100 {
            x = &models[2].a * &x + &models[2].b * &u;
            let t = k as f64 * p.t_s;
            assert_abs_diff_eq!(x[0], 0.5 * p.k1 * t * t, epsilon = 1e-9);
            assert_abs_diff_eq!(x[2], 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(x[4], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mode_lookup() {
        let p = GantryParams::default();
        assert_eq!(p.region_of(-0.09), 0);
        assert_eq!(p.region_of(0.0), 2);
        assert_eq!(p.region_of(0.08), 4);
        assert_eq!(p.region_of(-0.075), 1);
    }

    #[test]
    fn output_map_continuity() {
        let p = GantryParams::default();
        let x = Vector::from_row_slice(&[-0.075, 0.0, 0.02, 0.0, 0.005, 0.0]);
        for j in 0..4 {
            let y0 = p.output_map(j) * &x;
            let y1 = p.output_map(j + 1) * &x;
            assert_abs_diff_eq!(y0[0], y1[0], epsilon = 1e-15);
            let expect = (p.lin_points[j + 1] - p.lin_points[j]) * x[4];
            assert_abs_diff_eq!(y1[1] - y0[1], expect, epsilon = 1e-15);
        }
    }

    #[test]
    fn trapezoid_sample_count() {
        // L = 0.1, v = 0.1, a = 1: T = 1.1 s -> 550 samples at 500 Hz
        let path = vec![PathSegment::Line { from: (0.0, 0.0), to: (0.1, 0.0) }];
        let plan = generate_reference(&path, 0.1, 1.0, 1.0 / 500.0).unwrap();
        assert_eq!(plan.samples.len(), 550);
        let last = plan.samples.last().unwrap().pos;
        assert_abs_diff_eq!(last.0, 0.1, epsilon = 1e-12);
    }

    #[test]
    fn circle_duration() {
        let path = vec![PathSegment::Arc {
            center: (0.0, 0.0),
            r: 0.08,
            start_angle: PI,
            end_angle: 3.0 * PI,
        }];
        let plan = generate_reference(&path, 0.1, 1.0, 1.0 / 500.0).unwrap();
        let expect = (TAU * 0.08 / 0.1 + 0.1) / (1.0 / 500.0);
        assert_eq!(plan.samples.len(), expect.ceil() as usize);
    }

    #[test]
    fn reference_on_curve() {
        let plan = generate_reference(&reference_path(), 0.1, 1.0, 1.0 / 500.0).unwrap();
        for s in &plan.samples {
            let d = plan.segments[s.segment].distance_to(s.pos.0, s.pos.1);
            assert!(d <= 1e-9, "sample {} off-curve by {d}", s.k);
        }
    }

    #[test]
    fn reference_rejects_disconnected_path() {
        let path = vec![
            PathSegment::Line { from: (0.0, 0.0), to: (0.1, 0.0) },
            PathSegment::Line { from: (0.2, 0.0), to: (0.3, 0.0) },
        ];
        assert!(generate_reference(&path, 0.1, 1.0, 0.002).is_err());
    }

    #[test]
    fn mode_chain_structure() {
        let p = GantryParams::default();
        let tol = Tolerance::new(0.004).unwrap();
        let mut plan = generate_reference(&reference_path(), 0.1, 1.0, p.t_s).unwrap();
        let arc = Arc { x_o: 0.0, y_o: 0.0, r_c: 0.08, angle_start: PI, angle_end: 3.0 * PI };
        let ann = circular_feasible_sectors(&arc, tol, 10, 11, PI).unwrap();
        plan.assign_modes(&p, Some(&ann), 6).unwrap();
        let seq = &plan.mode_sequence;
        // line, 19 circle pieces (sector-boundary and region-crossing
        // events interleaved, the start/end sector visited twice), line
        assert_eq!(seq.first().unwrap().lens, None);
        assert_eq!(seq.last().unwrap().lens, None);
        assert_eq!(seq.len(), 21);
        // windows tile the timeline
        for w in seq.windows(2) {
            assert_eq!(w[0].end_k, w[1].start_k);
        }
        assert!(plan.dwell_bounds.values().all(|&d| d >= 1));
        // ids are chain indices
        for (i, m) in seq.iter().enumerate() {
            assert_eq!(m.id, i);
        }
        // first circle mode starts mid-lens 0 in region 0
        assert_eq!(seq[1].lens, Some(0));
        assert_eq!(seq[1].region, 0);
    }

    #[test]
    fn plant_model_consistency() {
        // simulating with the controller's own model keeps the one-step
        // prediction error at zero when no switch occurs
        let p = GantryParams::default();
        let models = build_plant(&p).unwrap();
        let x = Vector::from_row_slice(&[-0.09, 0.05, 0.01, -0.02, 0.001, 0.1]);
        let u = Vector::from_row_slice(&[0.3, -0.2, 0.1]);
        let j = p.region_of(x[0]);
        let plant_next = &models[j].a * &x + &models[j].b * &u;
        let model_next = &models[j].a * &x + &models[j].b * &u;
        assert!((plant_next - model_next).amax() <= 1e-9);
    }

    #[test]
    fn expm_against_closed_form() {
        // rotation generator: exp([[0,-w],[w,0]] t) is a rotation
        let w = 3.0;
        let t = 0.37;
        let m = Matrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0]) * t;
        let e = expm(&m);
        assert_abs_diff_eq!(e[(0, 0)], (w * t).cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(e[(1, 0)], (w * t).sin(), epsilon = 1e-12);
    }
}
