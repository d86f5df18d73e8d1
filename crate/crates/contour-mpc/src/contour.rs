//! Contour geometry: the contouring-error metric, feasible sets for
//! linear paths, and the polygon approximation of the circular annulus
//! with its sector partition.

use crate::polytope::Polytope;
use crate::tol::SET_SLACK;
use crate::{Error, Matrix, Result, Vector};
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

/// Implicit line  a*x + b*y + c = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Circular arc, angles in radians measured from the +x axis. The angle
/// interval may exceed a full turn; `angle_end >= angle_start`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Arc {
    pub x_o: f64,
    pub y_o: f64,
    pub r_c: f64,
    pub angle_start: f64,
    pub angle_end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SegmentKind {
    Line(Line),
    Arc(Arc),
}

/// One piece of the desired contour together with the sample-index
/// window where it is the active reference.
#[derive(Debug, Clone)]
pub struct ContourSegment {
    pub kind: SegmentKind,
    /// [k_start, k_end) sample window; filled in by the reference
    /// generator, zero-length until then.
    pub time_window: (usize, usize),
}

impl ContourSegment {
    pub fn line(a: f64, b: f64, c: f64) -> Result<Self> {
        if a == 0.0 && b == 0.0 {
            return Err(Error::InvalidArgument("line with zero normal".into()));
        }
        Ok(Self {
            kind: SegmentKind::Line(Line { a, b, c }),
            time_window: (0, 0),
        })
    }

    pub fn arc(x_o: f64, y_o: f64, r_c: f64, angle_start: f64, angle_end: f64) -> Result<Self> {
        if r_c <= 0.0 {
            return Err(Error::InvalidArgument("arc with nonpositive radius".into()));
        }
        if angle_end < angle_start {
            return Err(Error::InvalidArgument("arc with reversed angles".into()));
        }
        Ok(Self {
            kind: SegmentKind::Arc(Arc {
                x_o,
                y_o,
                r_c,
                angle_start,
                angle_end,
            }),
            time_window: (0, 0),
        })
    }

    /// Point on the segment at curve parameter `s` (arc length from the
    /// segment start). Lines need explicit endpoints, so this lives on
    /// the reference generator instead; arcs expose it here.
    pub fn distance_to(&self, x: f64, y: f64) -> f64 {
        match &self.kind {
            SegmentKind::Line(l) => (l.a * x + l.b * y + l.c).abs() / (l.a * l.a + l.b * l.b).sqrt(),
            SegmentKind::Arc(arc) => {
                let dx = x - arc.x_o;
                let dy = y - arc.y_o;
                let r = (dx * dx + dy * dy).sqrt();
                if arc.angle_end - arc.angle_start >= TAU - 1e-12 {
                    return (arc.r_c - r).abs();
                }
                let theta = dy.atan2(dx);
                // shift theta by whole turns into [angle_start, angle_start + 2pi)
                let mut t = theta;
                while t < arc.angle_start {
                    t += TAU;
                }
                while t >= arc.angle_start + TAU {
                    t -= TAU;
                }
                if t <= arc.angle_end {
                    (arc.r_c - r).abs()
                } else {
                    let d_at = |ang: f64| {
                        let px = arc.x_o + arc.r_c * ang.cos();
                        let py = arc.y_o + arc.r_c * ang.sin();
                        ((x - px).powi(2) + (y - py).powi(2)).sqrt()
                    };
                    d_at(arc.angle_start).min(d_at(arc.angle_end))
                }
            }
        }
    }
}

/// Contouring error tolerance in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub eps_c: f64,
}

impl Tolerance {
    pub fn new(eps_c: f64) -> Result<Self> {
        if eps_c <= 0.0 {
            return Err(Error::InvalidArgument("tolerance must be positive".into()));
        }
        Ok(Self { eps_c })
    }
}

/// Shortest distance from a point to the contour.
pub fn contouring_error(x: f64, y: f64, contour: &[ContourSegment]) -> f64 {
    contour
        .iter()
        .map(|s| s.distance_to(x, y))
        .fold(f64::INFINITY, f64::min)
}

/// State-space feasible set for a linear path: pulls the slab
/// |a x_e + b y_e + c| <= eps_c * sqrt(a^2+b^2) back through the output
/// map and intersects with the state constraint set.
pub fn linear_feasible_set(
    line: &Line,
    tol: Tolerance,
    x_set: &Polytope,
    c_map: &Matrix,
) -> Result<Polytope> {
    if line.a == 0.0 && line.b == 0.0 {
        return Err(Error::InvalidArgument("line with zero normal".into()));
    }
    let bound = tol.eps_c * (line.a * line.a + line.b * line.b).sqrt();
    let slab = Polytope::new(
        Matrix::from_row_slice(2, 2, &[line.a, line.b, -line.a, -line.b]),
        Vector::from_row_slice(&[bound - line.c, bound + line.c]),
    )?;
    let pulled = slab.preimage(c_map)?;
    x_set.intersect(&pulled)
}

/// Minimum polygon side counts for the annulus approximation.
///
/// The inner count is the least n_i >= 3 with
/// (R_c - eps)/cos(pi/n_i) <= R_c, the outer count the least n_o >= 3
/// with (R_c - eps)/cos(pi/n_i) <= (R_c + eps) cos(pi/n_o); the outer
/// count is then incremented until the reference circle fits between the
/// polygons (l_v <= R_c and R_c <= l_s).
pub fn polygon_side_counts(r_c: f64, tol: Tolerance) -> Result<(usize, usize)> {
    polygon_side_counts_with_slack(r_c, tol, SET_SLACK)
}

/// Like [`polygon_side_counts`] but with a configurable comparison
/// slack. A larger slack absorbs marginal violations of the outer-count
/// condition.
pub fn polygon_side_counts_with_slack(
    r_c: f64,
    tol: Tolerance,
    slack: f64,
) -> Result<(usize, usize)> {
    let eps = tol.eps_c;
    if eps >= r_c {
        return Err(Error::InvalidArgument(
            "tolerance must be smaller than the circle radius".into(),
        ));
    }
    const CAP: usize = 100_000;
    let inner_ok = |n: usize| (r_c - eps) / (PI / n as f64).cos() <= r_c + slack;
    let n_i = (3..CAP)
        .find(|&n| inner_ok(n))
        .ok_or_else(|| Error::NumericalFailure("inner side count out of range".into()))?;
    let l_v = (r_c - eps) / (PI / n_i as f64).cos();
    let outer_ok = |n: usize| l_v <= (r_c + eps) * (PI / n as f64).cos() + slack;
    let mut n_o = (3..CAP)
        .find(|&n| outer_ok(n))
        .ok_or_else(|| Error::NumericalFailure("outer side count out of range".into()))?;
    // Circle-in-annulus containment check; for regular polygons the
    // closed-form pair below is equivalent to the pointwise condition.
    while !(l_v <= r_c + slack && r_c <= (r_c + eps) * (PI / n_o as f64).cos() + slack) {
        n_o += 1;
        if n_o >= CAP {
            return Err(Error::NumericalFailure("outer side count out of range".into()));
        }
    }
    Ok((n_i, n_o))
}

/// Polygonal inner approximation of the circular feasible annulus,
/// partitioned into n_i compact convex sectors in output space.
#[derive(Debug, Clone)]
pub struct AnnulusApprox {
    pub r_c: f64,
    pub eps_c: f64,
    pub center: (f64, f64),
    pub n_i: usize,
    pub n_o: usize,
    /// Distance from the center to the inner polygon's vertices.
    pub l_v: f64,
    /// Distance from the center to the outer polygon's sides.
    pub l_s: f64,
    pub phase: f64,
    /// Output-space (x_e, y_e) sector polytopes, one per inner edge.
    pub sectors: Vec<Polytope>,
    /// Sectors whose angular window intersects the arc's angle range.
    pub active: Vec<bool>,
}

/// Builds the sector partition for a circular arc. The inner polygon
/// circumscribes the circle of radius R_c - eps (apothem R_c - eps), the
/// outer polygon is inscribed in the circle of radius R_c + eps.
pub fn circular_feasible_sectors(
    arc: &Arc,
    tol: Tolerance,
    n_i: usize,
    n_o: usize,
    phase: f64,
) -> Result<AnnulusApprox> {
    let eps = tol.eps_c;
    if eps >= arc.r_c {
        return Err(Error::InvalidArgument(
            "tolerance must be smaller than the circle radius".into(),
        ));
    }
    if n_i < 3 || n_o < 3 {
        return Err(Error::InvalidArgument("side counts must be >= 3".into()));
    }
    let r_in = arc.r_c - eps;
    let r_out = arc.r_c + eps;
    let l_v = r_in / (PI / n_i as f64).cos();
    let l_s = r_out * (PI / n_o as f64).cos();
    if l_v > l_s + SET_SLACK {
        return Err(Error::InvalidArgument(format!(
            "inner vertices ({l_v:.9}) reach past the outer sides ({l_s:.9}); \
             increase the side counts"
        )));
    }
    let (cx, cy) = (arc.x_o, arc.y_o);

    // Outer rows shared by every sector: m_q . (y - c) <= l_s, with the
    // outer polygon's first vertex at angle `phase`.
    let mut outer_rows: Vec<(f64, f64, f64)> = Vec::with_capacity(n_o);
    for q in 0..n_o {
        let ang = phase + (2 * q + 1) as f64 * PI / n_o as f64;
        let (nx, ny) = (ang.cos(), ang.sin());
        outer_rows.push((nx, ny, l_s + nx * cx + ny * cy));
    }

    let mut sectors = Vec::with_capacity(n_i);
    let mut active = Vec::with_capacity(n_i);
    for p in 0..n_i {
        let phi = phase + TAU * p as f64 / n_i as f64; // inner edge normal
        let a1 = phi - PI / n_i as f64; // radial boundary rays
        let a2 = phi + PI / n_i as f64;
        let mut rows: Vec<(f64, f64, f64)> = Vec::with_capacity(3 + n_o);
        // outside the inner edge: -(n . (y - c)) <= -r_in
        let (nx, ny) = (phi.cos(), phi.sin());
        rows.push((-nx, -ny, -r_in - nx * cx - ny * cy));
        // angle >= a1:  t1 . (y - c) >= 0 with t1 the CCW tangent at a1
        let (t1x, t1y) = (-a1.sin(), a1.cos());
        rows.push((-t1x, -t1y, -(t1x * cx + t1y * cy)));
        // angle <= a2
        let (t2x, t2y) = (-a2.sin(), a2.cos());
        rows.push((t2x, t2y, t2x * cx + t2y * cy));
        rows.extend(outer_rows.iter().cloned());
        let a = Matrix::from_row_slice(
            rows.len(),
            2,
            &rows.iter().flat_map(|r| [r.0, r.1]).collect::<Vec<_>>(),
        );
        let b = Vector::from_vec(rows.iter().map(|r| r.2).collect());
        let sector = Polytope::new(a, b)?.remove_redundant()?;
        if sector.is_empty()? {
            return Err(Error::EmptySet(format!("sector {p} is empty")));
        }
        sectors.push(sector);
        active.push(sector_intersects_arc(phi, PI / n_i as f64, arc));
    }
    Ok(AnnulusApprox {
        r_c: arc.r_c,
        eps_c: eps,
        center: (cx, cy),
        n_i,
        n_o,
        l_v,
        l_s,
        phase,
        sectors,
        active,
    })
}

fn sector_intersects_arc(phi: f64, half_width: f64, arc: &Arc) -> bool {
    if arc.angle_end - arc.angle_start >= TAU - 1e-12 {
        return true;
    }
    // Does [phi - hw, phi + hw] (mod 2pi) meet [angle_start, angle_end]?
    let lo = phi - half_width;
    for turn in -2..=2 {
        let s = lo + turn as f64 * TAU;
        if s <= arc.angle_end && s + 2.0 * half_width >= arc.angle_start {
            return true;
        }
    }
    false
}

impl AnnulusApprox {
    /// Index of the first sector containing the point; ties on shared
    /// radial boundaries resolve to the lowest index.
    pub fn active_sector(&self, x: f64, y: f64) -> Result<usize> {
        let pt = Vector::from_row_slice(&[x, y]);
        for (i, s) in self.sectors.iter().enumerate() {
            if s.contains_point(&pt) {
                return Ok(i);
            }
        }
        Err(Error::InvalidArgument(format!(
            "point ({x}, {y}) lies outside the annulus approximation"
        )))
    }

    /// Convex feasible set attached to inner edge `p`: the halfplane
    /// beyond that edge intersected with all outer rows. Unlike the
    /// partition sectors, consecutive lens sets overlap in a wedge at
    /// the shared inner vertex, which is what lets a state hand over
    /// from one edge's set to the next without leaving either.
    pub fn lens_set(&self, p: usize) -> Result<Polytope> {
        if p >= self.n_i {
            return Err(Error::InvalidArgument(format!("no inner edge {p}")));
        }
        let (cx, cy) = self.center;
        let r_in = self.r_c - self.eps_c;
        let phi = self.phase + TAU * p as f64 / self.n_i as f64;
        let mut rows: Vec<(f64, f64, f64)> = Vec::with_capacity(1 + self.n_o);
        let (nx, ny) = (phi.cos(), phi.sin());
        rows.push((-nx, -ny, -r_in - nx * cx - ny * cy));
        for q in 0..self.n_o {
            let ang = self.phase + (2 * q + 1) as f64 * PI / self.n_o as f64;
            let (mx, my) = (ang.cos(), ang.sin());
            rows.push((mx, my, self.l_s + mx * cx + my * cy));
        }
        let a = Matrix::from_row_slice(
            rows.len(),
            2,
            &rows.iter().flat_map(|r| [r.0, r.1]).collect::<Vec<_>>(),
        );
        let b = Vector::from_vec(rows.iter().map(|r| r.2).collect());
        Polytope::new(a, b)?.remove_redundant()
    }

    /// State-space sector sets: each output-space sector pulled back
    /// through the output map and intersected with the state set.
    /// Errors name the first empty sector.
    pub fn state_sectors(&self, c_map: &Matrix, x_set: &Polytope) -> Result<Vec<Polytope>> {
        let mut out = Vec::with_capacity(self.sectors.len());
        for (i, s) in self.sectors.iter().enumerate() {
            let pulled = s.preimage(c_map)?;
            let inter = x_set.intersect(&pulled)?;
            if inter.is_empty()? {
                return Err(Error::EmptySet(format!(
                    "sector {i} empty after intersection with the state set"
                )));
            }
            out.push(inter);
        }
        Ok(out)
    }

    /// Text form: "annulus R_c eps_c n_i n_o phase" then one polytope
    /// block per sector.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "annulus {:.16e} {:.16e} {} {} {:.16e}",
            self.r_c, self.eps_c, self.n_i, self.n_o, self.phase
        );
        let _ = writeln!(s, "center {:.16e} {:.16e}", self.center.0, self.center.1);
        let _ = writeln!(s, "lv_ls {:.16e} {:.16e}", self.l_v, self.l_s);
        for (sec, act) in self.sectors.iter().zip(&self.active) {
            let _ = writeln!(s, "sector {}", if *act { 1 } else { 0 });
            s.push_str(&sec.to_text());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn full_circle(r: f64) -> Arc {
        Arc {
            x_o: 0.0,
            y_o: 0.0,
            r_c: r,
            angle_start: 0.0,
            angle_end: TAU,
        }
    }

    fn circle_segment(r: f64) -> ContourSegment {
        ContourSegment::arc(0.0, 0.0, r, 0.0, TAU).unwrap()
    }

    #[test]
    fn error_on_circle_is_zero() {
        let c = vec![circle_segment(0.08)];
        assert_abs_diff_eq!(contouring_error(0.08, 0.0, &c), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn error_radial_offset() {
        let c = vec![circle_segment(0.08)];
        assert_abs_diff_eq!(contouring_error(0.09, 0.0, &c), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn error_line_formula() {
        let c = vec![ContourSegment::line(3.0, 4.0, 0.0).unwrap()];
        assert_abs_diff_eq!(contouring_error(1.0, 1.0, &c), 1.4, epsilon = 1e-12);
    }

    #[test]
    fn error_arc_endpoint_rule() {
        // quarter arc from 0 to pi/2; point near angle pi is closest to
        // the endpoint at pi/2
        let c = vec![ContourSegment::arc(0.0, 0.0, 1.0, 0.0, PI / 2.0).unwrap()];
        let d = contouring_error(-1.0, 0.0, &c);
        assert_abs_diff_eq!(d, 2.0f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn error_rotation_invariant() {
        let mut rng = StdRng::seed_from_u64(17);
        for _ in 0..1000 {
            let ang: f64 = rng.gen_range(0.0..TAU);
            let (s, c) = ang.sin_cos();
            let px: f64 = rng.gen_range(-2.0..2.0);
            let py: f64 = rng.gen_range(-2.0..2.0);
            // line through origin with direction d; rotate both by ang
            let la: f64 = rng.gen_range(-1.0..1.0);
            let lb: f64 = rng.gen_range(0.1..1.0);
            let line = vec![ContourSegment::line(la, lb, 0.3).unwrap()];
            // rotated line coefficients: normal rotates with the frame
            let (ra, rb) = (la * c - lb * s, la * s + lb * c);
            let rline = vec![ContourSegment::line(ra, rb, 0.3).unwrap()];
            let (rpx, rpy) = (px * c - py * s, px * s + py * c);
            assert_abs_diff_eq!(
                contouring_error(px, py, &line),
                contouring_error(rpx, rpy, &rline),
                epsilon = 1e-10
            );
            // circle centered at origin is rotation invariant outright
            let circ = vec![circle_segment(1.3)];
            assert_abs_diff_eq!(
                contouring_error(px, py, &circ),
                contouring_error(rpx, rpy, &circ),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn linear_feasible_set_axis_slab() {
        let x_set = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let c_map = Matrix::identity(2, 2);
        let line = Line { a: 1.0, b: 0.0, c: 0.0 };
        let s = linear_feasible_set(&line, Tolerance::new(0.004).unwrap(), &x_set, &c_map).unwrap();
        let expect = Polytope::from_box(&[-0.004, -1.0], &[0.004, 1.0]).unwrap();
        assert!(s.set_eq(&expect).unwrap());
    }

    #[test]
    fn linear_feasible_set_diagonal() {
        let x_set = Polytope::from_box(&[-2.0, -2.0], &[2.0, 2.0]).unwrap();
        let c_map = Matrix::identity(2, 2);
        let line = Line { a: 1.0, b: 1.0, c: 0.0 };
        let s = linear_feasible_set(&line, Tolerance::new(1.0).unwrap(), &x_set, &c_map).unwrap();
        // |x + y| <= sqrt(2)
        let inside = Vector::from_row_slice(&[0.7, 0.7]);
        let outside = Vector::from_row_slice(&[0.8, 0.8]);
        assert!(s.contains_point(&inside));
        assert!(!s.contains_point(&outside));
    }

    #[test]
    fn linear_feasible_set_sampling_soundness() {
        let x_set = Polytope::from_box(&[-1.0, -1.0], &[1.0, 1.0]).unwrap();
        let c_map = Matrix::identity(2, 2);
        let line = Line { a: 2.0, b: -1.0, c: 0.1 };
        let tol = Tolerance::new(0.05).unwrap();
        let s = linear_feasible_set(&line, tol, &x_set, &c_map).unwrap();
        let contour = vec![ContourSegment::line(2.0, -1.0, 0.1).unwrap()];
        for p in s.sample_uniform(10_000, 5).unwrap() {
            assert!(contouring_error(p[0], p[1], &contour) <= tol.eps_c + 1e-9);
        }
    }

    #[test]
    fn side_counts_paper_case() {
        let tol = Tolerance::new(0.004).unwrap();
        let (n_i, n_o) = polygon_side_counts(0.08, tol).unwrap();
        assert_eq!(n_i, 10);
        // Strict arithmetic lands on 11; a slack above the marginal
        // violation (~1.2e-4 on R_c <= l_s) reproduces the reported 10.
        assert_eq!(n_o, 11);
        let (n_i2, n_o2) = polygon_side_counts_with_slack(0.08, tol, 2e-4).unwrap();
        assert_eq!((n_i2, n_o2), (10, 10));
    }

    #[test]
    fn side_counts_brute_scan_oracle() {
        let tol = Tolerance::new(0.5).unwrap();
        let (n_i, n_o) = polygon_side_counts(1.0, tol).unwrap();
        // brute scan with the same closed forms
        let brute_inner = (3..100)
            .find(|&n| (1.0 - 0.5) / (PI / n as f64).cos() <= 1.0 + 1e-9)
            .unwrap();
        assert_eq!(n_i, brute_inner);
        assert_eq!((n_i, n_o), (3, 4));
        let l_v = 0.5 / (PI / 3.0).cos();
        let l_s = 1.5 * (PI / 4.0).cos();
        assert!(l_v <= 1.0 + 1e-9 && 1.0 <= l_s + 1e-9);
    }

    #[test]
    fn side_counts_rejects_large_tolerance() {
        let tol = Tolerance::new(0.09).unwrap();
        assert!(polygon_side_counts(0.08, tol).is_err());
    }

    #[test]
    fn sectors_fig4_shape() {
        let arc = full_circle(1.0);
        let approx =
            circular_feasible_sectors(&arc, Tolerance::new(0.3).unwrap(), 6, 8, 0.0).unwrap();
        assert_eq!(approx.sectors.len(), 6);
        assert!(approx.active.iter().all(|&a| a));
        assert_abs_diff_eq!(approx.l_v, 0.7 / (PI / 6.0).cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(approx.l_s, 1.3 * (PI / 8.0).cos(), epsilon = 1e-12);
    }

    #[test]
    fn sector_soundness_sampling() {
        let arc = full_circle(0.08);
        let tol = Tolerance::new(0.004).unwrap();
        let approx = circular_feasible_sectors(&arc, tol, 10, 11, 0.0).unwrap();
        for s in &approx.sectors {
            for p in s.sample_uniform(2000, 13).unwrap() {
                let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
                assert!((0.08 - r).abs() <= 0.004 + 1e-9, "r = {r}");
            }
        }
    }

    #[test]
    fn sector_coverage_of_reference_circle() {
        let arc = full_circle(0.08);
        let tol = Tolerance::new(0.004).unwrap();
        let approx = circular_feasible_sectors(&arc, tol, 10, 11, 0.0).unwrap();
        for k in 0..720 {
            let ang = TAU * k as f64 / 720.0;
            let (x, y) = (0.08 * ang.cos(), 0.08 * ang.sin());
            assert!(approx.active_sector(x, y).is_ok(), "angle {ang}");
        }
    }

    #[test]
    fn sector_interiors_disjoint() {
        let arc = full_circle(1.0);
        let approx =
            circular_feasible_sectors(&arc, Tolerance::new(0.2).unwrap(), 8, 10, 0.0).unwrap();
        for (i, s) in approx.sectors.iter().enumerate() {
            for p in s.sample_uniform(500, 21 + i as u64).unwrap() {
                let hits = approx
                    .sectors
                    .iter()
                    .filter(|t| {
                        // strict interior test: shrink the slack
                        let (a, b) = t.rows();
                        let ap = a * &p;
                        (0..ap.len()).all(|r| ap[r] <= b[r] - 1e-9)
                    })
                    .count();
                assert!(hits <= 1);
            }
        }
    }

    #[test]
    fn active_sector_rules() {
        let arc = full_circle(0.08);
        let tol = Tolerance::new(0.004).unwrap();
        let approx = circular_feasible_sectors(&arc, tol, 10, 11, 0.0).unwrap();
        // angle 0, radius R_c, phase 0 -> sector 0 (the one around +x)
        assert_eq!(approx.active_sector(0.08, 0.0).unwrap(), 0);
        // point on the shared radial boundary between sectors 0 and 1
        let ang = PI / 10.0;
        let p = (0.08 * ang.cos(), 0.08 * ang.sin());
        assert_eq!(approx.active_sector(p.0, p.1).unwrap(), 0);
        // far outside the annulus
        assert!(approx.active_sector(0.08 + 0.008 + 0.01, 0.0).is_err());
    }

    #[test]
    fn stored_lv_ls_recompute() {
        let arc = full_circle(0.08);
        let approx =
            circular_feasible_sectors(&arc, Tolerance::new(0.004).unwrap(), 10, 11, 0.0).unwrap();
        assert_abs_diff_eq!(
            approx.l_v,
            (0.08 - 0.004) / (PI / 10.0).cos(),
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            approx.l_s,
            (0.08 + 0.004) * (PI / 11.0).cos(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn lens_sets_sound_and_overlapping() {
        let arc = full_circle(0.08);
        let tol = Tolerance::new(0.004).unwrap();
        let approx = circular_feasible_sectors(&arc, tol, 10, 11, PI).unwrap();
        for p in 0..10 {
            let lens = approx.lens_set(p).unwrap();
            // soundness: every lens point is within the tolerance band
            for pt in lens.sample_uniform(2000, 31 + p as u64).unwrap() {
                let r = (pt[0] * pt[0] + pt[1] * pt[1]).sqrt();
                assert!((0.08 - r).abs() <= 0.004 + 1e-9, "lens {p}: r = {r}");
            }
            // each lens covers its own partition sector
            assert!(lens.contains_set(&approx.sectors[p]).unwrap());
            // consecutive lens sets overlap in a full-dimensional wedge
            let next = approx.lens_set((p + 1) % 10).unwrap();
            let overlap = lens.intersect(&next).unwrap();
            let (_, radius) = overlap.chebyshev_center().unwrap();
            assert!(radius > 1e-5, "lens {p} overlap radius {radius}");
        }
    }

    #[test]
    fn partial_arc_marks_active_sectors() {
        let arc = Arc {
            x_o: 0.0,
            y_o: 0.0,
            r_c: 1.0,
            angle_start: 0.0,
            angle_end: PI / 2.0,
        };
        let approx =
            circular_feasible_sectors(&arc, Tolerance::new(0.2).unwrap(), 8, 10, 0.0).unwrap();
        assert!(approx.active[0] && approx.active[1] && approx.active[2]);
        assert!(!approx.active[4]);
    }
}
