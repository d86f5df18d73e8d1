//! H-representation polytope algebra: intersection, emptiness,
//! containment, redundancy removal, and exact orthogonal projection by
//! Fourier-Motzkin elimination.
//!
//! A polytope is the set {x : Ax <= b}. Rows are normalized to unit
//! facet normals on construction so all tolerance comparisons are
//! scale-free. Values are immutable after construction and every
//! operation is pure.

use crate::numsolve::{find_feasible, solve_lp, LpProblem, SolveStatus};
use crate::tol::SET_SLACK;
use crate::{Error, Matrix, Result, Vector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;

/// Intermediate row cap for Fourier-Motzkin elimination.
pub const PROJECTION_ROW_CAP: usize = 20_000;

/// Capacity of the ancestry bitsets used for Chernikov/Imbert pruning
/// during projection.
const ROW_MASK_BITS: usize = 512;

/// Fixed-width bitset over the starting rows of a projection.
#[derive(Clone, Copy)]
struct RowMask([u64; ROW_MASK_BITS / 64]);

impl RowMask {
    fn single(i: usize) -> Self {
        let mut w = [0u64; ROW_MASK_BITS / 64];
        w[i / 64] |= 1 << (i % 64);
        RowMask(w)
    }

    fn union(&self, other: &RowMask) -> RowMask {
        let mut w = self.0;
        for (wk, ok) in w.iter_mut().zip(other.0.iter()) {
            *wk |= ok;
        }
        RowMask(w)
    }

    fn count(&self) -> usize {
        self.0.iter().map(|v| v.count_ones() as usize).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Polytope {
    a: Matrix,
    b: Vector,
    dim: usize,
    /// Set when construction saw a contradictory all-zero row
    /// (0'x <= b with b < 0).
    trivially_empty: bool,
}

impl Polytope {
    /// Builds a polytope from raw rows. Rows are unit-normalized;
    /// all-zero rows with nonnegative offset are dropped; an all-zero row
    /// with negative offset marks the whole set empty.
    pub fn new(a: Matrix, b: Vector) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::DimensionMismatch(
                "constraint matrix and offset vector row counts differ".into(),
            ));
        }
        if a.iter().any(|v| !v.is_finite()) || b.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite polytope entry".into()));
        }
        let dim = a.ncols();
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(a.nrows());
        let mut offs: Vec<f64> = Vec::with_capacity(a.nrows());
        let mut trivially_empty = false;
        for i in 0..a.nrows() {
            let norm = a.row(i).norm();
            if norm <= 1e-12 {
                if b[i] < -1e-12 {
                    trivially_empty = true;
                }
                continue;
            }
            rows.push((0..dim).map(|j| a[(i, j)] / norm).collect());
            offs.push(b[i] / norm);
        }
        let m = rows.len();
        let mut am = Matrix::zeros(m, dim);
        for (i, r) in rows.iter().enumerate() {
            for j in 0..dim {
                am[(i, j)] = r[j];
            }
        }
        Ok(Self {
            a: am,
            b: Vector::from_vec(offs),
            dim,
            trivially_empty,
        })
    }

    /// The whole space (no constraints).
    pub fn universe(dim: usize) -> Self {
        Self {
            a: Matrix::zeros(0, dim),
            b: Vector::zeros(0),
            dim,
            trivially_empty: false,
        }
    }

    /// Canonical empty polytope of the given dimension.
    pub fn empty(dim: usize) -> Self {
        Self {
            a: Matrix::zeros(0, dim),
            b: Vector::zeros(0),
            dim,
            trivially_empty: true,
        }
    }

    /// Axis-aligned box [lo_i, hi_i].
    pub fn from_box(lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch("box bounds".into()));
        }
        let dim = lo.len();
        let mut a = Matrix::zeros(2 * dim, dim);
        let mut b = Vector::zeros(2 * dim);
        for i in 0..dim {
            a[(i, i)] = 1.0;
            b[i] = hi[i];
            a[(dim + i, i)] = -1.0;
            b[dim + i] = -lo[i];
        }
        Self::new(a, b)
    }

    /// Single halfspace a'x <= b.
    pub fn halfspace(normal: &[f64], offset: f64) -> Result<Self> {
        Self::new(
            Matrix::from_row_slice(1, normal.len(), normal),
            Vector::from_row_slice(&[offset]),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn rows(&self) -> (&Matrix, &Vector) {
        (&self.a, &self.b)
    }

    pub fn is_trivially_empty(&self) -> bool {
        self.trivially_empty
    }

    /// Set intersection: concatenates both constraint lists, then
    /// redundancy-reduces.
    pub fn intersect(&self, other: &Polytope) -> Result<Polytope> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch("intersect".into()));
        }
        if self.trivially_empty || other.trivially_empty {
            return Ok(Polytope::empty(self.dim));
        }
        let raw = self.stack(other);
        if raw.is_empty()? {
            return Ok(Polytope::empty(self.dim));
        }
        raw.remove_redundant()
    }

    /// Row concatenation without reduction.
    fn stack(&self, other: &Polytope) -> Polytope {
        let m = self.a.nrows() + other.a.nrows();
        let mut a = Matrix::zeros(m, self.dim);
        let mut b = Vector::zeros(m);
        a.view_mut((0, 0), (self.a.nrows(), self.dim)).copy_from(&self.a);
        a.view_mut((self.a.nrows(), 0), (other.a.nrows(), self.dim))
            .copy_from(&other.a);
        b.rows_mut(0, self.b.len()).copy_from(&self.b);
        b.rows_mut(self.b.len(), other.b.len()).copy_from(&other.b);
        Polytope {
            a,
            b,
            dim: self.dim,
            trivially_empty: self.trivially_empty || other.trivially_empty,
        }
    }

    /// Emptiness, decided by one feasibility LP.
    pub fn is_empty(&self) -> Result<bool> {
        if self.trivially_empty {
            return Ok(true);
        }
        if self.a.nrows() == 0 {
            return Ok(false);
        }
        Ok(find_feasible(&self.a, &self.b, &Matrix::zeros(0, self.dim), &Vector::zeros(0))?
            .is_none())
    }

    /// Pointwise membership with the closed-set slack.
    pub fn contains_point(&self, x: &Vector) -> bool {
        if self.trivially_empty {
            return false;
        }
        if x.len() != self.dim {
            return false;
        }
        if self.a.nrows() == 0 {
            return true;
        }
        let ax = &self.a * x;
        (0..ax.len()).all(|i| ax[i] <= self.b[i] + SET_SLACK)
    }

    /// True iff `other` is a subset of `self`, decided by maximizing each
    /// facet function of `self` over `other`.
    pub fn contains_set(&self, other: &Polytope) -> Result<bool> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch("contains_set".into()));
        }
        if other.trivially_empty || other.is_empty()? {
            return Ok(true);
        }
        if self.trivially_empty {
            return Ok(false);
        }
        for i in 0..self.a.nrows() {
            let c = -self.a.row(i).transpose();
            let lp = LpProblem::new(c, other.a.clone(), other.b.clone());
            match solve_lp(&lp)? {
                SolveStatus::Optimal { objective, .. } => {
                    if -objective > self.b[i] + SET_SLACK {
                        return Ok(false);
                    }
                }
                // Facet violated at infinity.
                SolveStatus::Unbounded => return Ok(false),
                SolveStatus::Infeasible => return Ok(true),
                SolveStatus::NumericalFailure => {
                    return Err(Error::NumericalFailure("containment LP failed".into()))
                }
            }
        }
        Ok(true)
    }

    /// Semantic set equality (mutual containment with slack).
    pub fn set_eq(&self, other: &Polytope) -> Result<bool> {
        Ok(self.contains_set(other)? && other.contains_set(self)?)
    }

    /// Row indices surviving the duplicate/dominated-parallel pre-pass:
    /// of any group of rows with (near-)parallel normals, only the one
    /// with the smallest offset survives. Cheap pre-pass before LP-based
    /// reduction.
    fn dedup_indices(&self) -> Vec<usize> {
        let m = self.a.nrows();
        let mut keep: Vec<usize> = Vec::with_capacity(m);
        'outer: for i in 0..m {
            for slot in 0..keep.len() {
                let k = keep[slot];
                let dot = self.a.row(i).dot(&self.a.row(k));
                if dot > 1.0 - 1e-12 {
                    // Parallel normals: the smaller offset dominates.
                    if self.b[i] < self.b[k] {
                        keep[slot] = i;
                    }
                    continue 'outer;
                }
            }
            keep.push(i);
        }
        keep
    }

    fn select_rows(&self, idx: &[usize]) -> Polytope {
        let mut a = Matrix::zeros(idx.len(), self.dim);
        let mut b = Vector::zeros(idx.len());
        for (r, &i) in idx.iter().enumerate() {
            for j in 0..self.dim {
                a[(r, j)] = self.a[(i, j)];
            }
            b[r] = self.b[i];
        }
        Polytope {
            a,
            b,
            dim: self.dim,
            trivially_empty: self.trivially_empty,
        }
    }

    /// Removes every redundant constraint. The point set is unchanged;
    /// each surviving row is certified irredundant by an LP.
    pub fn remove_redundant(&self) -> Result<Polytope> {
        match self.reduced_with_indices()? {
            None => Ok(Polytope::empty(self.dim)),
            Some((p, _)) => Ok(p),
        }
    }

    /// [`Self::remove_redundant`] that also reports which rows of `self`
    /// survived (`None` means the set is trivially empty).
    fn reduced_with_indices(&self) -> Result<Option<(Polytope, Vec<usize>)>> {
        if self.trivially_empty {
            return Ok(None);
        }
        let dedup_idx = self.dedup_indices();
        let deduped = self.select_rows(&dedup_idx);
        let idx = deduped.reduce_indices()?;
        let orig: Vec<usize> = idx.iter().map(|&i| dedup_idx[i]).collect();
        Ok(Some((deduped.select_rows(&idx), orig)))
    }

    /// LP-certified redundancy scan over already-deduplicated rows,
    /// returning the kept indices.
    ///
    /// Each row LP (maximize the row over the others) is solved by
    /// constraint generation: start from the small seed of rows already
    /// found irredundant, and add the most violated remaining row until
    /// the optimizer is feasible for everything. Maximizing over a
    /// subset bounds the full maximum from above, so a subset optimum
    /// within the offset certifies redundancy directly, and tableau
    /// sizes stay small even when a projection step produces thousands
    /// of rows. Undecidable rows (solver failure, or an `Infeasible`
    /// verdict, which on these near-degenerate systems is a phase-1
    /// breakdown rather than information) are kept: retaining a
    /// redundant constraint never changes the set.
    fn reduce_indices(&self) -> Result<Vec<usize>> {
        let m = self.a.nrows();
        if m <= 1 {
            return Ok((0..m).collect());
        }
        let mut keep: Vec<bool> = vec![true; m];
        let mut seed: Vec<usize> = Vec::new();
        // Witness pool: optimizers from earlier row LPs. Each entry is
        // A*point for a point feasible for the rows kept at the time. A
        // pool point certifies row i irredundant without an LP when it
        // violates row i but satisfies every other kept row (rows are
        // only ever removed, so a feasible witness stays usable).
        let mut pool: Vec<Vector> = Vec::new();
        'rows: for i in 0..m {
            for ap in &pool {
                if ap[i] > self.b[i] + SET_SLACK
                    && (0..m).all(|k| {
                        k == i || !keep[k] || ap[k] <= self.b[k] + crate::tol::FEAS_TOL
                    })
                {
                    seed.push(i);
                    continue 'rows;
                }
            }
            let c = -self.a.row(i).transpose();
            // Working set: seed rows plus row i relaxed by 1 (keeps the
            // LP bounded in the common case).
            let mut w: Vec<usize> = seed.clone();
            w.push(i);
            let mut fill = 0usize;
            let mut redundant = false;
            'cg: for _round in 0..m {
                let mut g = Matrix::zeros(w.len(), self.dim);
                let mut h = Vector::zeros(w.len());
                for (r, &k) in w.iter().enumerate() {
                    for j in 0..self.dim {
                        g[(r, j)] = self.a[(k, j)];
                    }
                    h[r] = if k == i { self.b[k] + 1.0 } else { self.b[k] };
                }
                match solve_lp(&LpProblem::new(c.clone(), g, h))? {
                    SolveStatus::Optimal { z, objective, .. } => {
                        if -objective <= self.b[i] + SET_SLACK {
                            // Subset maximum already within the offset:
                            // redundant over the full set a fortiori.
                            redundant = true;
                            break 'cg;
                        }
                        let az = &self.a * &z;
                        let mut worst = (crate::tol::FEAS_TOL, None);
                        for k in 0..m {
                            if k == i || !keep[k] || w.contains(&k) {
                                continue;
                            }
                            let v = az[k] - self.b[k];
                            if v > worst.0 {
                                worst = (v, Some(k));
                            }
                        }
                        match worst.1 {
                            Some(k) => w.push(k),
                            None => {
                                // Optimizer feasible for every kept row:
                                // the subset optimum is the true one.
                                if pool.len() < 64 {
                                    pool.push(az);
                                }
                                break 'cg;
                            }
                        }
                    }
                    SolveStatus::Unbounded => {
                        // The working set does not bound this direction
                        // yet; pull in more rows.
                        let before = w.len();
                        while fill < m && w.len() < before + 16 {
                            let k = fill;
                            fill += 1;
                            if k != i && keep[k] && !w.contains(&k) {
                                w.push(k);
                            }
                        }
                        if w.len() == before {
                            break 'cg; // genuinely unbounded: irredundant
                        }
                    }
                    SolveStatus::Infeasible | SolveStatus::NumericalFailure => break 'cg,
                }
            }
            if redundant {
                keep[i] = false;
            } else {
                seed.push(i);
            }
        }
        Ok((0..m).filter(|&i| keep[i]).collect())
    }

    /// Uniformly tightens every row offset by `delta` (rows are unit
    /// normal, so this is a Euclidean inward offset of `delta`).
    pub fn shrink(&self, delta: f64) -> Polytope {
        Polytope {
            a: self.a.clone(),
            b: self.b.map(|v| v - delta),
            dim: self.dim,
            trivially_empty: self.trivially_empty,
        }
    }

    /// Exact orthogonal projection onto `keep_dims` via Fourier-Motzkin
    /// elimination of the dropped coordinates, with redundancy removal
    /// after every elimination step.
    pub fn project(&self, keep_dims: &[usize]) -> Result<Polytope> {
        self.project_within(keep_dims, 0.0)
    }

    /// Projection with an inner-approximation knob: every elimination
    /// step tightens the intermediate rows by `shrink_step` before
    /// redundancy removal. The result is contained in the exact
    /// projection, and lies within (number of eliminated coordinates) x
    /// `shrink_step` of it. Nonzero values keep long chains of
    /// reach-set computations from accumulating sliver facets.
    pub fn project_within(&self, keep_dims: &[usize], shrink_step: f64) -> Result<Polytope> {
        if keep_dims.windows(2).any(|w| w[0] >= w[1])
            || keep_dims.iter().any(|&d| d >= self.dim)
        {
            return Err(Error::InvalidArgument(
                "keep_dims must be strictly increasing and within range".into(),
            ));
        }
        if self.trivially_empty {
            return Ok(Polytope::empty(keep_dims.len()));
        }
        if self.is_empty()? {
            return Ok(Polytope::empty(keep_dims.len()));
        }
        let drop: Vec<usize> = (0..self.dim).filter(|d| !keep_dims.contains(d)).collect();
        let mut cur = self.clone();
        let mut remaining = drop;
        // Chernikov/Imbert ancestry pruning: each row carries the set of
        // rows of `self` it combines (bitset; disabled past 512 starting
        // rows). After eliminating k coordinates, any derived row that
        // mixes more than k + 1 original rows is redundant and can be
        // dropped without an LP.
        let m0 = cur.a.nrows();
        let mut masks: Option<Vec<RowMask>> = (m0 <= ROW_MASK_BITS)
            .then(|| (0..m0).map(RowMask::single).collect());
        let mut eliminated = 0usize;
        while !remaining.is_empty() {
            // Greedy order: eliminate the coordinate with the fewest
            // positive*negative row products.
            let (pick_idx, _) = remaining
                .iter()
                .enumerate()
                .map(|(t, &d)| {
                    let mut pos = 0usize;
                    let mut neg = 0usize;
                    for i in 0..cur.a.nrows() {
                        let v = cur.a[(i, d)];
                        if v > 1e-11 {
                            pos += 1;
                        } else if v < -1e-11 {
                            neg += 1;
                        }
                    }
                    (t, pos * neg + pos + neg)
                })
                .min_by_key(|&(_, cost)| cost)
                .expect("nonempty remaining");
            let d = remaining.remove(pick_idx);
            let (mut next, parents) = cur.eliminate_coord_tracked(d)?;
            eliminated += 1;
            if let Some(ms) = masks.take() {
                let derived: Vec<RowMask> =
                    parents.iter().map(|&(p, q)| ms[p].union(&ms[q])).collect();
                let keep: Vec<usize> = (0..derived.len())
                    .filter(|&i| derived[i].count() <= eliminated + 1)
                    .collect();
                if keep.len() < derived.len() {
                    next = next.select_rows(&keep);
                }
                masks = Some(keep.iter().map(|&i| derived[i]).collect());
            }
            if next.trivially_empty {
                return Ok(Polytope::empty(keep_dims.len()));
            }
            if shrink_step > 0.0 {
                next = next.shrink(shrink_step);
            }
            match next.reduced_with_indices()? {
                None => return Ok(Polytope::empty(keep_dims.len())),
                Some((reduced, idx)) => {
                    if let Some(ms) = masks.take() {
                        masks = Some(idx.iter().map(|&i| ms[i]).collect());
                    }
                    cur = reduced;
                }
            }
            // Renumber the still-to-drop coordinates.
            for r in remaining.iter_mut() {
                if *r > d {
                    *r -= 1;
                }
            }
        }
        // cur is now over the kept coordinates in their original order.
        Ok(cur)
    }

    /// Eliminates coordinate `d`, returning a polytope of dimension
    /// self.dim - 1 together with, for each output row, the indices of
    /// the one or two rows of `self` it came from. Rows that cancel to
    /// zero are dropped (marking the set empty if contradictory), so the
    /// parent list stays aligned with the output rows.
    fn eliminate_coord_tracked(&self, d: usize) -> Result<(Polytope, Vec<(usize, usize)>)> {
        let m = self.a.nrows();
        let mut zero_rows = Vec::new();
        let mut pos_rows = Vec::new();
        let mut neg_rows = Vec::new();
        for i in 0..m {
            let v = self.a[(i, d)];
            if v > 1e-11 {
                pos_rows.push(i);
            } else if v < -1e-11 {
                neg_rows.push(i);
            } else {
                zero_rows.push(i);
            }
        }
        let out_rows = zero_rows.len() + pos_rows.len() * neg_rows.len();
        if out_rows > PROJECTION_ROW_CAP {
            return Err(Error::ProjectionBlowUp(format!(
                "{out_rows} intermediate rows exceeds cap {PROJECTION_ROW_CAP}; \
                 consider reordering eliminated coordinates"
            )));
        }
        let nd = self.dim - 1;
        let strip = |i: usize| -> (Vec<f64>, f64) {
            let mut row = Vec::with_capacity(nd);
            for j in 0..self.dim {
                if j != d {
                    row.push(self.a[(i, j)]);
                }
            }
            (row, self.b[i])
        };
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(out_rows);
        let mut offs: Vec<f64> = Vec::with_capacity(out_rows);
        let mut parents: Vec<(usize, usize)> = Vec::with_capacity(out_rows);
        let mut trivially_empty = self.trivially_empty;
        let mut push = |row: Vec<f64>, off: f64, pp: (usize, usize)| {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm <= 1e-12 {
                if off < -1e-12 {
                    trivially_empty = true;
                }
                return;
            }
            rows.push(row.iter().map(|v| v / norm).collect());
            offs.push(off / norm);
            parents.push(pp);
        };
        for &i in &zero_rows {
            let (row, off) = strip(i);
            push(row, off, (i, i));
        }
        for &ip in &pos_rows {
            let cp = self.a[(ip, d)];
            for &inn in &neg_rows {
                let cn = self.a[(inn, d)]; // negative
                // (-cn) * row_p + cp * row_n cancels coordinate d.
                let (rp, bp) = strip(ip);
                let (rn, bn) = strip(inn);
                let row: Vec<f64> =
                    (0..nd).map(|j| -cn * rp[j] + cp * rn[j]).collect();
                push(row, -cn * bp + cp * bn, (ip, inn));
            }
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) || offs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite polytope entry".into()));
        }
        let mut am = Matrix::zeros(rows.len(), nd);
        for (i, r) in rows.iter().enumerate() {
            for j in 0..nd {
                am[(i, j)] = r[j];
            }
        }
        Ok((
            Polytope {
                a: am,
                b: Vector::from_vec(offs),
                dim: nd,
                trivially_empty,
            },
            parents,
        ))
    }

    /// Largest inscribed ball: returns (center, radius).
    pub fn chebyshev_center(&self) -> Result<(Vector, f64)> {
        if self.trivially_empty || self.is_empty()? {
            return Err(Error::EmptySet("chebyshev_center of empty set".into()));
        }
        let m = self.a.nrows();
        // Variables (x, r); rows are unit-normal so a_i'x + r <= b_i.
        let mut g = Matrix::zeros(m + 1, self.dim + 1);
        let mut h = Vector::zeros(m + 1);
        for i in 0..m {
            for j in 0..self.dim {
                g[(i, j)] = self.a[(i, j)];
            }
            g[(i, self.dim)] = 1.0;
            h[i] = self.b[i];
        }
        g[(m, self.dim)] = -1.0; // r >= 0
        let mut c = Vector::zeros(self.dim + 1);
        c[self.dim] = -1.0; // maximize r
        match solve_lp(&LpProblem::new(c, g, h))? {
            SolveStatus::Optimal { z, .. } => {
                let center = z.rows(0, self.dim).into_owned();
                Ok((center, z[self.dim]))
            }
            SolveStatus::Unbounded => Err(Error::UnboundedSet(
                "chebyshev_center of unbounded set".into(),
            )),
            SolveStatus::Infeasible => Err(Error::EmptySet("chebyshev_center".into())),
            SolveStatus::NumericalFailure => {
                Err(Error::NumericalFailure("chebyshev LP failed".into()))
            }
        }
    }

    /// Per-coordinate bounds, by 2*dim LPs. Errors when unbounded.
    pub fn bounding_box(&self) -> Result<(Vector, Vector)> {
        let mut lo = Vector::zeros(self.dim);
        let mut hi = Vector::zeros(self.dim);
        for j in 0..self.dim {
            for (sign, out) in [(1.0, &mut lo), (-1.0, &mut hi)] {
                let mut c = Vector::zeros(self.dim);
                c[j] = sign;
                match solve_lp(&LpProblem::new(c, self.a.clone(), self.b.clone()))? {
                    SolveStatus::Optimal { z, .. } => out[j] = z[j],
                    SolveStatus::Unbounded => {
                        return Err(Error::UnboundedSet(format!(
                            "coordinate {j} unbounded"
                        )))
                    }
                    SolveStatus::Infeasible => {
                        return Err(Error::EmptySet("bounding_box of empty set".into()))
                    }
                    SolveStatus::NumericalFailure => {
                        return Err(Error::NumericalFailure("bounding-box LP failed".into()))
                    }
                }
            }
        }
        Ok((lo, hi))
    }

    /// Draws `n` deterministic pseudo-uniform samples. Rejection from the
    /// bounding box, with a hit-and-run fallback when the acceptance rate
    /// is too low.
    pub fn sample_uniform(&self, n: usize, seed: u64) -> Result<Vec<Vector>> {
        if self.trivially_empty || self.is_empty()? {
            return Err(Error::EmptySet("sample_uniform of empty set".into()));
        }
        let (lo, hi) = self.bounding_box()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(n);
        let mut tries = 0usize;
        while out.len() < n && tries < 200.max(20 * n) {
            tries += 1;
            let x = Vector::from_fn(self.dim, |j, _| {
                if hi[j] - lo[j] <= 1e-15 {
                    lo[j]
                } else {
                    rng.gen_range(lo[j]..=hi[j])
                }
            });
            if self.contains_point(&x) {
                out.push(x);
            }
            // Poor acceptance: give up on rejection early.
            if tries >= 500 && out.len() * 20 < tries {
                break;
            }
        }
        if out.len() >= n {
            out.truncate(n);
            return Ok(out);
        }
        // Hit-and-run from the Chebyshev center.
        out.clear();
        let (mut x, _) = self.chebyshev_center()?;
        let thin = 4 * self.dim.max(1);
        let burn_in = 100;
        let total = burn_in + n * thin;
        let mut produced = 0usize;
        for step in 0..total {
            // random direction
            let mut d = Vector::from_fn(self.dim, |_, _| {
                // Box-Muller using two uniforms
                let u1: f64 = rng.gen_range(1e-12..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            });
            let norm = d.norm();
            if norm <= 1e-14 {
                continue;
            }
            d /= norm;
            let ax = &self.a * &x;
            let ad = &self.a * &d;
            let mut t_lo = f64::NEG_INFINITY;
            let mut t_hi = f64::INFINITY;
            for i in 0..ad.len() {
                let slack = self.b[i] - ax[i];
                if ad[i] > 1e-14 {
                    t_hi = t_hi.min(slack / ad[i]);
                } else if ad[i] < -1e-14 {
                    t_lo = t_lo.max(slack / ad[i]);
                }
            }
            if !(t_lo.is_finite() && t_hi.is_finite()) {
                return Err(Error::UnboundedSet("hit-and-run chord unbounded".into()));
            }
            if t_hi > t_lo {
                let t = rng.gen_range(t_lo..=t_hi);
                x = &x + t * &d;
            }
            if step >= burn_in && (step - burn_in) % thin == thin - 1 {
                out.push(x.clone());
                produced += 1;
                if produced == n {
                    break;
                }
            }
        }
        if out.len() < n {
            return Err(Error::NumericalFailure("sampler produced too few points".into()));
        }
        Ok(out)
    }

    /// Pullback through a linear output map: {x : A(Cx) <= b}.
    pub fn preimage(&self, c_map: &Matrix) -> Result<Polytope> {
        if c_map.nrows() != self.dim {
            return Err(Error::DimensionMismatch("preimage map".into()));
        }
        let a = &self.a * c_map;
        Polytope::new(a, self.b.clone())
    }

    /// Cartesian product with another polytope (block-diagonal rows).
    pub fn product(&self, other: &Polytope) -> Polytope {
        let dim = self.dim + other.dim;
        let m = self.a.nrows() + other.a.nrows();
        let mut a = Matrix::zeros(m, dim);
        let mut b = Vector::zeros(m);
        a.view_mut((0, 0), (self.a.nrows(), self.dim)).copy_from(&self.a);
        a.view_mut((self.a.nrows(), self.dim), (other.a.nrows(), other.dim))
            .copy_from(&other.a);
        b.rows_mut(0, self.b.len()).copy_from(&self.b);
        b.rows_mut(self.b.len(), other.b.len()).copy_from(&other.b);
        Polytope {
            a,
            b,
            dim,
            trivially_empty: self.trivially_empty || other.trivially_empty,
        }
    }

    /// Text form: "dim m" header then one row per line with >= 15
    /// significant digits.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.dim, self.a.nrows());
        for i in 0..self.a.nrows() {
            for j in 0..self.dim {
                let _ = write!(s, "{:.16e} ", self.a[(i, j)]);
            }
            let _ = writeln!(s, "{:.16e}", self.b[i]);
        }
        s
    }

    /// Parses the text form produced by [`Polytope::to_text`]. Consumes
    /// lines from the iterator so several blocks can share one stream.
    pub fn from_lines<'a, I: Iterator<Item = &'a str>>(lines: &mut I) -> Result<Polytope> {
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("missing polytope header".into()))?;
        let mut it = header.split_whitespace();
        let dim: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("bad polytope dim".into()))?;
        let m: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::Parse("bad polytope row count".into()))?;
        let mut a = Matrix::zeros(m, dim);
        let mut b = Vector::zeros(m);
        for i in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse("truncated polytope block".into()))?;
            let vals: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse(format!("bad polytope row: {e}")))?;
            if vals.len() != dim + 1 {
                return Err(Error::Parse("wrong polytope row length".into()));
            }
            for j in 0..dim {
                a[(i, j)] = vals[j];
            }
            b[i] = vals[dim];
        }
        Polytope::new(a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_box(dim: usize) -> Polytope {
        Polytope::from_box(&vec![-1.0; dim], &vec![1.0; dim]).unwrap()
    }

    #[test]
    fn intersect_boxes() {
        let p = unit_box(2);
        let q = Polytope::from_box(&[0.0, 0.0], &[2.0, 2.0]).unwrap();
        let r = p.intersect(&q).unwrap();
        let expect = Polytope::from_box(&[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!(r.set_eq(&expect).unwrap());
    }

    #[test]
    fn intersect_idempotent() {
        let p = unit_box(3);
        let r = p.intersect(&p).unwrap();
        assert!(r.set_eq(&p).unwrap());
    }

    #[test]
    fn intersect_disjoint_is_empty() {
        let p = Polytope::from_box(&[0.0], &[1.0]).unwrap();
        let q = Polytope::from_box(&[2.0], &[3.0]).unwrap();
        assert!(p.intersect(&q).unwrap().is_empty().unwrap());
    }

    #[test]
    fn emptiness_cases() {
        let contradictory = Polytope::new(
            Matrix::from_row_slice(2, 1, &[1.0, -1.0]),
            Vector::from_row_slice(&[-1.0, -1.0]),
        )
        .unwrap();
        assert!(contradictory.is_empty().unwrap());
        assert!(!unit_box(2).is_empty().unwrap());
        // single point {0}
        let point = Polytope::new(
            Matrix::from_row_slice(2, 1, &[1.0, -1.0]),
            Vector::from_row_slice(&[0.0, 0.0]),
        )
        .unwrap();
        assert!(!point.is_empty().unwrap());
    }

    #[test]
    fn zero_row_handling() {
        let dropped = Polytope::new(
            Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
            Vector::from_row_slice(&[1.0, 2.0]),
        )
        .unwrap();
        assert_eq!(dropped.num_rows(), 1);
        let empty = Polytope::new(
            Matrix::from_row_slice(1, 1, &[0.0]),
            Vector::from_row_slice(&[-1.0]),
        )
        .unwrap();
        assert!(empty.is_trivially_empty());
        assert!(empty.is_empty().unwrap());
    }

    #[test]
    fn containment_cases() {
        let small = unit_box(2);
        let big = Polytope::from_box(&[-1.0, -1.0], &[2.0, 2.0]).unwrap();
        assert!(big.contains_set(&small).unwrap());
        assert!(!small.contains_set(&big).unwrap());
        assert!(small.contains_set(&small).unwrap());
    }

    #[test]
    fn point_membership() {
        let b = unit_box(2);
        assert!(b.contains_point(&Vector::from_row_slice(&[0.0, 0.0])));
        assert!(!b.contains_point(&Vector::from_row_slice(&[2.0, 0.0])));
        let seg = Polytope::from_box(&[0.0], &[1.0]).unwrap();
        assert!(seg.contains_point(&Vector::from_row_slice(&[1.0])));
    }

    #[test]
    fn redundancy_dominated_halfspace() {
        let p = Polytope::new(
            Matrix::from_row_slice(3, 1, &[1.0, 1.0, -1.0]),
            Vector::from_row_slice(&[1.0, 2.0, 1.0]),
        )
        .unwrap();
        let r = p.remove_redundant().unwrap();
        assert_eq!(r.num_rows(), 2);
        assert!(r.set_eq(&p).unwrap());
    }

    #[test]
    fn redundancy_tight_box_unchanged() {
        let p = unit_box(2);
        let r = p.remove_redundant().unwrap();
        assert_eq!(r.num_rows(), 4);
    }

    #[test]
    fn redundancy_on_duplicated_rows() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(5);
        // random 2-D polytope: unit box plus 30 duplicated random rows
        let mut rows = vec![
            (1.0, 0.0, 1.0),
            (-1.0, 0.0, 1.0),
            (0.0, 1.0, 1.0),
            (0.0, -1.0, 1.0),
        ];
        for _ in 0..15 {
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let off: f64 = rng.gen_range(0.8..3.0);
            rows.push((ang.cos(), ang.sin(), off));
            rows.push((ang.cos(), ang.sin(), off)); // duplicate
        }
        let a = Matrix::from_row_slice(
            rows.len(),
            2,
            &rows.iter().flat_map(|r| [r.0, r.1]).collect::<Vec<_>>(),
        );
        let b = Vector::from_vec(rows.iter().map(|r| r.2).collect());
        let p = Polytope::new(a, b).unwrap();
        let r = p.remove_redundant().unwrap();
        assert!(r.num_rows() <= p.num_rows());
        assert!(r.set_eq(&p).unwrap());
    }

    #[test]
    fn project_box_axis_aligned() {
        let p = Polytope::from_box(&[0.0; 3], &[1.0; 3]).unwrap();
        let q = p.project(&[0, 1]).unwrap();
        let expect = Polytope::from_box(&[0.0; 2], &[1.0; 2]).unwrap();
        assert!(q.set_eq(&expect).unwrap());
    }

    #[test]
    fn project_interval_oracle() {
        // (x,u): -2<=x<=2, -1<=u<=1, -1<=x+u<=1, projected onto x -> [-2,2]
        let a = Matrix::from_row_slice(
            6,
            2,
            &[
                1.0, 0.0, //
                -1.0, 0.0, //
                0.0, 1.0, //
                0.0, -1.0, //
                1.0, 1.0, //
                -1.0, -1.0,
            ],
        );
        let b = Vector::from_row_slice(&[2.0, 2.0, 1.0, 1.0, 1.0, 1.0]);
        let p = Polytope::new(a, b).unwrap();
        let q = p.project(&[0]).unwrap();
        let expect = Polytope::from_box(&[-2.0], &[2.0]).unwrap();
        assert!(q.set_eq(&expect).unwrap());
    }

    #[test]
    fn projection_soundness_sampling() {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(99);
        // random bounded 3-D polytope: unit box intersected with random cuts
        let mut rows = Vec::new();
        for i in 0..3 {
            let mut r = [0.0; 3];
            r[i] = 1.0;
            rows.push((r, 1.0));
            r[i] = -1.0;
            rows.push((r, 1.0));
        }
        for _ in 0..4 {
            let d = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            rows.push((d, rng.gen_range(0.3..1.0)));
        }
        let a = Matrix::from_row_slice(
            rows.len(),
            3,
            &rows.iter().flat_map(|r| r.0).collect::<Vec<_>>(),
        );
        let b = Vector::from_vec(rows.iter().map(|r| r.1).collect());
        let p = Polytope::new(a, b).unwrap();
        let proj = p.project(&[0, 1]).unwrap();
        // every sample of p restricts into proj
        for x in p.sample_uniform(500, 1).unwrap() {
            let y = Vector::from_row_slice(&[x[0], x[1]]);
            assert!(proj.contains_point(&y));
        }
        // every sample of proj lifts into p (feasibility LP over dropped coord)
        for y in proj.sample_uniform(500, 2).unwrap() {
            let (pa, pb) = p.rows();
            // constraints on (z) with x0,x1 fixed: pa[:,2] z <= pb - pa[:,0:2] y
            let mut g = Matrix::zeros(pa.nrows(), 1);
            let mut h = Vector::zeros(pa.nrows());
            for i in 0..pa.nrows() {
                g[(i, 0)] = pa[(i, 2)];
                h[i] = pb[i] - pa[(i, 0)] * y[0] - pa[(i, 1)] * y[1] + 1e-7;
            }
            let feasible = find_feasible(&g, &h, &Matrix::zeros(0, 1), &Vector::zeros(0))
                .unwrap()
                .is_some();
            assert!(feasible);
        }
    }

    #[test]
    fn chebyshev_center_box() {
        let (c, r) = unit_box(2).chebyshev_center().unwrap();
        assert_abs_diff_eq!(c.amax(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn chebyshev_center_right_triangle() {
        // x >= 0, y >= 0, x + y <= 1: inradius 1/(2+sqrt(2))
        let a = Matrix::from_row_slice(3, 2, &[-1.0, 0.0, 0.0, -1.0, 1.0, 1.0]);
        let b = Vector::from_row_slice(&[0.0, 0.0, 1.0]);
        let p = Polytope::new(a, b).unwrap();
        let (_, r) = p.chebyshev_center().unwrap();
        assert_abs_diff_eq!(r, 1.0 / (2.0 + 2.0f64.sqrt()), epsilon = 1e-9);
    }

    #[test]
    fn chebyshev_center_shifted_box() {
        let p = Polytope::from_box(&[2.0, -1.0], &[4.0, 1.0]).unwrap();
        let (c, r) = p.chebyshev_center().unwrap();
        assert_abs_diff_eq!(c[0], 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(c[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn sampling_inside_and_deterministic() {
        let p = unit_box(2);
        let s1 = p.sample_uniform(100, 7).unwrap();
        let s2 = p.sample_uniform(100, 7).unwrap();
        assert_eq!(s1.len(), 100);
        for (a, b) in s1.iter().zip(&s2) {
            assert!(p.contains_point(a));
            assert_eq!(a, b);
        }
    }

    #[test]
    fn sampling_mean_near_center() {
        let p = unit_box(2);
        let s = p.sample_uniform(100_000, 3).unwrap();
        let mut mean = Vector::zeros(2);
        for x in &s {
            mean += x;
        }
        mean /= s.len() as f64;
        assert!(mean.amax() < 0.02, "mean {mean}");
    }

    #[test]
    fn text_roundtrip() {
        let p = unit_box(3);
        let txt = p.to_text();
        let q = Polytope::from_lines(&mut txt.lines()).unwrap();
        assert!(p.set_eq(&q).unwrap());
        assert_eq!(p.to_text(), q.to_text());
    }

    #[test]
    fn membership_preserved_under_ops() {
        use rand::rngs::StdRng;
        use rand::SeedableRng;
        let _rng = StdRng::seed_from_u64(0);
        let p = unit_box(2);
        let q = Polytope::from_box(&[-0.5, -2.0], &[0.5, 2.0]).unwrap();
        let inter = p.intersect(&q).unwrap();
        for x in p.sample_uniform(2000, 11).unwrap() {
            let in_both = p.contains_point(&x) && q.contains_point(&x);
            assert_eq!(inter.contains_point(&x), in_both);
        }
    }
}
