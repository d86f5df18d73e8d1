//! Contouring-error-bounded model predictive control for biaxial switched
//! linear systems.
//!
//! The library is organized around an offline/online split. Offline,
//! [`contour`] approximates the feasible region around a desired path by
//! polytopes, and [`invariance`] computes a family of switch control
//! invariant sets over the mode-transition graph. Online, [`mpc`] solves a
//! small condensed QP at every sample to keep the end effector within the
//! prescribed contouring tolerance under admissible mode switching.
//! [`gantry`] provides a synthetic dual-drive plant and the closed-loop
//! experiment assembly, and [`cli`] the operator surface.

pub mod cli;
pub mod contour;
pub mod gantry;
pub mod invariance;
pub mod mpc;
pub mod numsolve;
pub mod polytope;

/// Repo-wide numerical tolerances. The downstream set logic depends on
/// these exact values; do not loosen them locally.
pub mod tol {
    /// Primal feasibility tolerance for LP/QP results.
    pub const FEAS_TOL: f64 = 1e-8;
    /// KKT stationarity tolerance for LP/QP results.
    pub const OPT_TOL: f64 = 1e-6;
    /// Iteration cap for the LP/QP solvers.
    pub const ITER_CAP: usize = 100_000;
    /// Slack for set membership, containment, and set-equality tests.
    pub const SET_SLACK: f64 = 1e-9;
    /// Residual tolerance for Riccati/Lyapunov fixed points.
    pub const MATRIX_EQ_TOL: f64 = 1e-9;
    /// Per-elimination offset tightening used inside backward reachable
    /// set projections. Tightening keeps every computed set a subset of
    /// the exact one (sound for invariance) while making near-redundant
    /// sliver facets provably redundant, which is what keeps the
    /// Fourier-Motzkin intermediates from accumulating junk rows over
    /// long dwell chains.
    pub const INVARIANCE_SHRINK: f64 = 1e-6;
}

use nalgebra::{DMatrix, DVector};

/// Dense column vector of `f64`.
pub type Vector = DVector<f64>;
/// Dense matrix of `f64`.
pub type Matrix = DMatrix<f64>;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("LP/QP solver failed to converge: {0}")]
    NumericalFailure(String),
    #[error("problem infeasible: {0}")]
    Infeasible(String),
    #[error("problem unbounded: {0}")]
    Unbounded(String),
    #[error("empty polytope: {0}")]
    EmptySet(String),
    #[error("unbounded polytope: {0}")]
    UnboundedSet(String),
    #[error("projection row blow-up: {0}")]
    ProjectionBlowUp(String),
    #[error("mode {mode}: {msg}")]
    ModeError { mode: usize, msg: String },
    #[error("dwell-time violation: {0}")]
    DwellViolation(String),
    #[error("MPC infeasible at step {step}: {msg}")]
    MpcInfeasible { step: usize, msg: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
