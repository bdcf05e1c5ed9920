//! Safety filtering: turning halfspace constraints into controls.
//!
//! All filters share one currency: the halfspace `a . u >= b` over the
//! 2-D control space. The quadratic-program filter projects a reference
//! control onto the intersection of halfspaces and a control box; the
//! majority-vote variants solve (or approximate) the same projection under
//! an at-least-k-of-n constraint.

pub mod miqp;
pub mod qp;
pub mod rollout;
pub mod strategies;

pub use miqp::miqp_bruteforce;
pub use qp::{kkt_residual, qp_filter};
pub use rollout::{RolloutReport, SeedOutcome};
pub use strategies::heuristic_on_constraints;

use crate::math::Vec2;
use serde::{Deserialize, Serialize};

/// Halfspace constraint on controls: the safe set is `{u : a . u >= b}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceConstraint {
    pub a: Vec2,
    pub b: f64,
}

impl HalfspaceConstraint {
    pub fn new(a: Vec2, b: f64) -> Self {
        HalfspaceConstraint { a, b }
    }

    /// Signed margin `a . u - b`; nonnegative means satisfied.
    pub fn margin(&self, u: Vec2) -> f64 {
        self.a.dot(u) - self.b
    }

    pub fn satisfied(&self, u: Vec2) -> bool {
        self.margin(u) >= 0.0
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.b.is_finite()
    }
}

/// Axis-aligned bounds on the control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBox {
    pub min: Vec2,
    pub max: Vec2,
}

impl ControlBox {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        assert!(min.x < max.x && min.y < max.y, "degenerate control box");
        ControlBox { min, max }
    }

    /// Symmetric box `[-limit, limit]^2`, the simulator's speed limits.
    pub fn symmetric(limit: f64) -> Self {
        ControlBox::new(Vec2::new(-limit, -limit), Vec2::new(limit, limit))
    }

    pub fn contains(&self, u: Vec2, tol: f64) -> bool {
        u.x >= self.min.x - tol
            && u.x <= self.max.x + tol
            && u.y >= self.min.y - tol
            && u.y <= self.max.y + tol
    }

    pub fn clamp(&self, u: Vec2) -> Vec2 {
        Vec2::new(
            u.x.clamp(self.min.x, self.max.x),
            u.y.clamp(self.min.y, self.max.y),
        )
    }

    /// The four faces as halfspace constraints.
    pub fn faces(&self) -> [HalfspaceConstraint; 4] {
        [
            HalfspaceConstraint::new(Vec2::new(1.0, 0.0), self.min.x),
            HalfspaceConstraint::new(Vec2::new(-1.0, 0.0), -self.max.x),
            HalfspaceConstraint::new(Vec2::new(0.0, 1.0), self.min.y),
            HalfspaceConstraint::new(Vec2::new(0.0, -1.0), -self.max.y),
        ]
    }
}

/// Which computation produced a filter result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    ClosedForm,
    ActiveSet,
    MiqpBruteforce,
    Heuristic,
}

/// Outcome of one filtering query.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterResult {
    pub u_out: Vec2,
    /// False iff the reference control was returned unchanged.
    pub modified: bool,
    /// Indices (into the caller's constraint list) active at the solution.
    pub active_constraints: Vec<usize>,
    /// False when no control satisfied the constraints; `u_out` is then the
    /// least-squares violation minimizer.
    pub feasible: bool,
    pub solver: SolverKind,
}

impl FilterResult {
    pub fn passthrough(u_ref: Vec2, solver: SolverKind) -> Self {
        FilterResult {
            u_out: u_ref,
            modified: false,
            active_constraints: Vec::new(),
            feasible: true,
            solver,
        }
    }

    pub fn cost(&self, u_ref: Vec2) -> f64 {
        (self.u_out - u_ref).norm_sq()
    }
}
