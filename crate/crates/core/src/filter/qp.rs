//! Projection of a reference control onto an intersection of halfspaces.
//!
//! The control space is two-dimensional, so an optimal point has at most
//! two active constraints. The solver enumerates the candidate active
//! sets exactly: the unconstrained point, every single-constraint
//! projection, and every pairwise boundary intersection (box faces
//! included), then keeps the cheapest feasible candidate. On infeasible
//! problems it returns the minimizer of the total squared violation over
//! the box instead, flagged via `feasible = false`.

use super::{ControlBox, FilterResult, HalfspaceConstraint, SolverKind};
use crate::math::Vec2;

const FEAS_TOL: f64 = 1e-9;
const DEGENERATE_NORM: f64 = 1e-12;

/// Minimize `||u - u_ref||^2` subject to `a_i . u >= b_i` and the optional
/// control box.
///
/// Zero-normal constraints are handled per their semantics: `0 . u >= b`
/// with `b <= 0` always holds and is dropped; with `b > 0` it cannot be
/// satisfied and the result is flagged infeasible.
pub fn qp_filter(
    u_ref: Vec2,
    constraints: &[HalfspaceConstraint],
    bounds: Option<&ControlBox>,
) -> FilterResult {
    // Split out degenerate constraints.
    let mut unsatisfiable = false;
    let mut live: Vec<(usize, HalfspaceConstraint)> = Vec::new();
    for (i, c) in constraints.iter().enumerate() {
        if c.a.norm_sq() < DEGENERATE_NORM {
            if c.b > 0.0 {
                unsatisfiable = true;
            }
            // b <= 0: trivially satisfied, dropped.
        } else {
            live.push((i, *c));
        }
    }

    let solver = if constraints.len() == 1 && bounds.is_none() {
        SolverKind::ClosedForm
    } else {
        SolverKind::ActiveSet
    };

    // Full working list: live constraints then box faces.
    let mut work: Vec<HalfspaceConstraint> = live.iter().map(|(_, c)| *c).collect();
    if let Some(b) = bounds {
        work.extend_from_slice(&b.faces());
    }

    let feasible_at = |u: Vec2| work.iter().all(|c| c.margin(u) >= -FEAS_TOL);

    if feasible_at(u_ref) && !unsatisfiable {
        return FilterResult {
            u_out: u_ref,
            modified: false,
            active_constraints: active_indices(&live, u_ref),
            feasible: true,
            solver,
        };
    }

    // Candidate enumeration.
    let mut best: Option<(f64, Vec2)> = None;
    let mut consider = |u: Vec2| {
        if !u.is_finite() || !feasible_at(u) {
            return;
        }
        let cost = (u - u_ref).norm_sq();
        if best.map_or(true, |(c, _)| cost < c) {
            best = Some((cost, u));
        }
    };

    for c in &work {
        consider(project_onto_boundary(u_ref, c));
    }
    for i in 0..work.len() {
        for j in i + 1..work.len() {
            if let Some(u) = boundary_intersection(&work[i], &work[j]) {
                consider(u);
            }
        }
    }

    match best {
        Some((_, u)) if !unsatisfiable => FilterResult {
            u_out: u,
            modified: true,
            active_constraints: active_indices(&live, u),
            feasible: true,
            solver,
        },
        _ => {
            // No feasible point (or a requested impossibility): return the
            // least-squares violation minimizer over the box.
            let u = violation_minimizer(u_ref, &live, bounds);
            FilterResult {
                u_out: u,
                modified: u != u_ref,
                active_constraints: active_indices(&live, u),
                feasible: false,
                solver,
            }
        }
    }
}

/// Euclidean projection of `u` onto the boundary line `a . x = b`.
fn project_onto_boundary(u: Vec2, c: &HalfspaceConstraint) -> Vec2 {
    let shift = (c.b - c.a.dot(u)) / c.a.norm_sq();
    u + c.a * shift
}

/// Intersection point of two boundary lines, if their normals are
/// independent.
fn boundary_intersection(c1: &HalfspaceConstraint, c2: &HalfspaceConstraint) -> Option<Vec2> {
    let det = c1.a.x * c2.a.y - c1.a.y * c2.a.x;
    let scale = c1.a.norm() * c2.a.norm();
    if det.abs() <= 1e-12 * scale.max(1.0) {
        return None;
    }
    Some(Vec2::new(
        (c1.b * c2.a.y - c2.b * c1.a.y) / det,
        (c1.a.x * c2.b - c2.a.x * c1.b) / det,
    ))
}

fn active_indices(live: &[(usize, HalfspaceConstraint)], u: Vec2) -> Vec<usize> {
    live.iter()
        .filter(|(_, c)| c.margin(u).abs() <= 1e-7 * c.a.norm().max(1.0))
        .map(|(i, _)| *i)
        .collect()
}

/// Projected gradient descent on `sum_i max(0, b_i - a_i . u)^2` over the
/// box. The objective is convex with Lipschitz gradient, so a fixed
/// 1/L step converges; 2-D problems need only a modest iteration count.
fn violation_minimizer(
    u_ref: Vec2,
    live: &[(usize, HalfspaceConstraint)],
    bounds: Option<&ControlBox>,
) -> Vec2 {
    if live.is_empty() {
        return match bounds {
            Some(b) => b.clamp(u_ref),
            None => u_ref,
        };
    }
    let lipschitz: f64 = 2.0 * live.iter().map(|(_, c)| c.a.norm_sq()).sum::<f64>();
    let step = 1.0 / lipschitz.max(1e-9);
    let mut u = match bounds {
        Some(b) => b.clamp(u_ref),
        None => u_ref,
    };
    for _ in 0..2000 {
        let mut grad = Vec2::ZERO;
        for (_, c) in live {
            let viol = c.b - c.a.dot(u);
            if viol > 0.0 {
                grad = grad + c.a * (-2.0 * viol);
            }
        }
        let mut next = u + grad * (-step);
        if let Some(b) = bounds {
            next = b.clamp(next);
        }
        if (next - u).norm_sq() < 1e-24 {
            u = next;
            break;
        }
        u = next;
    }
    u
}

/// Distance of the solution from KKT stationarity: the least-norm residual
/// of `2 (u - u_ref) = sum_i lambda_i a_i` over nonnegative multipliers
/// supported on the constraints active at `u` (box faces included).
pub fn kkt_residual(
    u_ref: Vec2,
    constraints: &[HalfspaceConstraint],
    bounds: Option<&ControlBox>,
    u: Vec2,
) -> f64 {
    let mut all: Vec<HalfspaceConstraint> = constraints
        .iter()
        .copied()
        .filter(|c| c.a.norm_sq() >= DEGENERATE_NORM)
        .collect();
    if let Some(b) = bounds {
        all.extend_from_slice(&b.faces());
    }
    let active: Vec<Vec2> = all
        .iter()
        .filter(|c| c.margin(u).abs() <= 1e-6 * c.a.norm().max(1.0))
        .map(|c| c.a)
        .collect();
    let g = (u - u_ref) * 2.0;

    let mut best = g.norm(); // all multipliers zero
    for (i, &a) in active.iter().enumerate() {
        let lambda = (a.dot(g) / a.norm_sq()).max(0.0);
        best = best.min((g - a * lambda).norm());
        for &a2 in active.iter().skip(i + 1) {
            let det = a.x * a2.y - a.y * a2.x;
            if det.abs() <= 1e-12 {
                continue;
            }
            let l1 = (g.x * a2.y - g.y * a2.x) / det;
            let l2 = (a.x * g.y - a.y * g.x) / det;
            if l1 >= -1e-9 && l2 >= -1e-9 {
                best = best.min((g - a * l1.max(0.0) - a2 * l2.max(0.0)).norm());
            }
        }
    }
    best
}
