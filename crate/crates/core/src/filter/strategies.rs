//! Majority-vote and consensus filtering strategies.

use super::{qp_filter, ControlBox, FilterResult, HalfspaceConstraint, SolverKind};
use crate::math::Vec2;

/// Constraint-level majority heuristic: if the reference control already
/// satisfies a strict majority of the constraints, pass it through;
/// otherwise project onto exactly the violated constraints and ignore the
/// rest. Mirrors "keep the members that voted unsafe" at the ensemble
/// level and is shared with the solver comparison harness.
pub fn heuristic_on_constraints(
    u_ref: Vec2,
    constraints: &[HalfspaceConstraint],
    bounds: Option<&ControlBox>,
) -> FilterResult {
    let n = constraints.len();
    let violated: Vec<usize> = (0..n)
        .filter(|&i| !constraints[i].satisfied(u_ref))
        .collect();
    let n_safe = n - violated.len();
    let in_box = bounds.map_or(true, |b| b.contains(u_ref, 0.0));
    if n_safe > violated.len() && in_box {
        return FilterResult::passthrough(u_ref, SolverKind::Heuristic);
    }
    let sub: Vec<HalfspaceConstraint> = violated.iter().map(|&i| constraints[i]).collect();
    let mut r = qp_filter(u_ref, &sub, bounds);
    // Map active indices back into the caller's numbering.
    r.active_constraints = r
        .active_constraints
        .iter()
        .map(|&j| violated[j])
        .collect();
    r.solver = SolverKind::Heuristic;
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_when_majority_satisfied() {
        let cs = vec![
            HalfspaceConstraint::new(Vec2::new(1.0, 0.0), -1.0),
            HalfspaceConstraint::new(Vec2::new(0.0, 1.0), -1.0),
            HalfspaceConstraint::new(Vec2::new(1.0, 0.0), 99.0),
        ];
        let r = heuristic_on_constraints(Vec2::ZERO, &cs, None);
        assert!(!r.modified);
    }

    #[test]
    fn projects_onto_violated_set_only() {
        // Two violated, one satisfied: the satisfied one is ignored even
        // though enforcing it would be free.
        let cs = vec![
            HalfspaceConstraint::new(Vec2::new(1.0, 0.0), 1.0),
            HalfspaceConstraint::new(Vec2::new(0.0, 1.0), 1.0),
            HalfspaceConstraint::new(Vec2::new(-1.0, 0.0), -5.0),
        ];
        let r = heuristic_on_constraints(Vec2::ZERO, &cs, None);
        assert!(r.modified);
        assert!((r.u_out.x - 1.0).abs() < 1e-9);
        assert!((r.u_out.y - 1.0).abs() < 1e-9);
        // The previously violated constraints are now satisfied.
        assert!(cs[0].satisfied(r.u_out));
        assert!(cs[1].satisfied(r.u_out));
    }
}
