//! Exact majority-constrained projection by subset enumeration.
//!
//! When safety means "a strict majority of the member halfspaces hold",
//! the projection is a mixed-integer quadratic program. For the small
//! member counts used here it is solved exactly: any control satisfying at
//! least k of n constraints satisfies all constraints of some k-subset, so
//! enumerating every k-subset's plain projection and keeping the cheapest
//! feasible one yields the global optimum.

use super::{qp_filter, ControlBox, FilterResult, HalfspaceConstraint, SolverKind};
use crate::error::{Error, Result};
use crate::math::Vec2;

/// Largest constraint count accepted by the enumerator.
pub const MIQP_MAX_CONSTRAINTS: usize = 12;

/// Number of constraints a strict majority of `n` must satisfy; ties count
/// as unsafe, mirroring the voting rule.
pub fn majority_threshold(n: usize) -> usize {
    n / 2 + 1
}

/// Exact solution of: minimize `||u - u_ref||^2` such that at least
/// `majority_threshold(n)` of the constraints hold (plus the box).
///
/// Errors when more than [`MIQP_MAX_CONSTRAINTS`] constraints are given;
/// callers with larger ensembles should use the heuristic filter.
pub fn miqp_bruteforce(
    u_ref: Vec2,
    constraints: &[HalfspaceConstraint],
    bounds: Option<&ControlBox>,
) -> Result<FilterResult> {
    let n = constraints.len();
    if n == 0 {
        return Err(Error::Solver("miqp needs at least one constraint".into()));
    }
    if n > MIQP_MAX_CONSTRAINTS {
        return Err(Error::Solver(format!(
            "{n} constraints exceed the enumeration bound {MIQP_MAX_CONSTRAINTS}; \
             use the heuristic filter"
        )));
    }
    let k = majority_threshold(n);

    // Passthrough if the reference control already has majority support.
    let satisfied = constraints.iter().filter(|c| c.satisfied(u_ref)).count();
    let in_box = bounds.map_or(true, |b| b.contains(u_ref, 0.0));
    if satisfied >= k && in_box {
        let mut r = FilterResult::passthrough(u_ref, SolverKind::MiqpBruteforce);
        r.active_constraints = (0..n)
            .filter(|&i| constraints[i].margin(u_ref).abs() <= 1e-7)
            .collect();
        return Ok(r);
    }

    let mut best: Option<(f64, FilterResult)> = None;
    for subset in combinations(n, k) {
        let sub: Vec<HalfspaceConstraint> = subset.iter().map(|&i| constraints[i]).collect();
        let r = qp_filter(u_ref, &sub, bounds);
        if !r.feasible {
            continue;
        }
        let cost = r.cost(u_ref);
        if best.as_ref().map_or(true, |(c, _)| cost < *c - 1e-15) {
            best = Some((cost, r));
        }
    }

    match best {
        Some((_, mut r)) => {
            r.solver = SolverKind::MiqpBruteforce;
            r.modified = r.u_out != u_ref;
            // Report which of the original constraints hold at the optimum.
            r.active_constraints = (0..n)
                .filter(|&i| constraints[i].satisfied(r.u_out))
                .collect();
            Ok(r)
        }
        None => {
            // No qualifying subset is satisfiable inside the box; fall back
            // to the all-constraints violation minimizer, flagged.
            let mut r = qp_filter(u_ref, constraints, bounds);
            r.solver = SolverKind::MiqpBruteforce;
            r.feasible = false;
            Ok(r)
        }
    }
}

/// All k-element subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
