//! Depth-first branch-and-bound over a bounded-variable LP relaxation.
//!
//! Only a designated subset of variables carries integrality; at every node
//! whose relaxation is integral on that subset, a caller-supplied completion
//! turns the assignment into an exactly evaluated incumbent. A caller
//! round-and-repair heuristic runs at every node so near-optimal incumbents
//! appear early; with them, the many placement-symmetric subtrees of a
//! cluster prune out by bound instead of being enumerated.
//!
//! Branching prefers the aggregate variables (parallelism, batch sizes)
//! over individual placement cells and dives toward the nearer integer.

use crate::sched::simplex::{solve_lp, LinearProgram, LpResult};

const INT_TOL: f64 = 1e-6;
const OBJ_TOL: f64 = 1e-9;
/// Absolute optimality gap at which the search stops: no open subtree can
/// improve the incumbent by more than this.
const GAP_TOL: f64 = 1e-6;

#[derive(Debug)]
pub enum BbOutcome {
    Optimal { values: Vec<f64>, objective: f64 },
    Infeasible,
    NodeCapExceeded { best: Option<(Vec<f64>, f64)> },
    Numeric,
}

/// Caller hooks: exact evaluation of an integral assignment and the
/// rounding repair heuristic.
pub struct ModelHooks<'a> {
    /// Exact objective and lexicographic tie key for values whose branch
    /// variables are integral.
    pub complete: &'a dyn Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
    /// Integral feasible values derived from a fractional solution, within
    /// the given bounds. `None` when no repair exists.
    pub repair: &'a dyn Fn(&[f64], &[f64], &[f64]) -> Option<Vec<f64>>,
}

struct Node {
    /// (var, lower, upper) overrides along the path.
    bounds: Vec<(usize, f64, f64)>,
    /// Parent relaxation objective: an upper bound for the subtree.
    bound: f64,
}

pub fn branch_and_bound(
    lp: &LinearProgram,
    primary_vars: &[usize],
    secondary_vars: &[usize],
    obj_const: f64,
    hooks: &ModelHooks<'_>,
    seeds: &[Vec<f64>],
    node_cap: usize,
) -> BbOutcome {
    let mut incumbent: Option<(Vec<f64>, f64, Vec<f64>)> = None; // values, obj, key
    let mut stack = vec![Node { bounds: Vec::new(), bound: f64::INFINITY }];
    let mut nodes = 0usize;

    let mut consider = |cand: Option<(Vec<f64>, f64, Vec<f64>)>,
                        incumbent: &mut Option<(Vec<f64>, f64, Vec<f64>)>| {
        let Some((values, obj, key)) = cand else { return };
        let better = match incumbent {
            None => true,
            Some((_, inc_obj, inc_key)) => {
                obj > *inc_obj + OBJ_TOL || ((obj - *inc_obj).abs() <= OBJ_TOL && key < *inc_key)
            }
        };
        if better {
            *incumbent = Some((values, obj, key));
        }
    };

    // Known-feasible assignments (typically the current deployment) seed
    // the incumbent so unpromising subtrees prune from the first node.
    for seed in seeds {
        let cand = (hooks.complete)(seed).map(|(obj, key)| (seed.clone(), obj, key));
        consider(cand, &mut incumbent);
    }

    while let Some(node) = stack.pop() {
        if let Some((_, inc_obj, _)) = &incumbent {
            if node.bound <= *inc_obj + GAP_TOL {
                continue;
            }
            // Nothing left anywhere that can improve materially.
            let global_bound = stack
                .iter()
                .map(|n| n.bound)
                .fold(node.bound, f64::max);
            if global_bound <= *inc_obj + GAP_TOL {
                break;
            }
        }
        if nodes >= node_cap {
            return BbOutcome::NodeCapExceeded { best: incumbent.map(|(v, o, _)| (v, o)) };
        }
        nodes += 1;

        let mut sub = lp.clone();
        let mut bound_conflict = false;
        for &(var, lo, hi) in &node.bounds {
            sub.lower[var] = sub.lower[var].max(lo);
            sub.upper[var] = sub.upper[var].min(hi);
            if sub.lower[var] > sub.upper[var] {
                bound_conflict = true;
                break;
            }
        }
        if bound_conflict {
            continue;
        }
        let debug = std::env::var_os("BB_DEBUG").is_some();
        let sol = match solve_lp(&sub) {
            LpResult::Optimal(s) => s,
            LpResult::Infeasible => continue,
            other => {
                if debug {
                    eprintln!("bb: node {nodes} LP failure {other:?} depth {} inc {:?}",
                        node.bounds.len(), incumbent.as_ref().map(|(_, o, _)| o));
                }
                return BbOutcome::Numeric;
            }
        };
        if debug && nodes % 25 == 0 {
            eprintln!("bb: node {nodes} depth {} ub {} inc {:?}",
                node.bounds.len(), sol.objective + obj_const, incumbent.as_ref().map(|(_, o, _)| o));
        }
        let ub = sol.objective + obj_const;
        if let Some((_, inc_obj, _)) = &incumbent {
            if ub <= *inc_obj + GAP_TOL {
                continue;
            }
        }

        // Most fractional variable, aggregates before placement cells.
        let pick = |vars: &[usize]| -> Option<(usize, f64)> {
            let mut worst: Option<(usize, f64)> = None;
            for &v in vars {
                let frac = sol.x[v] - sol.x[v].floor();
                let dist = frac.min(1.0 - frac);
                if dist > INT_TOL && worst.map_or(true, |(_, d)| dist > d) {
                    worst = Some((v, dist));
                }
            }
            worst
        };
        let choice = pick(primary_vars).or_else(|| pick(secondary_vars));

        match choice {
            None => {
                let mut values = sol.x.clone();
                for &v in primary_vars.iter().chain(secondary_vars) {
                    values[v] = values[v].round();
                }
                let cand = (hooks.complete)(&values)
                    .map(|(obj, key)| (values, obj, key));
                if let Some((_, obj, _)) = &cand {
                    debug_assert!(*obj <= ub + 1e-5, "completion {obj} above node bound {ub}");
                }
                consider(cand, &mut incumbent);
            }
            Some((var, _)) => {
                // Repair heuristic: a feasible integral incumbent from the
                // fractional node solution.
                if let Some(repaired) = (hooks.repair)(&sol.x, &sub.lower, &sub.upper) {
                    let cand = (hooks.complete)(&repaired)
                        .map(|(obj, key)| (repaired, obj, key));
                    consider(cand, &mut incumbent);
                }
                if let Some((_, inc_obj, _)) = &incumbent {
                    if ub <= *inc_obj + GAP_TOL {
                        continue;
                    }
                }
                let val = sol.x[var];
                let floor = val.floor();
                let down = Node {
                    bounds: with_bound(&node.bounds, var, f64::NEG_INFINITY, floor),
                    bound: ub,
                };
                let up = Node {
                    bounds: with_bound(&node.bounds, var, floor + 1.0, f64::INFINITY),
                    bound: ub,
                };
                // Dive toward the nearer integer: pushed last, popped first.
                if val - floor >= 0.5 {
                    stack.push(down);
                    stack.push(up);
                } else {
                    stack.push(up);
                    stack.push(down);
                }
            }
        }
    }

    match incumbent {
        Some((values, objective, _)) => BbOutcome::Optimal { values, objective },
        None => BbOutcome::Infeasible,
    }
}

fn with_bound(path: &[(usize, f64, f64)], var: usize, lo: f64, hi: f64) -> Vec<(usize, f64, f64)> {
    let mut out = path.to_vec();
    out.push((var, lo, hi));
    out
}
