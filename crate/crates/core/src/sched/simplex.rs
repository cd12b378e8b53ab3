//! Dense primal simplex with explicit variable bounds.
//!
//! Two phases: artificial variables drive a feasible basis, then the real
//! objective is maximized. Pricing is steepest-coefficient with a permanent
//! switch to Bland's rule once the objective stalls, which guarantees
//! termination on degenerate instances. Bounded variables are handled
//! natively (nonbasic at either bound, bound flips without pivots) so the
//! branch-and-bound layer can tighten bounds without growing the row set.
//!
//! The tableau is dense; row elimination is the data-parallel hot loop.

use crate::par;

pub const FEAS_TOL: f64 = 1e-7;
/// Remaining-improvement threshold below which phase 2 stops.
const OPT_GAP_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-9;
/// Feasibility slack of the relaxed ratio-test pass.
const RATIO_SLACK: f64 = 1e-9;
/// Outward bound perturbation against degenerate stalling.
const PERTURB_EPS: f64 = 1e-9;
const COST_TOL: f64 = 1e-9;
/// Pivots without objective progress before switching to Bland's rule.
const STALL_LIMIT: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct LpRow {
    pub coeffs: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

/// Maximization problem over bounded variables.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<LpRow>,
}

impl LinearProgram {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum LpResult {
    Optimal(LpSolution),
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum VarState {
    Basic,
    AtLower,
    AtUpper,
}

struct Tableau {
    m: usize,
    ncols: usize,
    n_structural: usize,
    /// m x ncols row-major; invariant a = B^-1 A.
    a: Vec<f64>,
    /// Current values of the basic variables, row-aligned.
    xb: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cost: Vec<f64>,
    /// Reduced costs, kept in sync across pivots.
    d: Vec<f64>,
    bland: bool,
    stall: usize,
    /// Never leave Bland mode (conservative retry).
    sticky_bland: bool,
    /// Devex reference weights, one per column.
    devex: Vec<f64>,
}

enum Step {
    Optimal,
    Unbounded,
    Progress,
}

impl Tableau {
    fn value(&self, col: usize) -> f64 {
        match self.state[col] {
            VarState::Basic => {
                let row = self.basis.iter().position(|&b| b == col).expect("basic col has row");
                self.xb[row]
            }
            VarState::AtLower => self.lower[col],
            VarState::AtUpper => self.upper[col],
        }
    }

    fn reset_costs(&mut self, cost: Vec<f64>) {
        self.cost = cost;
        // d = c - c_B B^-1 A, computed fresh against the current tableau.
        let mut d = self.cost.clone();
        for (row, &bcol) in self.basis.iter().enumerate() {
            let cb = self.cost[bcol];
            if cb == 0.0 {
                continue;
            }
            let base = row * self.ncols;
            for j in 0..self.ncols {
                d[j] -= cb * self.a[base + j];
            }
        }
        self.d = d;
        self.bland = self.sticky_bland;
        self.stall = 0;
        self.devex = vec![1.0; self.ncols];
    }

    /// Entering column, or `None` when provably within tolerance of the
    /// optimum: with finite spans the total remaining improvement is at
    /// most the sum of |reduced cost| x span over profitable columns.
    fn pick_entering(&self) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        let mut potential = 0.0f64;
        let mut first_profitable: Option<usize> = None;
        for j in 0..self.ncols {
            let span = self.upper[j] - self.lower[j];
            if self.state[j] == VarState::Basic || span <= 0.0 {
                continue;
            }
            let d = self.d[j];
            let profitable = match self.state[j] {
                VarState::AtLower => d > COST_TOL,
                VarState::AtUpper => d < -COST_TOL,
                VarState::Basic => false,
            };
            if !profitable {
                continue;
            }
            if first_profitable.is_none() {
                first_profitable = Some(j);
            }
            potential += if span.is_finite() { d.abs() * span } else { f64::INFINITY };
            let score = if std::env::var_os("SIMPLEX_DANTZIG").is_some() {
                d.abs()
            } else {
                d * d / self.devex[j]
            };
            if best.map_or(true, |(_, s)| score > s) {
                best = Some((j, score));
            }
        }
        let gap_tol = if std::env::var_os("SIMPLEX_NO_GAP_EXIT").is_some() { -1.0 } else { OPT_GAP_TOL };
        if potential <= gap_tol {
            return None;
        }
        if self.bland {
            return first_profitable;
        }
        best.map(|(j, _)| j)
    }

    fn step(&mut self) -> Step {
        let Some(entering) = self.pick_entering() else {
            return Step::Optimal;
        };
        let dir = if self.state[entering] == VarState::AtLower { 1.0 } else { -1.0 };

        // Harris-style two-pass ratio test: pass one finds the tightest
        // limit with a small feasibility slack, pass two picks, among the
        // rows inside that relaxed limit, the numerically strongest pivot
        // (or the Bland-minimal basis column when anti-cycling is active).
        // Tiny pivots are what turn a dense tableau into noise.
        let span = self.upper[entering] - self.lower[entering];
        let mut relaxed_limit = f64::INFINITY;
        for i in 0..self.m {
            let g = dir * self.a[i * self.ncols + entering];
            let bcol = self.basis[i];
            let room = if g > PIVOT_TOL {
                self.xb[i] - self.lower[bcol]
            } else if g < -PIVOT_TOL {
                self.upper[bcol] - self.xb[i]
            } else {
                continue;
            };
            if room.is_infinite() {
                continue;
            }
            relaxed_limit = relaxed_limit.min(((room + RATIO_SLACK) / g.abs()).max(0.0));
        }
        let mut blocking: Option<(usize, VarState, f64)> = None;
        if relaxed_limit.is_finite() {
            let mut best_quality = 0.0f64;
            for i in 0..self.m {
                let g = dir * self.a[i * self.ncols + entering];
                let bcol = self.basis[i];
                let (room, hits) = if g > PIVOT_TOL {
                    (self.xb[i] - self.lower[bcol], VarState::AtLower)
                } else if g < -PIVOT_TOL {
                    (self.upper[bcol] - self.xb[i], VarState::AtUpper)
                } else {
                    continue;
                };
                if room.is_infinite() {
                    continue;
                }
                let limit = (room / g.abs()).max(0.0);
                if limit > relaxed_limit {
                    continue;
                }
                let take = match blocking {
                    None => true,
                    Some((brow, _, _)) => {
                        if self.bland {
                            self.basis[i] < self.basis[brow]
                        } else {
                            g.abs() > best_quality
                        }
                    }
                };
                if take {
                    best_quality = g.abs();
                    blocking = Some((i, hits, limit));
                }
            }
        }

        let t = match blocking {
            None => span,
            Some((_, _, limit)) => limit.min(span).max(0.0),
        };
        if t.is_infinite() {
            return Step::Unbounded;
        }
        let moved = self.d[entering].abs() * t;
        if moved > 1e-12 {
            self.stall = 0;
            self.bland = self.sticky_bland;
        } else {
            self.stall += 1;
            if self.stall > STALL_LIMIT {
                // Anti-cycling crawl until the plateau breaks.
                self.bland = true;
            }
        }
        // A finite own-span shorter than every row limit is a plain flip.
        let leave = match blocking {
            Some((r, hits, limit)) if limit <= span => Some((r, hits)),
            _ => None,
        };

        match leave {
            None => {
                // Bound flip: entering jumps to its opposite bound.
                for i in 0..self.m {
                    self.xb[i] -= dir * t * self.a[i * self.ncols + entering];
                }
                self.state[entering] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                Step::Progress
            }
            Some((r, leaving_bound)) => {
                let leaving_col = self.basis[r];
                let entering_value = match self.state[entering] {
                    VarState::AtLower => self.lower[entering] + t,
                    VarState::AtUpper => self.upper[entering] - t,
                    VarState::Basic => unreachable!("entering var is nonbasic"),
                };
                for i in 0..self.m {
                    if i != r {
                        self.xb[i] -= dir * t * self.a[i * self.ncols + entering];
                    }
                }
                self.xb[r] = entering_value;

                // Row elimination to restore a = B^-1 A.
                let ncols = self.ncols;
                let piv = self.a[r * ncols + entering];
                debug_assert!(piv.abs() > PIVOT_TOL);
                let inv = 1.0 / piv;
                let row_start = r * ncols;
                for v in &mut self.a[row_start..row_start + ncols] {
                    *v *= inv;
                }
                let pivot_row: Vec<f64> = self.a[row_start..row_start + ncols].to_vec();
                // Eliminating along the pivot row's exact nonzeros is
                // bit-identical to the full sweep and much cheaper while
                // the tableau is still sparse.
                let nz: Vec<u32> = pivot_row
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p != 0.0)
                    .map(|(j, _)| j as u32)
                    .collect();
                par::for_each_chunk(&mut self.a, ncols, |i, row| {
                    if i == r {
                        return;
                    }
                    let factor = row[entering];
                    if factor != 0.0 {
                        for &j in &nz {
                            let j = j as usize;
                            row[j] -= factor * pivot_row[j];
                        }
                        row[entering] = 0.0;
                    }
                });
                let dfactor = self.d[entering];
                if dfactor != 0.0 {
                    for &j in &nz {
                        let j = j as usize;
                        self.d[j] -= dfactor * pivot_row[j];
                    }
                    self.d[entering] = 0.0;
                }
                // Approximate devex weight propagation along the pivot row.
                let w_enter = self.devex[entering].max(1.0);
                for (j, &alpha) in pivot_row.iter().enumerate() {
                    if alpha != 0.0 && j != entering {
                        let cand = alpha * alpha * w_enter;
                        if cand > self.devex[j] {
                            self.devex[j] = cand;
                        }
                    }
                }
                self.devex[leaving_col] = (w_enter / (piv * piv)).max(1.0);

                self.basis[r] = entering;
                self.state[entering] = VarState::Basic;
                self.state[leaving_col] = leaving_bound;
                Step::Progress
            }
        }
    }

    /// Runs pivots until optimality. In phase 1 (`artificials` set) the
    /// loop exits early once every artificial is at zero: the basis is
    /// feasible and further cleanup pivots are wasted work.
    fn run(&mut self, max_iters: usize, artificials: Option<&[usize]>) -> LpResult {
        let debug = std::env::var_os("SIMPLEX_DEBUG").is_some();
        for iter in 0..max_iters {
            if debug && iter % 2000 == 0 {
                let obj: f64 = (0..self.ncols).map(|j| self.cost[j] * self.value(j)).sum();
                eprintln!("iter {iter}: obj {obj:.9} bland {} stall {}", self.bland, self.stall);
            }
            if let Some(arts) = artificials {
                let infeas: f64 = self
                    .basis
                    .iter()
                    .zip(&self.xb)
                    .filter(|(col, _)| arts.binary_search(col).is_ok())
                    .map(|(_, v)| v.max(0.0))
                    .sum();
                if infeas <= FEAS_TOL {
                    return self.extract(iter);
                }
            }
            match self.step() {
                Step::Optimal => return self.extract(iter),
                Step::Unbounded => return LpResult::Unbounded,
                Step::Progress => {}
            }
        }
        LpResult::IterationLimit
    }

    fn extract(&self, iterations: usize) -> LpResult {
        let mut x = vec![0.0; self.n_structural];
        for (j, v) in x.iter_mut().enumerate() {
            *v = self.value(j);
        }
        LpResult::Optimal(LpSolution { x, objective: 0.0, iterations })
    }
}

/// Largest constraint violation of `x` against the program.
pub fn solution_violation(lp: &LinearProgram, x: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    for row in &lp.rows {
        let lhs: f64 = row.coeffs.iter().map(|(j, c)| c * x[*j]).sum();
        let v = match row.cmp {
            Cmp::Le => lhs - row.rhs,
            Cmp::Ge => row.rhs - lhs,
            Cmp::Eq => (lhs - row.rhs).abs(),
        };
        worst = worst.max(v);
    }
    for j in 0..lp.n_vars() {
        worst = worst.max(lp.lower[j] - x[j]).max(x[j] - lp.upper[j]);
    }
    worst
}

/// Solves the LP; `Optimal` carries structural variable values and the
/// exact objective recomputed from them. The result is verified against
/// the original program; on numerical trouble one slower, conservatively
/// pivoting retry runs before giving up.
pub fn solve_lp(lp: &LinearProgram) -> LpResult {
    match solve_lp_once(lp, false) {
        LpResult::Optimal(sol) => {
            if solution_violation(lp, &sol.x) <= 1e-5 {
                return LpResult::Optimal(sol);
            }
            match solve_lp_once(lp, true) {
                LpResult::Optimal(retry) if solution_violation(lp, &retry.x) <= 1e-5 => {
                    LpResult::Optimal(retry)
                }
                LpResult::Optimal(_) => LpResult::IterationLimit,
                other => other,
            }
        }
        other => other,
    }
}

fn solve_lp_once(lp: &LinearProgram, careful: bool) -> LpResult {
    let n = lp.n_vars();
    debug_assert!(lp.lower.len() == n && lp.upper.len() == n);
    for j in 0..n {
        if lp.lower[j] > lp.upper[j] + 1e-12 {
            return LpResult::Infeasible;
        }
        debug_assert!(lp.lower[j].is_finite(), "every variable needs a finite lower bound");
    }
    let m = lp.rows.len();

    // Column layout: structurals, slacks (Le/Ge rows), artificials.
    let n_slack = lp.rows.iter().filter(|r| r.cmp != Cmp::Eq).count();
    let mut ncols = n + n_slack;

    // Row scaling improves conditioning; solutions are unaffected.
    let mut scale = vec![1.0f64; m];
    for (i, row) in lp.rows.iter().enumerate() {
        let mx = row.coeffs.iter().map(|(_, c)| c.abs()).fold(0.0f64, f64::max);
        if mx > 0.0 {
            scale[i] = 1.0 / mx;
        }
    }

    // Deterministic outward bound perturbation: basic solutions become
    // generically non-degenerate, so pivots make strict progress and the
    // plateau crawl disappears. The feasible set only grows (by ~1e-9),
    // which keeps every objective reported here a valid relaxation bound;
    // extraction clamps values back into the true box.
    let perturb = |j: usize| -> f64 {
        PERTURB_EPS * ((j.wrapping_mul(2654435761) % 1009 + 1) as f64 / 1009.0)
    };
    let mut struct_lower = lp.lower.clone();
    let mut struct_upper = lp.upper.clone();
    for j in 0..n {
        struct_lower[j] -= perturb(j);
        if struct_upper[j].is_finite() {
            struct_upper[j] += 0.7 * perturb(j);
        }
    }

    // Nonbasic structurals start at their (perturbed) lower bound.
    let residual = |row: &LpRow, i: usize| -> f64 {
        let mut r = row.rhs * scale[i];
        for &(j, c) in &row.coeffs {
            r -= c * scale[i] * struct_lower[j];
        }
        r
    };

    let mut slack_of_row = vec![usize::MAX; m];
    {
        let mut next = n;
        for (i, row) in lp.rows.iter().enumerate() {
            if row.cmp != Cmp::Eq {
                slack_of_row[i] = next;
                next += 1;
            }
        }
    }

    // Decide which rows need an artificial basis column.
    let mut art_of_row = vec![usize::MAX; m];
    let mut n_art = 0;
    for (i, row) in lp.rows.iter().enumerate() {
        let r = residual(row, i);
        let natural = match row.cmp {
            Cmp::Le => r >= 0.0,
            Cmp::Ge => r <= 0.0,
            Cmp::Eq => false,
        };
        if !natural {
            art_of_row[i] = ncols + n_art;
            n_art += 1;
        }
    }
    ncols += n_art;

    let mut a = vec![0.0f64; m * ncols];
    let mut lower = vec![0.0f64; ncols];
    let mut upper = vec![f64::INFINITY; ncols];
    lower[..n].copy_from_slice(&struct_lower);
    upper[..n].copy_from_slice(&struct_upper);
    // Slack perturbation relaxes the rows themselves by a hair.
    for j in n..n + n_slack {
        lower[j] -= perturb(j);
    }

    let mut xb = vec![0.0f64; m];
    let mut basis = vec![usize::MAX; m];
    let mut state = vec![VarState::AtLower; ncols];

    for (i, row) in lp.rows.iter().enumerate() {
        let base = i * ncols;
        for &(j, c) in &row.coeffs {
            a[base + j] += c * scale[i];
        }
        let r = residual(row, i);
        if row.cmp != Cmp::Eq {
            let s = slack_of_row[i];
            a[base + s] = match row.cmp {
                Cmp::Le => 1.0,
                Cmp::Ge => -1.0,
                Cmp::Eq => unreachable!(),
            };
        }
        if art_of_row[i] != usize::MAX {
            let col = art_of_row[i];
            a[base + col] = if r >= 0.0 { 1.0 } else { -1.0 };
            basis[i] = col;
            xb[i] = r.abs();
            state[col] = VarState::Basic;
        } else {
            // The slack itself is a feasible basic variable.
            let s = slack_of_row[i];
            basis[i] = s;
            xb[i] = match row.cmp {
                Cmp::Le => r,
                Cmp::Ge => -r,
                Cmp::Eq => unreachable!("equality rows always get an artificial"),
            };
            state[s] = VarState::Basic;
        }
        // The tableau invariant a = B^-1 A needs +1 in every basis column.
        if a[base + basis[i]] < 0.0 {
            for v in &mut a[base..base + ncols] {
                *v = -*v;
            }
        }
    }

    let mut phase1_iters = 0usize;
    let _ = &phase1_iters;
    let mut tab = Tableau {
        m,
        ncols,
        n_structural: n,
        a,
        xb,
        basis,
        state,
        lower,
        upper,
        cost: vec![],
        d: vec![],
        bland: careful,
        stall: 0,
        sticky_bland: careful,
        devex: Vec::new(),
    };
    let max_iters = 2000 + 100 * m + 10 * ncols;

    if n_art > 0 {
        let mut phase1 = vec![0.0; ncols];
        for &col in art_of_row.iter().filter(|&&c| c != usize::MAX) {
            phase1[col] = -1.0;
        }
        tab.reset_costs(phase1);
        let art_cols: Vec<usize> = art_of_row.iter().copied().filter(|&c| c != usize::MAX).collect();
        phase1_iters = match tab.run(max_iters, Some(&art_cols)) {
            LpResult::Optimal(s) => s.iterations,
            LpResult::Unbounded => return LpResult::Infeasible,
            other => return other,
        };
        let infeasibility: f64 = art_of_row
            .iter()
            .filter(|&&c| c != usize::MAX)
            .map(|&c| tab.value(c))
            .sum();
        if infeasibility > FEAS_TOL {
            return LpResult::Infeasible;
        }
        // Freeze artificials at zero for phase 2.
        for &col in art_of_row.iter().filter(|&&c| c != usize::MAX) {
            tab.lower[col] = 0.0;
            tab.upper[col] = 0.0;
        }
    }

    let mut phase2 = vec![0.0; ncols];
    phase2[..n].copy_from_slice(&lp.objective);
    tab.reset_costs(phase2);
    match tab.run(max_iters, None) {
        LpResult::Optimal(mut sol) => {
            for j in 0..n {
                sol.x[j] = sol.x[j].clamp(lp.lower[j], lp.upper[j]);
            }
            sol.objective = sol.x.iter().zip(&lp.objective).map(|(x, c)| x * c).sum();
            sol.iterations += phase1_iters;
            LpResult::Optimal(sol)
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lp(obj: &[f64], lower: &[f64], upper: &[f64], rows: Vec<LpRow>) -> LinearProgram {
        LinearProgram {
            objective: obj.to_vec(),
            lower: lower.to_vec(),
            upper: upper.to_vec(),
            rows,
        }
    }

    fn row(coeffs: &[(usize, f64)], cmp: Cmp, rhs: f64) -> LpRow {
        LpRow { coeffs: coeffs.to_vec(), cmp, rhs }
    }

    fn optimal(r: LpResult) -> LpSolution {
        match r {
            LpResult::Optimal(s) => s,
            other => panic!("expected optimal, got {other:?}"),
        }
    }

    #[test]
    fn textbook_two_var() {
        // max 3x + 2y s.t. x + y <= 4, x + 3y <= 6, x,y >= 0 -> (4, 0), obj 12.
        let p = lp(
            &[3.0, 2.0],
            &[0.0, 0.0],
            &[f64::INFINITY, f64::INFINITY],
            vec![
                row(&[(0, 1.0), (1, 1.0)], Cmp::Le, 4.0),
                row(&[(0, 1.0), (1, 3.0)], Cmp::Le, 6.0),
            ],
        );
        let s = optimal(solve_lp(&p));
        assert!((s.objective - 12.0).abs() < 1e-7, "{s:?}");
        assert!((s.x[0] - 4.0).abs() < 1e-7);
    }

    #[test]
    fn equality_constraints_need_phase_one() {
        // max x + y s.t. x + y = 3, x - y = 1 -> (2, 1), obj 3.
        let p = lp(
            &[1.0, 1.0],
            &[0.0, 0.0],
            &[f64::INFINITY, f64::INFINITY],
            vec![
                row(&[(0, 1.0), (1, 1.0)], Cmp::Eq, 3.0),
                row(&[(0, 1.0), (1, -1.0)], Cmp::Eq, 1.0),
            ],
        );
        let s = optimal(solve_lp(&p));
        assert!((s.x[0] - 2.0).abs() < 1e-7 && (s.x[1] - 1.0).abs() < 1e-7, "{s:?}");
    }

    #[test]
    fn upper_bounds_flip_without_pivot() {
        // max x + y, x <= 2 (bound), y <= 3 (bound), x + y <= 4.
        let p = lp(
            &[1.0, 1.0],
            &[0.0, 0.0],
            &[2.0, 3.0],
            vec![row(&[(0, 1.0), (1, 1.0)], Cmp::Le, 4.0)],
        );
        let s = optimal(solve_lp(&p));
        assert!((s.objective - 4.0).abs() < 1e-7, "{s:?}");
    }

    #[test]
    fn detects_infeasible() {
        let p = lp(
            &[1.0],
            &[0.0],
            &[f64::INFINITY],
            vec![
                row(&[(0, 1.0)], Cmp::Ge, 5.0),
                row(&[(0, 1.0)], Cmp::Le, 3.0),
            ],
        );
        assert_eq!(solve_lp(&p), LpResult::Infeasible);
    }

    #[test]
    fn detects_unbounded() {
        let p = lp(&[1.0], &[0.0], &[f64::INFINITY], vec![row(&[(0, 1.0)], Cmp::Ge, 1.0)]);
        assert_eq!(solve_lp(&p), LpResult::Unbounded);
    }

    #[test]
    fn honors_nonzero_lower_bounds() {
        // min-cost-like: max -x with x >= 2.5 -> x = 2.5.
        let p = lp(&[-1.0], &[2.5], &[10.0], vec![row(&[(0, 1.0)], Cmp::Le, 9.0)]);
        let s = optimal(solve_lp(&p));
        assert!((s.x[0] - 2.5).abs() < 1e-7);
    }

    #[test]
    fn ge_rows_with_feasible_slack_start() {
        // max -x - y s.t. x + y >= 2, x,y in [0, 5] -> obj -2.
        let p = lp(
            &[-1.0, -1.0],
            &[0.0, 0.0],
            &[5.0, 5.0],
            vec![row(&[(0, 1.0), (1, 1.0)], Cmp::Ge, 2.0)],
        );
        let s = optimal(solve_lp(&p));
        assert!((s.objective + 2.0).abs() < 1e-7, "{s:?}");
    }

    #[test]
    fn degenerate_instance_terminates() {
        // Multiple redundant constraints through the optimum.
        let p = lp(
            &[1.0, 1.0],
            &[0.0, 0.0],
            &[f64::INFINITY, f64::INFINITY],
            vec![
                row(&[(0, 1.0), (1, 1.0)], Cmp::Le, 2.0),
                row(&[(0, 2.0), (1, 2.0)], Cmp::Le, 4.0),
                row(&[(0, 1.0)], Cmp::Le, 2.0),
                row(&[(1, 1.0)], Cmp::Le, 2.0),
                row(&[(0, 1.0), (1, 2.0)], Cmp::Le, 4.0),
            ],
        );
        let s = optimal(solve_lp(&p));
        assert!((s.objective - 2.0).abs() < 1e-7, "{s:?}");
    }

    #[test]
    fn fixed_variables_are_respected() {
        let p = lp(
            &[5.0, 1.0],
            &[3.0, 0.0],
            &[3.0, 10.0],
            vec![row(&[(0, 1.0), (1, 1.0)], Cmp::Le, 7.0)],
        );
        let s = optimal(solve_lp(&p));
        assert!((s.x[0] - 3.0).abs() < 1e-7);
        assert!((s.x[1] - 4.0).abs() < 1e-7);
    }
}
