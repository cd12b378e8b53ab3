//! Joint parallelism / placement / flow / rolling-update program.
//!
//! One scheduling round maximizes pipeline throughput minus small penalties
//! for peak node egress and deployment churn, subject to per-node resource
//! capacities, flow routing between adjacent operators, and rolling-update
//! bookkeeping. The public instance exposes the full variable set (including
//! per-edge flow units and add/remove deltas); internally the solver works
//! on an equivalent reduced program where flows appear as per-node export
//! amounts and deltas as one-sided shortfalls, which shrinks the tableau by
//! an order of magnitude without changing any optimum.

use serde::Serialize;
use thiserror::Error;

use crate::model::{NodeSpec, OperatorId};
use crate::sched::bb::{branch_and_bound, BbOutcome, ModelHooks};
use crate::sched::simplex::{Cmp, LinearProgram, LpRow};

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("instance is infeasible: {0}")]
    Infeasible(String),
    #[error("branch-and-bound node cap exceeded")]
    NodeCapExceeded { best: Option<Box<Plan>> },
    #[error("numerical failure in the LP engine")]
    Numeric,
}

/// Cold-start discounted rate of an instance restarted into the candidate
/// configuration within one scheduling window.
pub fn effective_throughput(ut_cand: f64, h_cold: f64, t_sched: f64) -> f64 {
    ut_cand * (1.0 - h_cold / t_sched).max(0.0)
}

/// Per-operator inputs of one scheduling round.
#[derive(Debug, Clone, Serialize)]
pub struct OperatorMilp {
    pub id: OperatorId,
    /// Estimated per-instance rate under the current configuration.
    pub ut_cur: f64,
    /// Predicted per-instance rate under the candidate configuration.
    pub ut_cand: Option<f64>,
    /// Cold-start discounted candidate rate; present iff `ut_cand` is.
    pub ut_eff: Option<f64>,
    /// Input volume per original pipeline input record.
    pub amplification: f64,
    pub out_record_size: f64,
    pub cpu: f64,
    pub mem: f64,
    pub acc: u32,
    pub n_old: usize,
    pub n_new: usize,
    /// Per-round rolling batch cap.
    pub b_max: usize,
    pub startup_cost: f64,
    pub shutdown_cost: f64,
}

impl OperatorMilp {
    fn has_candidate(&self) -> bool {
        self.ut_cand.is_some()
    }

    /// Per-instance output rate used in the egress accounting.
    fn egress_rate(&self) -> f64 {
        self.ut_cur * self.out_record_size
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MilpInput {
    pub operators: Vec<OperatorMilp>,
    /// Amplification at the pipeline output.
    pub amp_output: f64,
    pub nodes: Vec<NodeSpec>,
    /// Current placement x̄ (operators x nodes).
    pub current: Vec<Vec<usize>>,
    pub lambda1: f64,
    pub lambda2: f64,
    pub t_sched: f64,
    /// When false the egress terms and their objective weight are dropped
    /// (the network-agnostic ablation).
    pub model_egress: bool,
}

impl MilpInput {
    pub fn n_ops(&self) -> usize {
        self.operators.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Max instances of operator `i` that fit on node `k` by resources.
    pub fn node_fit(&self, i: usize, k: usize) -> usize {
        let op = &self.operators[i];
        let node = &self.nodes[k];
        let mut cap = usize::MAX;
        if op.cpu > 0.0 {
            cap = cap.min((node.cpu_cap / op.cpu + 1e-9) as usize);
        }
        if op.mem > 0.0 {
            cap = cap.min((node.mem_cap / op.mem + 1e-9) as usize);
        }
        if op.acc > 0 {
            cap = cap.min((node.acc_cap / op.acc) as usize);
        }
        if cap == usize::MAX {
            cap = 1024;
        }
        cap
    }

    /// Cluster-wide instance bound for operator `i` (the big-M of the flow
    /// receive gates).
    pub fn cluster_fit(&self, i: usize) -> usize {
        (0..self.n_nodes()).map(|k| self.node_fit(i, k)).sum()
    }

    fn validate(&self) -> Result<(), MilpError> {
        let n = self.n_ops();
        if n == 0 || self.nodes.is_empty() {
            return Err(MilpError::Infeasible("empty pipeline or cluster".into()));
        }
        if self.current.len() != n || self.current.iter().any(|r| r.len() != self.n_nodes()) {
            return Err(MilpError::Infeasible("placement shape mismatch".into()));
        }
        for (i, op) in self.operators.iter().enumerate() {
            if op.ut_cur < 0.0 || op.amplification <= 0.0 {
                return Err(MilpError::Infeasible(format!("operator {} has invalid rates", op.id)));
            }
            if op.ut_cand.is_some() != op.ut_eff.is_some() {
                return Err(MilpError::Infeasible(format!(
                    "operator {}: discounted rate must accompany the candidate rate",
                    op.id
                )));
            }
            let placed: usize = self.current[i].iter().sum();
            if op.has_candidate() && op.n_old + op.n_new != placed {
                return Err(MilpError::Infeasible(format!(
                    "operator {}: n_old {} + n_new {} != placed {placed}",
                    op.id, op.n_old, op.n_new
                )));
            }
            if !op.has_candidate() && op.n_new != 0 {
                return Err(MilpError::Infeasible(format!(
                    "operator {}: transitioned instances without a candidate",
                    op.id
                )));
            }
            if self.cluster_fit(i) == 0 {
                return Err(MilpError::Infeasible(format!("operator {} fits on no node", op.id)));
            }
        }
        Ok(())
    }
}

/// The solver output: a complete assignment of every decision variable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Plan {
    pub parallelism: Vec<usize>,
    /// operators x nodes instance counts.
    pub placement: Vec<Vec<usize>>,
    /// Rolling batch per operator (zero without a candidate).
    pub rolling_batch: Vec<usize>,
    /// Flow units per edge: `flows[i][k][l]` routes operator i+1 output
    /// from node k+1 to node l+1.
    pub flows: Vec<Vec<Vec<usize>>>,
    pub objective: f64,
    pub throughput: f64,
    pub egress_peak: f64,
    pub migration_cost: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarGroup {
    pub name: String,
    pub count: usize,
    pub integer: bool,
}

/// Index layout of the reduced LP. Export and shortfall columns exist only
/// where they can be nonzero, which keeps the dense tableau narrow.
#[derive(Debug, Clone)]
struct Layout {
    n: usize,
    k: usize,
    /// p block start (always 0).
    p0: usize,
    x0: usize,
    b_idx: Vec<Option<usize>>,
    /// Export column per (edge, node); only for edges that carry bytes.
    e_idx: Vec<Option<usize>>,
    /// Shortfall column per (op, node); only where the current placement
    /// is nonzero.
    d_idx: Vec<Option<usize>>,
    t_idx: usize,
    emax_idx: Option<usize>,
    n_vars: usize,
    big_m: Vec<f64>,
    /// Constant restored when reporting objectives.
    obj_const: f64,
}

#[derive(Debug)]
pub struct MilpInstance {
    pub input: MilpInput,
    pub variables: Vec<VarGroup>,
    pub constraints: Vec<(String, usize)>,
    lp: LinearProgram,
    layout: Layout,
}

impl MilpInstance {
    pub fn n_integer_vars(&self) -> usize {
        self.variables.iter().filter(|g| g.integer).map(|g| g.count).sum()
    }

    #[doc(hidden)]
    pub fn relaxation(&self) -> &LinearProgram {
        &self.lp
    }

    #[doc(hidden)]
    pub fn placement_var(&self, i: usize, k: usize) -> usize {
        self.layout.x0 + i * self.layout.k + k
    }
}

/// Builds the full instance (and the reduced program behind it).
pub fn build_milp(input: MilpInput) -> Result<MilpInstance, MilpError> {
    input.validate()?;
    let n = input.n_ops();
    let k = input.n_nodes();
    let edges = n.saturating_sub(1);
    let egress = input.model_egress && edges > 0;

    // Public variable inventory (the as-declared program).
    let n_b = input.operators.iter().filter(|o| o.has_candidate()).count();
    let mut variables = vec![
        VarGroup { name: "parallelism".into(), count: n, integer: true },
        VarGroup { name: "placement".into(), count: n * k, integer: true },
        VarGroup { name: "rolling_batch".into(), count: n_b, integer: true },
        VarGroup { name: "flow".into(), count: edges * k * k, integer: true },
        VarGroup { name: "delta_add".into(), count: n * k, integer: true },
        VarGroup { name: "delta_remove".into(), count: n * k, integer: true },
        VarGroup { name: "throughput".into(), count: 1, integer: false },
        VarGroup { name: "migration_cost".into(), count: 1, integer: false },
    ];
    if egress {
        variables.push(VarGroup { name: "egress_peak".into(), count: 1, integer: false });
    }
    let mut constraints = vec![
        ("throughput".to_string(), n),
        ("placement".to_string(), n),
        ("cpu_capacity".to_string(), k),
        ("mem_capacity".to_string(), k),
        ("acc_capacity".to_string(), k),
        ("flow_route".to_string(), edges * k),
        ("flow_receive".to_string(), edges * k),
        ("migration".to_string(), n * k),
        ("migration_cost".to_string(), 1),
        ("rolling_no_rollback".to_string(), n),
        ("rolling_batch_old".to_string(), n_b),
        ("rolling_batch_cap".to_string(), n_b),
        ("rolling_stay".to_string(), n),
    ];
    if egress {
        constraints.push(("egress".to_string(), k));
    }

    // Reduced LP layout.
    let p0 = 0usize;
    let x0 = n;
    let mut next = x0 + n * k;
    let mut b_idx = vec![None; n];
    for (i, op) in input.operators.iter().enumerate() {
        if op.has_candidate() {
            b_idx[i] = Some(next);
            next += 1;
        }
    }
    let mut e_idx = vec![None; edges * k];
    if egress {
        for i in 0..edges {
            if input.operators[i].egress_rate() <= 0.0 {
                continue;
            }
            for kk in 0..k {
                e_idx[i * k + kk] = Some(next);
                next += 1;
            }
        }
    }
    let mut d_idx = vec![None; n * k];
    for i in 0..n {
        for kk in 0..k {
            if input.current[i][kk] > 0 {
                d_idx[i * k + kk] = Some(next);
                next += 1;
            }
        }
    }
    let t_idx = next;
    next += 1;
    let emax_idx = if egress && e_idx.iter().any(Option::is_some) {
        let e = next;
        next += 1;
        Some(e)
    } else {
        None
    };
    let n_vars = next;

    let big_m: Vec<f64> = (0..n).map(|i| input.cluster_fit(i) as f64).collect();
    let obj_const: f64 = input.lambda2
        * input
            .operators
            .iter()
            .enumerate()
            .map(|(i, op)| op.startup_cost * input.current[i].iter().sum::<usize>() as f64)
            .sum::<f64>();

    let layout = Layout {
        n,
        k,
        p0,
        x0,
        b_idx: b_idx.clone(),
        e_idx,
        d_idx,
        t_idx,
        emax_idx,
        n_vars,
        big_m,
        obj_const,
    };

    let do_ = input.amp_output;
    let mut lower = vec![0.0; n_vars];
    let mut upper = vec![f64::INFINITY; n_vars];
    let mut objective = vec![0.0; n_vars];
    for (i, op) in input.operators.iter().enumerate() {
        lower[p0 + i] = 1.0f64.max(op.n_new as f64);
        upper[p0 + i] = layout.big_m[i];
        for kk in 0..k {
            upper[x0 + i * k + kk] = input.node_fit(i, kk) as f64;
            objective[x0 + i * k + kk] = -input.lambda2 * op.startup_cost;
            if let Some(di) = layout.d_idx[i * k + kk] {
                objective[di] = -input.lambda2 * (op.startup_cost + op.shutdown_cost);
            }
        }
        if let Some(bi) = b_idx[i] {
            upper[bi] = op.b_max.min(op.n_old) as f64;
        }
    }
    objective[t_idx] = 1.0;
    if let Some(em) = emax_idx {
        objective[em] = -input.lambda1;
    }

    // Finite spans everywhere let the LP engine certify optimality from
    // reduced costs alone, which matters on the churn-penalty plateaus.
    let rate_cap = |op: &OperatorMilp| -> f64 {
        op.ut_cur.max(op.ut_cand.unwrap_or(0.0)).max(op.ut_eff.unwrap_or(0.0))
    };
    let t_ub = input
        .operators
        .iter()
        .enumerate()
        .map(|(i, op)| do_ / op.amplification * layout.big_m[i] * rate_cap(op))
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    upper[t_idx] = t_ub;
    if let Some(em) = emax_idx {
        upper[em] = input
            .operators
            .iter()
            .enumerate()
            .take(edges)
            .map(|(i, op)| layout.big_m[i] * op.egress_rate())
            .sum::<f64>()
            .max(0.0);
    }
    for i in 0..n {
        for kk in 0..k {
            if let Some(di) = layout.d_idx[i * k + kk] {
                upper[di] = input.current[i][kk] as f64;
            }
            if i < edges {
                if let Some(ei) = layout.e_idx[i * k + kk] {
                    upper[ei] = input.node_fit(i, kk) as f64;
                }
            }
        }
    }

    let mut rows = Vec::new();
    for (i, op) in input.operators.iter().enumerate() {
        // T <= (Do/Di) [p ut_cur + b (ut_eff - ut_cur) + n_new (ut_cand - ut_cur)]
        let g = do_ / op.amplification;
        let mut coeffs = vec![(t_idx, 1.0), (p0 + i, -g * op.ut_cur)];
        let mut rhs = 0.0;
        if let (Some(cand), Some(eff), Some(bi)) = (op.ut_cand, op.ut_eff, b_idx[i]) {
            coeffs.push((bi, -g * (eff - op.ut_cur)));
            rhs += g * op.n_new as f64 * (cand - op.ut_cur);
        }
        rows.push(LpRow { coeffs, cmp: Cmp::Le, rhs });
    }
    for i in 0..n {
        let mut coeffs: Vec<(usize, f64)> = (0..k).map(|kk| (x0 + i * k + kk, 1.0)).collect();
        coeffs.push((p0 + i, -1.0));
        rows.push(LpRow { coeffs, cmp: Cmp::Eq, rhs: 0.0 });
    }
    for kk in 0..k {
        for (field, cap) in [(0, self_cap(&input.nodes[kk]).0), (1, self_cap(&input.nodes[kk]).1), (2, self_cap(&input.nodes[kk]).2)] {
            let coeffs: Vec<(usize, f64)> = input
                .operators
                .iter()
                .enumerate()
                .filter_map(|(i, op)| {
                    let need = match field {
                        0 => op.cpu,
                        1 => op.mem,
                        _ => op.acc as f64,
                    };
                    (need > 0.0).then_some((x0 + i * k + kk, need))
                })
                .collect();
            if !coeffs.is_empty() {
                rows.push(LpRow { coeffs, cmp: Cmp::Le, rhs: cap });
            }
        }
    }
    if let Some(em) = emax_idx {
        for i in 0..edges {
            for kk in 0..k {
                let Some(ei) = layout.e_idx[i * k + kk] else { continue };
                // x_{i,k} - M x_{i+1,k} - e_{i,k} <= 0. One downstream
                // instance on the node absorbs everything the node can
                // host, so the node-level fit is a sufficient (and well
                // conditioned) big-M.
                let m_gate = input.node_fit(i, kk).max(1) as f64;
                rows.push(LpRow {
                    coeffs: vec![
                        (x0 + i * k + kk, 1.0),
                        (x0 + (i + 1) * k + kk, -m_gate),
                        (ei, -1.0),
                    ],
                    cmp: Cmp::Le,
                    rhs: 0.0,
                });
            }
        }
        for kk in 0..k {
            let mut coeffs: Vec<(usize, f64)> = (0..edges)
                .filter_map(|i| {
                    layout.e_idx[i * k + kk]
                        .map(|ei| (ei, input.operators[i].egress_rate()))
                })
                .collect();
            if coeffs.is_empty() {
                continue;
            }
            coeffs.push((em, -1.0));
            rows.push(LpRow { coeffs, cmp: Cmp::Le, rhs: 0.0 });
        }
    }
    for i in 0..n {
        for kk in 0..k {
            let xbar = input.current[i][kk] as f64;
            if let Some(di) = layout.d_idx[i * k + kk] {
                rows.push(LpRow {
                    coeffs: vec![(x0 + i * k + kk, 1.0), (di, 1.0)],
                    cmp: Cmp::Ge,
                    rhs: xbar,
                });
            }
        }
    }
    for (i, op) in input.operators.iter().enumerate() {
        if let Some(bi) = b_idx[i] {
            rows.push(LpRow {
                coeffs: vec![(p0 + i, 1.0), (bi, -1.0)],
                cmp: Cmp::Ge,
                rhs: op.n_new as f64,
            });
        }
    }

    let lp = LinearProgram { objective, lower, upper, rows };
    Ok(MilpInstance { input, variables, constraints, lp, layout })
}

fn self_cap(node: &NodeSpec) -> (f64, f64, f64) {
    (node.cpu_cap, node.mem_cap, node.acc_cap as f64)
}

/// Closed-form evaluation of an integral assignment, shared by the
/// branch-and-bound completion and (structurally) by the plan validator.
pub fn evaluate_assignment(input: &MilpInput, placement: &[Vec<usize>], batches: &[usize]) -> Plan {
    let n = input.n_ops();
    let k = input.n_nodes();
    let do_ = input.amp_output;

    let parallelism: Vec<usize> = placement.iter().map(|row| row.iter().sum()).collect();
    let mut throughput = f64::INFINITY;
    for (i, op) in input.operators.iter().enumerate() {
        let stay = parallelism[i] as f64 - op.n_new as f64 - batches[i] as f64;
        let mut rate = stay * op.ut_cur;
        if let (Some(cand), Some(eff)) = (op.ut_cand, op.ut_eff) {
            rate += op.n_new as f64 * cand + batches[i] as f64 * eff;
        }
        throughput = throughput.min(do_ / op.amplification * rate);
    }
    throughput = throughput.max(0.0);

    // Minimal-egress routing: consume locally wherever the downstream
    // operator is present, ship the leftovers to its lowest-index node.
    let mut flows = vec![vec![vec![0usize; k]; k]; n.saturating_sub(1)];
    let mut egress_peak = 0.0f64;
    let mut node_egress = vec![0.0f64; k];
    for i in 0..n.saturating_sub(1) {
        let sink = (0..k).find(|&l| placement[i + 1][l] > 0);
        for kk in 0..k {
            let supply = placement[i][kk];
            if supply == 0 {
                continue;
            }
            if placement[i + 1][kk] > 0 {
                flows[i][kk][kk] = supply;
            } else if let Some(l) = sink {
                flows[i][kk][l] = supply;
                node_egress[kk] += supply as f64 * input.operators[i].egress_rate();
            }
        }
    }
    for v in &node_egress {
        egress_peak = egress_peak.max(*v);
    }

    let mut migration_cost = 0.0;
    for (i, op) in input.operators.iter().enumerate() {
        for kk in 0..k {
            let diff = placement[i][kk] as i64 - input.current[i][kk] as i64;
            if diff > 0 {
                migration_cost += op.startup_cost * diff as f64;
            } else {
                migration_cost += op.shutdown_cost * (-diff) as f64;
            }
        }
    }

    let egress_term = if input.model_egress { input.lambda1 * egress_peak } else { 0.0 };
    let objective = throughput - egress_term - input.lambda2 * migration_cost;
    Plan {
        parallelism,
        placement: placement.to_vec(),
        rolling_batch: batches.to_vec(),
        flows,
        objective,
        throughput,
        egress_peak,
        migration_cost,
    }
}

/// Elementwise deployment delta and its migration cost.
pub fn plan_delta(
    placement: &[Vec<usize>],
    current: &[Vec<usize>],
    startup: &[f64],
    shutdown: &[f64],
) -> (Vec<Vec<usize>>, Vec<Vec<usize>>, f64) {
    let n = placement.len();
    let k = placement.first().map_or(0, |r| r.len());
    let mut add = vec![vec![0usize; k]; n];
    let mut rem = vec![vec![0usize; k]; n];
    let mut cost = 0.0;
    for i in 0..n {
        for kk in 0..k {
            let diff = placement[i][kk] as i64 - current[i][kk] as i64;
            if diff > 0 {
                add[i][kk] = diff as usize;
                cost += startup[i] * diff as f64;
            } else {
                rem[i][kk] = (-diff) as usize;
                cost += shutdown[i] * (-diff) as f64;
            }
        }
    }
    (add, rem, cost)
}

impl MilpInstance {
    fn lex_key(&self, placement: &[Vec<usize>], batches: &[usize]) -> Vec<f64> {
        let mut key = Vec::with_capacity(self.layout.n * (self.layout.k + 2));
        for row in placement {
            key.push(row.iter().sum::<usize>() as f64);
        }
        for row in placement {
            for v in row {
                key.push(*v as f64);
            }
        }
        for b in batches {
            key.push(*b as f64);
        }
        key
    }

    fn extract_assignment(&self, values: &[f64]) -> (Vec<Vec<usize>>, Vec<usize>) {
        let l = &self.layout;
        let mut placement = vec![vec![0usize; l.k]; l.n];
        for i in 0..l.n {
            for kk in 0..l.k {
                placement[i][kk] = values[l.x0 + i * l.k + kk].round() as usize;
            }
        }
        let batches: Vec<usize> = (0..l.n)
            .map(|i| l.b_idx[i].map_or(0, |bi| values[bi].round().max(0.0) as usize))
            .collect();
        (placement, batches)
    }
}

/// Rounds a fractional relaxation into a feasible integral assignment:
/// floor the placement, re-add the largest fractional remainders while
/// capacity and branch bounds allow, aim batches at their relaxed values.
fn round_and_repair(
    instance: &MilpInstance,
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> Option<Vec<f64>> {
    let l = &instance.layout;
    let input = &instance.input;
    let (n, k) = (l.n, l.k);

    let mut placement = vec![vec![0usize; k]; n];
    for i in 0..n {
        for kk in 0..k {
            let v = x[l.x0 + i * k + kk].floor().max(lower[l.x0 + i * k + kk]);
            placement[i][kk] = v as usize;
        }
    }
    let mut cpu = vec![0.0; k];
    let mut mem = vec![0.0; k];
    let mut acc = vec![0i64; k];
    for i in 0..n {
        for kk in 0..k {
            let c = placement[i][kk] as f64;
            cpu[kk] += input.operators[i].cpu * c;
            mem[kk] += input.operators[i].mem * c;
            acc[kk] += input.operators[i].acc as i64 * placement[i][kk] as i64;
        }
    }
    let fits = |cpu: &[f64], mem: &[f64], acc: &[i64], i: usize, kk: usize| -> bool {
        let op = &input.operators[i];
        let node = &input.nodes[kk];
        cpu[kk] + op.cpu <= node.cpu_cap + 1e-9
            && mem[kk] + op.mem <= node.mem_cap + 1e-9
            && acc[kk] + op.acc as i64 <= node.acc_cap as i64
    };
    let mut add = |placement: &mut Vec<Vec<usize>>,
                   cpu: &mut Vec<f64>,
                   mem: &mut Vec<f64>,
                   acc: &mut Vec<i64>,
                   i: usize,
                   kk: usize| {
        placement[i][kk] += 1;
        cpu[kk] += input.operators[i].cpu;
        mem[kk] += input.operators[i].mem;
        acc[kk] += input.operators[i].acc as i64;
    };

    // Trim operators above their branched parallelism ceiling, smallest
    // fractional remainder first.
    for i in 0..n {
        let cap = upper[l.p0 + i];
        while (placement[i].iter().sum::<usize>() as f64) > cap {
            let victim = (0..k)
                .filter(|&kk| placement[i][kk] as f64 > lower[l.x0 + i * k + kk])
                .min_by(|&a, &b| {
                    let fa = x[l.x0 + i * k + a].fract();
                    let fb = x[l.x0 + i * k + b].fract();
                    fa.total_cmp(&fb).then(a.cmp(&b))
                })?;
            placement[i][victim] -= 1;
            cpu[victim] -= input.operators[i].cpu;
            mem[victim] -= input.operators[i].mem;
            acc[victim] -= input.operators[i].acc as i64;
        }
    }

    // Meet every operator's parallelism floor.
    for i in 0..n {
        let floor_p = lower[l.p0 + i]
            .max(1.0)
            .max(input.operators[i].n_new as f64);
        while (placement[i].iter().sum::<usize>() as f64) < floor_p {
            let target = (0..k)
                .filter(|&kk| {
                    (placement[i][kk] as f64) < upper[l.x0 + i * k + kk]
                        && fits(&cpu, &mem, &acc, i, kk)
                })
                .max_by(|&a, &b| {
                    let fa = x[l.x0 + i * k + a].fract();
                    let fb = x[l.x0 + i * k + b].fract();
                    fa.total_cmp(&fb).then(b.cmp(&a))
                })?;
            add(&mut placement, &mut cpu, &mut mem, &mut acc, i, target);
        }
    }

    // Spend the remaining fractional mass, largest remainders first.
    let mut cells: Vec<(usize, usize)> = (0..n * k).map(|c| (c / k, c % k)).collect();
    cells.sort_by(|&(ia, ka), &(ib, kb)| {
        let fa = x[l.x0 + ia * k + ka].fract();
        let fb = x[l.x0 + ib * k + kb].fract();
        fb.total_cmp(&fa).then(ia.cmp(&ib)).then(ka.cmp(&kb))
    });
    for (i, kk) in cells {
        if x[l.x0 + i * k + kk].fract() < 1e-9 {
            continue;
        }
        let p_now = placement[i].iter().sum::<usize>() as f64;
        if p_now + 1.0 > upper[l.p0 + i] {
            continue;
        }
        if (placement[i][kk] as f64) < upper[l.x0 + i * k + kk] && fits(&cpu, &mem, &acc, i, kk) {
            add(&mut placement, &mut cpu, &mut mem, &mut acc, i, kk);
        }
    }

    let mut values = vec![0.0; instance.lp.n_vars()];
    for i in 0..n {
        for kk in 0..k {
            values[l.x0 + i * k + kk] = placement[i][kk] as f64;
        }
        values[l.p0 + i] = placement[i].iter().sum::<usize>() as f64;
    }
    for (i, op) in input.operators.iter().enumerate() {
        if let Some(bi) = l.b_idx[i] {
            let p = values[l.p0 + i];
            let hi = upper[bi].min(p - op.n_new as f64).max(0.0);
            if hi < lower[bi] - 1e-9 {
                return None;
            }
            values[bi] = x[bi].round().clamp(lower[bi].max(0.0), hi).floor();
        }
    }
    Some(values)
}

/// Exact solve: branch-and-bound over the parallelism, rolling-batch, and
/// placement variables, every leaf completed in closed form.
pub fn solve_milp(instance: &MilpInstance, node_cap: usize) -> Result<Plan, MilpError> {
    let l = &instance.layout;
    let mut primary: Vec<usize> = (0..l.n).map(|i| l.p0 + i).collect();
    primary.extend(l.b_idx.iter().flatten().copied());
    let secondary: Vec<usize> = (0..l.n * l.k).map(|j| l.x0 + j).collect();

    let complete = |values: &[f64]| -> Option<(f64, Vec<f64>)> {
        let (placement, batches) = instance.extract_assignment(values);
        let plan = evaluate_assignment(&instance.input, &placement, &batches);
        Some((plan.objective, instance.lex_key(&placement, &batches)))
    };
    let repair = |x: &[f64], lower: &[f64], upper: &[f64]| -> Option<Vec<f64>> {
        round_and_repair(instance, x, lower, upper)
    };
    let hooks = ModelHooks { complete: &complete, repair: &repair };

    // The current deployment, when it is itself admissible, makes a strong
    // first incumbent: steady-state rounds then prove optimality in a
    // handful of nodes.
    let mut seeds = Vec::new();
    let current_ok = instance.input.operators.iter().enumerate().all(|(i, op)| {
        let placed: usize = instance.input.current[i].iter().sum();
        placed >= 1 && placed >= op.n_new
    });
    if current_ok {
        let mut values = vec![0.0; instance.lp.n_vars()];
        for i in 0..l.n {
            for kk in 0..l.k {
                values[l.x0 + i * l.k + kk] = instance.input.current[i][kk] as f64;
            }
            values[l.p0 + i] = instance.input.current[i].iter().sum::<usize>() as f64;
        }
        seeds.push(values);
    }

    match branch_and_bound(&instance.lp, &primary, &secondary, l.obj_const, &hooks, &seeds, node_cap) {
        BbOutcome::Optimal { values, .. } => {
            let (placement, batches) = instance.extract_assignment(&values);
            Ok(evaluate_assignment(&instance.input, &placement, &batches))
        }
        BbOutcome::Infeasible => Err(MilpError::Infeasible("no integral assignment".into())),
        BbOutcome::NodeCapExceeded { best } => Err(MilpError::NodeCapExceeded {
            best: best.map(|(values, _)| {
                let (placement, batches) = instance.extract_assignment(&values);
                Box::new(evaluate_assignment(&instance.input, &placement, &batches))
            }),
        }),
        BbOutcome::Numeric => Err(MilpError::Numeric),
    }
}

/// Independent feasibility check of a plan against the declared program.
/// Returns human-readable violations; empty means the plan is valid.
pub fn check_plan(input: &MilpInput, plan: &Plan) -> Vec<String> {
    let mut out = Vec::new();
    let n = input.n_ops();
    let k = input.n_nodes();
    let tol = 1e-6;

    if plan.placement.len() != n || plan.parallelism.len() != n || plan.rolling_batch.len() != n {
        out.push("plan shape mismatch".into());
        return out;
    }
    for (i, op) in input.operators.iter().enumerate() {
        let placed: usize = plan.placement[i].iter().sum();
        if placed != plan.parallelism[i] {
            out.push(format!("op {}: placement sums to {placed}, parallelism {}", op.id, plan.parallelism[i]));
        }
        if plan.parallelism[i] < 1 {
            out.push(format!("op {}: parallelism below one", op.id));
        }
        if plan.parallelism[i] < op.n_new {
            out.push(format!("op {}: rollback of transitioned instances", op.id));
        }
        let b = plan.rolling_batch[i];
        if b > 0 && !op.has_candidate() {
            out.push(format!("op {}: rolling batch without candidate", op.id));
        }
        if b > op.n_old {
            out.push(format!("op {}: batch {b} exceeds old pool {}", op.id, op.n_old));
        }
        if b > op.b_max {
            out.push(format!("op {}: batch {b} exceeds cap {}", op.id, op.b_max));
        }
        if plan.parallelism[i] + 0 < op.n_new + b {
            out.push(format!("op {}: negative stay count", op.id));
        }
    }
    for kk in 0..k {
        let node = &input.nodes[kk];
        let mut cpu = 0.0;
        let mut mem = 0.0;
        let mut acc = 0u32;
        for (i, op) in input.operators.iter().enumerate() {
            cpu += op.cpu * plan.placement[i][kk] as f64;
            mem += op.mem * plan.placement[i][kk] as f64;
            acc += op.acc * plan.placement[i][kk] as u32;
        }
        if cpu > node.cpu_cap + tol {
            out.push(format!("node {}: cpu {cpu} over cap {}", node.id, node.cpu_cap));
        }
        if mem > node.mem_cap + tol {
            out.push(format!("node {}: mem {mem} over cap {}", node.id, node.mem_cap));
        }
        if acc > node.acc_cap {
            out.push(format!("node {}: devices {acc} over cap {}", node.id, node.acc_cap));
        }
    }
    // Flow routing and egress.
    if plan.flows.len() != n.saturating_sub(1) {
        out.push("flow edge count mismatch".into());
    } else {
        let mut node_egress = vec![0.0f64; k];
        for i in 0..n.saturating_sub(1) {
            let big_m = input.cluster_fit(i);
            for kk in 0..k {
                let routed: usize = plan.flows[i][kk].iter().sum();
                if routed != plan.placement[i][kk] {
                    out.push(format!("edge {i}: node {kk} routes {routed} of {}", plan.placement[i][kk]));
                }
                let received: usize = (0..k).map(|src| plan.flows[i][src][kk]).sum();
                if received > big_m * plan.placement[i + 1][kk] {
                    out.push(format!("edge {i}: node {kk} receives flow without consumers"));
                }
                let exported = plan.placement[i][kk].saturating_sub(plan.flows[i][kk][kk]);
                node_egress[kk] += exported as f64 * input.operators[i].egress_rate();
            }
        }
        for (kk, e) in node_egress.iter().enumerate() {
            if *e > plan.egress_peak + tol {
                out.push(format!("node {kk}: egress {e} over plan peak {}", plan.egress_peak));
            }
        }
    }
    // Throughput must not exceed any operator row.
    for (i, op) in input.operators.iter().enumerate() {
        let stay = plan.parallelism[i] as f64 - op.n_new as f64 - plan.rolling_batch[i] as f64;
        let mut rate = stay * op.ut_cur;
        if let (Some(cand), Some(eff)) = (op.ut_cand, op.ut_eff) {
            rate += op.n_new as f64 * cand + plan.rolling_batch[i] as f64 * eff;
        }
        let cap = input.amp_output / op.amplification * rate;
        if plan.throughput > cap + tol {
            out.push(format!("op {}: throughput {} exceeds capacity {cap}", op.id, plan.throughput));
        }
    }
    // Objective bookkeeping.
    let (_, _, mig) = plan_delta(
        &plan.placement,
        &input.current,
        &input.operators.iter().map(|o| o.startup_cost).collect::<Vec<_>>(),
        &input.operators.iter().map(|o| o.shutdown_cost).collect::<Vec<_>>(),
    );
    if (mig - plan.migration_cost).abs() > tol {
        out.push(format!("migration cost {} does not match delta {mig}", plan.migration_cost));
    }
    let egress_term = if input.model_egress { input.lambda1 * plan.egress_peak } else { 0.0 };
    let obj = plan.throughput - egress_term - input.lambda2 * plan.migration_cost;
    if (obj - plan.objective).abs() > tol {
        out.push(format!("objective {} does not decompose ({obj})", plan.objective));
    }
    out
}

/// Brute-force reference: enumerates every integral placement within the
/// node-fit boxes and every admissible batch vector, evaluating the same
/// closed form. Exponential; for oracle-scale instances only.
pub fn solve_by_enumeration(input: &MilpInput) -> Option<Plan> {
    let n = input.n_ops();
    let k = input.n_nodes();
    let mut best: Option<Plan> = None;
    let mut best_key: Vec<f64> = Vec::new();

    let mut placement = vec![vec![0usize; k]; n];
    let node_fits: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..k).map(|kk| input.node_fit(i, kk)).collect())
        .collect();

    fn feasible_node_loads(input: &MilpInput, placement: &[Vec<usize>], kk: usize) -> bool {
        let node = &input.nodes[kk];
        let mut cpu = 0.0;
        let mut mem = 0.0;
        let mut acc = 0u32;
        for (i, op) in input.operators.iter().enumerate() {
            cpu += op.cpu * placement[i][kk] as f64;
            mem += op.mem * placement[i][kk] as f64;
            acc += op.acc * placement[i][kk] as u32;
        }
        cpu <= node.cpu_cap + 1e-9 && mem <= node.mem_cap + 1e-9 && acc <= node.acc_cap
    }

    fn recurse(
        input: &MilpInput,
        node_fits: &[Vec<usize>],
        placement: &mut Vec<Vec<usize>>,
        cell: usize,
        best: &mut Option<Plan>,
        best_key: &mut Vec<f64>,
    ) {
        let n = input.n_ops();
        let k = input.n_nodes();
        if cell == n * k {
            for i in 0..n {
                if placement[i].iter().sum::<usize>() < 1 {
                    return;
                }
            }
            // Batch vectors, lexicographically ascending.
            let b_ranges: Vec<usize> = input
                .operators
                .iter()
                .map(|op| if op.has_candidate() { op.b_max.min(op.n_old) } else { 0 })
                .collect();
            let mut batches = vec![0usize; n];
            loop {
                let ok = (0..n).all(|i| {
                    let p = placement[i].iter().sum::<usize>();
                    p >= input.operators[i].n_new + batches[i]
                        && p >= input.operators[i].n_new.max(1)
                });
                if ok {
                    let plan = evaluate_assignment(input, placement, &batches);
                    let key: Vec<f64> = {
                        let mut key = Vec::new();
                        for row in placement.iter() {
                            key.push(row.iter().sum::<usize>() as f64);
                        }
                        for row in placement.iter() {
                            for v in row {
                                key.push(*v as f64);
                            }
                        }
                        for b in &batches {
                            key.push(*b as f64);
                        }
                        key
                    };
                    let better = match best {
                        None => true,
                        Some(b) => {
                            plan.objective > b.objective + 1e-9
                                || ((plan.objective - b.objective).abs() <= 1e-9 && key < *best_key)
                        }
                    };
                    if better {
                        *best = Some(plan);
                        *best_key = key;
                    }
                }
                // Advance the batch odometer.
                let mut d = 0;
                loop {
                    if d == n {
                        return;
                    }
                    if batches[d] < b_ranges[d] {
                        batches[d] += 1;
                        break;
                    }
                    batches[d] = 0;
                    d += 1;
                }
            }
        } else {
            let (i, kk) = (cell / k, cell % k);
            for v in 0..=node_fits[i][kk] {
                placement[i][kk] = v;
                // Loads grow with v, so the first violation ends the range.
                if !feasible_node_loads(input, placement, kk) {
                    break;
                }
                recurse(input, node_fits, placement, cell + 1, best, best_key);
            }
            placement[i][kk] = 0;
        }
    }

    recurse(&input.clone(), &node_fits, &mut placement, 0, &mut best, &mut best_key);
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::oracle::random_instance;

    fn node(id: usize, cpu: f64, acc: u32) -> NodeSpec {
        NodeSpec { id, cpu_cap: cpu, mem_cap: 1024.0, acc_cap: acc, egress_bandwidth: 100.0 }
    }

    fn op(id: usize, ut: f64, cpu: f64) -> OperatorMilp {
        OperatorMilp {
            id,
            ut_cur: ut,
            ut_cand: None,
            ut_eff: None,
            amplification: 1.0,
            out_record_size: 0.1,
            cpu,
            mem: 1.0,
            acc: 0,
            n_old: 0,
            n_new: 0,
            b_max: 0,
            startup_cost: 1.0,
            shutdown_cost: 1.0,
        }
    }

    fn input(ops: Vec<OperatorMilp>, nodes: Vec<NodeSpec>) -> MilpInput {
        let (n, k) = (ops.len(), nodes.len());
        MilpInput {
            operators: ops,
            amp_output: 1.0,
            nodes,
            current: vec![vec![0; k]; n],
            lambda1: 1e-4,
            lambda2: 1e-6,
            t_sched: 60.0,
            model_egress: true,
        }
    }

    #[test]
    fn effective_throughput_examples() {
        assert_eq!(effective_throughput(10.0, 30.0, 60.0), 5.0);
        assert_eq!(effective_throughput(10.0, 60.0, 60.0), 0.0);
        assert_eq!(effective_throughput(10.0, 90.0, 60.0), 0.0);
        assert_eq!(effective_throughput(10.0, 0.0, 60.0), 10.0);
    }

    #[test]
    fn single_op_single_node_has_no_flow_vars() {
        let inst = build_milp(input(vec![op(1, 10.0, 1.0)], vec![node(1, 4.0, 0)])).unwrap();
        let flow = inst.variables.iter().find(|g| g.name == "flow").unwrap();
        assert_eq!(flow.count, 0);
        assert!(inst.constraints.iter().all(|(name, count)| name != "egress" || *count == 0));
    }

    #[test]
    fn variable_and_constraint_census_for_3x2() {
        let mut ops = vec![op(1, 10.0, 1.0), op(2, 8.0, 1.0), op(3, 6.0, 1.0)];
        ops[1].ut_cand = Some(12.0);
        ops[1].ut_eff = Some(9.0);
        ops[1].b_max = 1;
        let mut inp = input(ops, vec![node(1, 4.0, 0), node(2, 4.0, 0)]);
        inp.current = vec![vec![1, 0], vec![1, 0], vec![1, 0]];
        for o in inp.operators.iter_mut() {
            o.n_old = 1;
        }
        let inst = build_milp(inp).unwrap();
        let count = |name: &str| inst.variables.iter().find(|g| g.name == name).unwrap().count;
        assert_eq!(count("parallelism"), 3);
        assert_eq!(count("placement"), 6);
        assert_eq!(count("rolling_batch"), 1);
        assert_eq!(count("flow"), 2 * 4);
        assert_eq!(count("delta_add"), 6);
        assert_eq!(count("delta_remove"), 6);
        let continuous: usize =
            inst.variables.iter().filter(|g| !g.integer).map(|g| g.count).sum();
        assert_eq!(continuous, 3); // throughput, migration cost, egress peak
        let rows = |name: &str| inst.constraints.iter().find(|(n, _)| n == name).unwrap().1;
        assert_eq!(rows("throughput"), 3);
        assert_eq!(rows("placement"), 3);
        assert_eq!(rows("cpu_capacity"), 2);
        assert_eq!(rows("flow_route"), 4);
        assert_eq!(rows("flow_receive"), 4);
        assert_eq!(rows("egress"), 2);
        assert_eq!(rows("migration"), 6);
    }

    #[test]
    fn two_ops_one_node_balances_capacity() {
        // Node fits one fast op and two slow ones; optimum is (1, 2).
        let inp = input(vec![op(1, 10.0, 2.0), op(2, 5.0, 1.0)], vec![node(1, 4.0, 0)]);
        let inst = build_milp(inp).unwrap();
        let plan = solve_milp(&inst, 100_000).unwrap();
        assert_eq!(plan.parallelism, vec![1, 2]);
        assert!((plan.throughput - 10.0).abs() < 1e-6, "{plan:?}");
        assert!(check_plan(&inst.input, &plan).is_empty());
    }

    #[test]
    fn two_ops_tight_node_prefers_bottleneck_balance() {
        // Only two instances fit in total: best split is (1, 1), T = 5.
        let inp = input(vec![op(1, 10.0, 1.0), op(2, 5.0, 1.0)], vec![node(1, 2.0, 0)]);
        let inst = build_milp(inp).unwrap();
        let plan = solve_milp(&inst, 100_000).unwrap();
        assert_eq!(plan.parallelism, vec![1, 1]);
        assert!((plan.throughput - 5.0).abs() < 1e-6);
    }

    #[test]
    fn worse_candidate_defers_transition() {
        let mut ops = vec![op(1, 10.0, 1.0)];
        ops[0].ut_cand = Some(8.0);
        ops[0].ut_eff = Some(6.0);
        ops[0].b_max = 2;
        ops[0].n_old = 2;
        let mut inp = input(ops, vec![node(1, 4.0, 0)]);
        inp.current = vec![vec![2]];
        let inst = build_milp(inp).unwrap();
        let plan = solve_milp(&inst, 100_000).unwrap();
        assert_eq!(plan.rolling_batch, vec![0], "transition must be deferred");
        let oracle = solve_by_enumeration(&inst.input).unwrap();
        assert!((plan.objective - oracle.objective).abs() < 1e-6);
        assert_eq!(oracle.rolling_batch, vec![0]);
    }

    #[test]
    fn better_candidate_triggers_rolling_batch() {
        let mut ops = vec![op(1, 10.0, 1.0)];
        ops[0].ut_cand = Some(20.0);
        ops[0].ut_eff = Some(15.0);
        ops[0].b_max = 1;
        ops[0].n_old = 2;
        let mut inp = input(ops, vec![node(1, 2.0, 0)]);
        inp.current = vec![vec![2]];
        let inst = build_milp(inp).unwrap();
        let plan = solve_milp(&inst, 100_000).unwrap();
        assert_eq!(plan.rolling_batch, vec![1]);
        // T = (p - b) ut_cur + b ut_eff = 1*10 + 1*15 = 25.
        assert!((plan.throughput - 25.0).abs() < 1e-6, "{plan:?}");
    }

    #[test]
    fn plan_delta_examples() {
        let startup = vec![3.0];
        let shutdown = vec![2.0];
        let (add, rem, cost) = plan_delta(&[vec![2]], &[vec![2]], &startup, &shutdown);
        assert_eq!((add[0][0], rem[0][0], cost), (0, 0, 0.0));
        let (add, rem, cost) = plan_delta(&[vec![5]], &[vec![2]], &startup, &shutdown);
        assert_eq!((add[0][0], rem[0][0]), (3, 0));
        assert_eq!(cost, 9.0);
        let (add, rem, cost) =
            plan_delta(&[vec![5, 0]], &[vec![2, 2]], &startup, &shutdown);
        assert_eq!((add[0][0], rem[0][1]), (3, 2));
        assert_eq!(cost, 9.0 + 4.0);
    }

    #[test]
    fn colocation_wins_when_bandwidth_dominates() {
        // Two chained ops with heavy intermediate data; two nodes, both fit
        // the pair. Splitting them across nodes costs lambda1 * egress.
        let mut ops = vec![op(1, 10.0, 1.0), op(2, 10.0, 1.0)];
        ops[0].out_record_size = 50.0;
        let inp = input(ops, vec![node(1, 2.0, 0), node(2, 2.0, 0)]);
        let inst = build_milp(inp).unwrap();
        let plan = solve_milp(&inst, 100_000).unwrap();
        for kk in 0..2 {
            assert_eq!(
                plan.placement[0][kk], plan.placement[1][kk],
                "communicating pair not co-located: {plan:?}"
            );
        }
        assert!(plan.egress_peak < 1e-9, "{plan:?}");
    }

    #[test]
    fn migration_penalty_anchors_equal_optima() {
        // Chain where the downstream operator is wildly overprovisioned per
        // instance: many placements tie on throughput, so the churn penalty
        // must pin the plan to the current deployment.
        let mut inp = input(
            vec![op(1, 5.0, 1.0), op(2, 100.0, 1.0)],
            vec![node(1, 3.0, 0), node(2, 3.0, 0)],
        );
        inp.current = vec![vec![2, 3], vec![1, 0]];
        for (i, o) in inp.operators.iter_mut().enumerate() {
            o.n_old = inp.current[i].iter().sum();
        }
        let inst = build_milp(inp).unwrap();
        let plan = solve_milp(&inst, 100_000).unwrap();
        assert!((plan.throughput - 25.0).abs() < 1e-6, "{plan:?}");
        assert_eq!(plan.placement, vec![vec![2, 3], vec![1, 0]], "{plan:?}");
        assert_eq!(plan.migration_cost, 0.0);
    }

    #[test]
    fn infeasible_when_an_operator_fits_nowhere() {
        let mut ops = vec![op(1, 10.0, 1.0)];
        ops[0].acc = 2;
        let inp = input(ops, vec![node(1, 4.0, 1)]);
        assert!(matches!(build_milp(inp), Err(MilpError::Infeasible(_))));
    }

    #[test]
    fn matches_enumeration_on_random_small_instances() {
        for seed in 0..25u64 {
            let inp = random_instance(seed, 3, 2);
            let inst = build_milp(inp).unwrap();
            let solved = solve_milp(&inst, 200_000);
            let oracle = solve_by_enumeration(&inst.input);
            match (solved, oracle) {
                (Ok(plan), Some(oracle)) => {
                    assert!(
                        (plan.objective - oracle.objective).abs() < 1e-6,
                        "seed {seed}: solver {} vs oracle {}\nplan {plan:?}\noracle {oracle:?}",
                        plan.objective,
                        oracle.objective
                    );
                    assert!(check_plan(&inst.input, &plan).is_empty(), "seed {seed}");
                }
                (Err(MilpError::Infeasible(_)), None) => {}
                (s, o) => panic!("seed {seed}: solver {s:?} vs oracle {o:?} disagree"),
            }
        }
    }
}
