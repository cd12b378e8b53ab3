//! Seeded random instance generation for the solver cross-checks.
//!
//! Instances are kept tiny so exhaustive enumeration stays cheap; the point
//! is semantic agreement between the branch-and-bound path and the
//! brute-force path, not scale.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::NodeSpec;
use crate::sched::milp::{effective_throughput, MilpInput, OperatorMilp};

/// Random instance with up to `max_ops` operators and `max_nodes` nodes.
/// Node fits stay small (per-operator parallelism of at most ~4).
pub fn random_instance(seed: u64, max_ops: usize, max_nodes: usize) -> MilpInput {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(1..=max_ops);
    let k = rng.gen_range(1..=max_nodes);

    let nodes: Vec<NodeSpec> = (0..k)
        .map(|i| NodeSpec {
            id: i + 1,
            cpu_cap: rng.gen_range(2..=6) as f64,
            mem_cap: 64.0,
            acc_cap: rng.gen_range(0..=2),
            egress_bandwidth: 100.0,
        })
        .collect();

    let t_sched = 60.0;
    let total_acc: u32 = nodes.iter().map(|nd| nd.acc_cap).sum();
    let mut acc_budget = total_acc;
    let mut operators = Vec::new();
    for i in 0..n {
        let ut_cur = rng.gen_range(2..=20) as f64;
        let tunable = rng.gen_bool(0.4);
        let (ut_cand, ut_eff) = if tunable {
            let cand = rng.gen_range(2..=30) as f64;
            let h_cold = rng.gen_range(0..=80) as f64;
            (Some(cand), Some(effective_throughput(cand, h_cold, t_sched)))
        } else {
            (None, None)
        };
        operators.push(OperatorMilp {
            id: i + 1,
            ut_cur,
            ut_cand,
            ut_eff,
            amplification: [0.5, 1.0, 1.0, 2.0][rng.gen_range(0..4)],
            out_record_size: [0.0, 0.5, 2.0][rng.gen_range(0..3)],
            cpu: rng.gen_range(1..=2) as f64,
            mem: rng.gen_range(1..=4) as f64,
            // Every operator needs at least one instance; keep the joint
            // device demand within the cluster.
            acc: if rng.gen_bool(0.25) && acc_budget > 0 {
                acc_budget -= 1;
                1
            } else {
                0
            },
            n_old: 0,
            n_new: 0,
            b_max: rng.gen_range(0..=2),
            startup_cost: rng.gen_range(0..=5) as f64,
            shutdown_cost: rng.gen_range(0..=3) as f64,
        });
    }

    let mut input = MilpInput {
        operators,
        amp_output: 1.0,
        nodes,
        current: vec![vec![0; k]; n],
        lambda1: 1e-4,
        lambda2: 1e-6,
        t_sched,
        model_egress: true,
    };
    input.amp_output = input.operators.iter().map(|o| o.amplification).fold(1.0, f64::max);

    // A random feasible current deployment; rolling counters match it.
    for i in 0..n {
        let mut remaining = rng.gen_range(1..=3usize);
        for kk in 0..k {
            if remaining == 0 {
                break;
            }
            let headroom = node_headroom(&input, i, kk);
            let take = remaining.min(headroom).min(rng.gen_range(0..=2));
            input.current[i][kk] += take;
            remaining -= take;
        }
        let placed: usize = input.current[i].iter().sum();
        if input.operators[i].ut_cand.is_some() && placed > 0 && rng.gen_bool(0.5) {
            let n_new = rng.gen_range(0..=placed);
            input.operators[i].n_new = n_new;
            input.operators[i].n_old = placed - n_new;
        } else {
            input.operators[i].n_old = placed;
            input.operators[i].n_new = 0;
        }
    }
    input
}

fn node_headroom(input: &MilpInput, i: usize, kk: usize) -> usize {
    let node = &input.nodes[kk];
    let mut cpu = node.cpu_cap;
    let mut mem = node.mem_cap;
    let mut acc = node.acc_cap as i64;
    for (j, op) in input.operators.iter().enumerate() {
        cpu -= op.cpu * input.current[j][kk] as f64;
        mem -= op.mem * input.current[j][kk] as f64;
        acc -= op.acc as i64 * input.current[j][kk] as i64;
    }
    let op = &input.operators[i];
    let mut room = usize::MAX;
    if op.cpu > 0.0 {
        room = room.min((cpu / op.cpu + 1e-9).max(0.0) as usize);
    }
    if op.mem > 0.0 {
        room = room.min((mem / op.mem + 1e-9).max(0.0) as usize);
    }
    if op.acc > 0 {
        room = room.min((acc.max(0) as u32 / op.acc) as usize);
    }
    if room == usize::MAX {
        room = 4;
    }
    room
}
