use flowsched::sched::milp::*;
use flowsched::model::NodeSpec;
use std::time::Instant;

#[test]
fn probe_root_iters() {
    let n = 20; let k = 16;
    let nodes: Vec<NodeSpec> = (0..k).map(|i| NodeSpec {
        id: i + 1,
        cpu_cap: if i % 2 == 0 { 32.0 } else { 16.0 },
        mem_cap: 256.0,
        acc_cap: if i < 8 { 4 } else { 0 },
        egress_bandwidth: 1000.0,
    }).collect();
    let mut ops = Vec::new();
    for i in 0..n {
        let accel = i % 5 == 2;
        ops.push(OperatorMilp {
            id: i + 1,
            ut_cur: 5.0 + (i as f64 * 7.3) % 40.0,
            ut_cand: None, ut_eff: None,
            amplification: [1.0, 2.0, 4.0, 2.0][i % 4],
            out_record_size: [0.1, 0.4, 0.2][i % 3],
            cpu: if accel { 2.0 } else { 1.0 + (i % 3) as f64 },
            mem: 2.0 + (i % 4) as f64,
            acc: if accel { 1 } else { 0 },
            n_old: 0, n_new: 0, b_max: 0,
            startup_cost: 2.0, shutdown_cost: 1.0,
        });
    }
    let input = MilpInput {
        operators: ops, amp_output: 2.0, nodes,
        current: vec![vec![0; k]; n],
        lambda1: 1e-4, lambda2: 1e-6, t_sched: 60.0, model_egress: true,
    };
    let inst = build_milp(input).unwrap();
    for _ in 0..3 {
        let t = Instant::now();
        match flowsched::sched::simplex::solve_lp(inst.relaxation()) {
            flowsched::sched::simplex::LpResult::Optimal(s) =>
                println!("LP: {} iters {} ms obj {:.6}", s.iterations, t.elapsed().as_millis(), s.objective),
            other => println!("LP: {other:?}"),
        }
    }
    panic!("probe");
}
