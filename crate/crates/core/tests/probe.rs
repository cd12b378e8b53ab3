use flowsched::model::NodeSpec;
use flowsched::sched::milp::*;
use std::time::Instant;

fn big_instance(current: Vec<Vec<usize>>) -> MilpInput {
    let n = 20;
    let k = 16;
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
            ut_cand: if i == 7 { Some(30.0) } else { None },
            ut_eff: if i == 7 { Some(22.0) } else { None },
            amplification: [1.0, 2.0, 4.0, 2.0][i % 4],
            out_record_size: if i == 10 { 5.0 } else { [0.1, 0.4, 0.2][i % 3] },
            cpu: if accel { 2.0 } else { 1.0 + (i % 3) as f64 },
            mem: 2.0 + (i % 4) as f64,
            acc: if accel { 1 } else { 0 },
            n_old: 0,
            n_new: 0,
            b_max: if i == 7 { 2 } else { 0 },
            startup_cost: 2.0,
            shutdown_cost: 1.0,
        });
    }
    let placed: Vec<usize> = current.iter().map(|r| r.iter().sum()).collect();
    for (i, op) in ops.iter_mut().enumerate() {
        if op.ut_cand.is_some() {
            op.n_old = placed[i];
        }
    }
    MilpInput {
        operators: ops, amp_output: 2.0, nodes, current,
        lambda1: 1e-4, lambda2: 1e-6, t_sched: 60.0, model_egress: true,
    }
}

#[test]
fn probe_large() {
    let cold = big_instance(vec![vec![0; 16]; 20]);
    let inst = build_milp(cold).unwrap();
    let t0 = Instant::now();
    let plan = match solve_milp(&inst, 300) {
        Ok(p) => p,
        Err(MilpError::NodeCapExceeded { best: Some(p) }) => {
            println!("cold: node cap hit after {} ms (incumbent kept)", t0.elapsed().as_millis());
            *p
        }
        Err(e) => panic!("cold solve: {e}"),
    };
    println!("cold solve: {} ms, T {}", t0.elapsed().as_millis(), plan.throughput);

    // Warm: anchored at the previous round's placement.
    let warm = big_instance(plan.placement.clone());
    let inst2 = build_milp(warm).unwrap();
    let t1 = Instant::now();
    let plan2 = solve_milp(&inst2, 2_000).unwrap();
    println!("warm solve: {} ms, T {}, migration {}", t1.elapsed().as_millis(), plan2.throughput, plan2.migration_cost);
    assert!(check_plan(&inst2.input, &plan2).is_empty());
    panic!("probe");
}
