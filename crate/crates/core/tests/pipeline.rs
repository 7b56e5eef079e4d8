use matchnet::arrivals::{check_cross_arrivals, check_separation, moments};
use matchnet::effective_cost::slopes;
use matchnet::graph::{check_ncond, workload_vector};
use matchnet::instances::{self, Instance};
use matchnet::oracle::{mdp_value_iteration, relaxation_value_iteration, simulate_policy_table, Lattice, TruncatedMdp};
use matchnet::policies::{Policy, RandomizedFlowPolicy};
use matchnet::relaxation::{threshold_cost, tau_star, RelaxationModel};
use matchnet::simulator::{run, CostBasis, SimConfig};
use matchnet::value_function::{build_params, HParams, Tuning};

fn params(inst: &Instance) -> HParams {
    let xi = workload_vector(&inst.graph, &inst.demand_set).unwrap();
    let m = moments(&inst.arrivals, &xi);
    let s = slopes(&inst.graph, &inst.cost, &inst.demand_set).unwrap();
    build_params(m.delta, m.sigma2_delta, &s, &xi, &inst.cost, Tuning::default()).unwrap()
}

#[test]
fn nn_assumptions_hold() {
    let inst = instances::nn();
    let g = &inst.graph;
    let xi = workload_vector(g, &inst.demand_set).unwrap();
    assert!(check_ncond(g, &inst.arrivals.alpha()).unwrap().satisfied);
    let sep = check_separation(g, &inst.arrivals, &xi, 0.19).unwrap();
    assert!(sep.satisfied);
    assert!((sep.designated_drift - 0.007).abs() < 1e-12);
    assert!(check_cross_arrivals(g, &inst.arrivals, &xi, 0.05).satisfied);
    let p = params(&inst);
    assert!((p.hhat.tau_star - 47.6639).abs() < 1e-3);
    assert!((p.hhat.eta_ss - 95.3277).abs() < 1e-3);
}

#[test]
fn path2_bound_chain() {
    let inst = instances::path2();
    let g = &inst.graph;
    let xi = workload_vector(g, &inst.demand_set).unwrap();
    let m = moments(&inst.arrivals, &xi);
    let s = slopes(g, &inst.cost, &inst.demand_set).unwrap();
    let model = RelaxationModel::from_moments(&m, &s, g.max_matches()).unwrap();
    let relax = relaxation_value_iteration(&model, Lattice { w_max: 30 }, 1e-10, 100_000).unwrap();

    let mdp = TruncatedMdp::new(g.clone(), inst.arrivals.clone(), inst.cost.clone(), 8, CostBasis::X);
    let sol = mdp_value_iteration(&mdp, 1e-9, 100_000).unwrap();
    assert!(relax.eta_hat_star <= sol.eta_star + 1e-6);

    let (table_cost, table_se) = simulate_policy_table(&mdp, &sol, 200_000, 4);
    assert!((table_cost - sol.eta_star).abs() <= 4.0 * table_se.max(1e-3));

    let p = params(&inst);
    let ts = p.hhat.tau_star;
    let mut cfg = SimConfig::new(g.clone(), inst.arrivals.clone(), inst.cost.clone(), Policy::hmwt(p, ts), 200_000, 4);
    cfg.cost_basis = CostBasis::X;
    let r = run(&cfg).unwrap();
    assert!(r.avg_cost >= sol.eta_star - 3.0 * r.stderr);
}

#[test]
fn relaxation_vi_agrees_with_best_threshold() {
    let model = RelaxationModel::symmetric(0.2, 3.0, 1.0).unwrap();
    let vi = relaxation_value_iteration(&model, Lattice { w_max: 60 }, 1e-10, 200_000).unwrap();
    let (ts, _) = tau_star(&model).unwrap();
    let best = (0..=40)
        .map(|k| threshold_cost(&model, k as f64 * 0.25).unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(vi.eta_hat_star <= best + 1e-6, "{} vs {best}", vi.eta_hat_star);
    assert!(vi.eta_hat_star >= best - 0.05 * best);
    assert!((vi.threshold_estimate - ts).abs() <= 0.5 * ts.max(1.0));
}

#[test]
fn stable_policies_keep_nn_bounded() {
    let inst = instances::nn();
    let p = params(&inst);
    let ts = p.hhat.tau_star;
    let randomized =
        RandomizedFlowPolicy::new(&inst.graph, &inst.arrivals.alpha(), Some(&inst.demand_set)).unwrap();
    for policy in [
        Policy::hmwt(p, ts),
        Policy::GreedyMaxWeight {
            weights: inst.cost.as_slice().to_vec(),
        },
        Policy::RandomizedFlow(randomized),
    ] {
        let label = policy.label();
        let cfg = SimConfig::new(inst.graph.clone(), inst.arrivals.clone(), inst.cost.clone(), policy, 200_000, 9);
        let r = run(&cfg).unwrap();
        assert!(r.max_buffer < 2_000, "{label}: max buffer {}", r.max_buffer);
    }
}
