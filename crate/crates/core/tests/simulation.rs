mod common;

use common::tiny_scenario;
use urllc_core::montecarlo::{relax, simulate_dl_queue, simulate_ul, validate_allocation, SimConfig};
use urllc_core::numerics::regularized_gamma_p;
use urllc_core::qos::{effective_bandwidth, queueing_delay_bound, QosBudget};
use urllc_core::scenario::{Scenario, SystemParams};
use urllc_core::solver::{three_step_allocate, Allocation};

fn setup(eps: f64, n_t: u32, n_a: u32) -> (Scenario, Allocation, QosBudget) {
    let p = SystemParams::default();
    let sc = Scenario::from_distances(p.clone(), &[120.0], &[80.0]).unwrap();
    let alloc = Allocation {
        b_ul: vec![2e5],
        b_dl: vec![3e5],
        p_th_ul: vec![0.0],
        p_th_dl: vec![0.0],
        e_b_dl: vec![1.0],
        n_t,
        n_a,
        g_th_ul: 1.0,
        g_th_dl: 1.0,
    };
    let (alloc, budget) = relax(&sc, &alloc, &p.budget().unwrap(), eps).unwrap();
    (sc, alloc, budget)
}

fn cfg(n: u64, seed: u64) -> SimConfig {
    SimConfig { trials: n, frames: n, seed, relaxed_eps: None }
}

#[test]
fn frames_waited_follow_first_hit_law() {
    let (sc, alloc, budget) = setup(1e-2, 8, 3);
    let n = 400_000;
    let s = simulate_ul(&sc.params.link(sc.sensors[0].mu), &alloc, 0, &budget, &cfg(n, 1)).unwrap();
    let p = regularized_gamma_p(alloc.n_t, alloc.g_th_ul);
    for (j, &count) in s.frames_waited.iter().enumerate() {
        let want = if j < 3 { p.powi(j as i32) * (1.0 - p) } else { p.powi(3) };
        let se = (want * (1.0 - want) / n as f64).sqrt();
        let got = count as f64 / n as f64;
        assert!((got - want).abs() <= 3.0 * se, "bin {j}: {got} vs {want}");
    }
}

#[test]
fn uplink_mean_power_matches_exact_expectation() {
    for n_a in [1, 2, 4] {
        let (sc, alloc, budget) = setup(1e-2, 8, n_a);
        let s = simulate_ul(&sc.params.link(sc.sensors[0].mu), &alloc, 0, &budget, &cfg(400_000, 2)).unwrap();
        assert!((s.power.mean - s.power_exact).abs() <= 3.0 * s.power.stderr, "n_a {n_a}: {:?}", s.power);
        assert!(s.power_exact <= s.power_bound);
    }
}

#[test]
fn halved_threshold_fails_drop_verdict() {
    let (sc, alloc, budget) = setup(1e-2, 8, 2);
    let good = validate_allocation(&sc, &alloc, &budget, &cfg(200_000, 3)).unwrap();
    assert!(good.ul_drop_rate.pass);
    let mut bad = alloc.clone();
    bad.g_th_ul *= 0.5;
    let r = validate_allocation(&sc, &bad, &budget, &cfg(200_000, 3)).unwrap();
    assert!(!r.ul_drop_rate.pass && !r.pass);
}

#[test]
fn unthresholded_queue_meets_delay_budget() {
    let (sc, mut alloc, budget) = setup(1e-3, 8, 2);
    let lambda = 0.5;
    let d_q = queueing_delay_bound(&budget, alloc.n_a).unwrap();
    alloc.g_th_dl = 0.0;
    alloc.e_b_dl[0] = effective_bandwidth(lambda, budget.t_frame, d_q, budget.eps_q).unwrap();
    let u = &sc.users[0];
    let s = simulate_dl_queue(&sc.params.link(u.mu), &alloc, 0, lambda, &budget, &cfg(1_000_000, 4)).unwrap();
    assert_eq!(s.dropped, 0.0);
    assert!(s.arrived > 0.0);
    let v = s.violation_rate;
    assert!(v.mean <= budget.eps_q + 3.0 * v.stderr, "{v:?}");
}

#[test]
fn light_traffic_is_nearly_idle() {
    let (sc, alloc, budget) = setup(1e-2, 8, 2);
    let u = &sc.users[0];
    let s = simulate_dl_queue(&sc.params.link(u.mu), &alloc, 0, 1e-6, &budget, &cfg(100_000, 5)).unwrap();
    assert!(s.busy_fraction < 1e-3);
    assert_eq!(s.late, 0.0);
}

#[test]
fn seeds_change_draws_but_not_reproducibility() {
    let (sc, alloc, budget) = setup(1e-2, 8, 2);
    let a = validate_allocation(&sc, &alloc, &budget, &cfg(5000, 6)).unwrap();
    let b = validate_allocation(&sc, &alloc, &budget, &cfg(5000, 6)).unwrap();
    let c = validate_allocation(&sc, &alloc, &budget, &cfg(5000, 7)).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert_ne!(a.ul[0].power, c.ul[0].power);
}

#[test]
fn optimized_allocation_meets_relaxed_budget() {
    let sc = tiny_scenario(SystemParams::default().w_max);
    let p = &sc.params;
    let budget = p.budget().unwrap();
    let report = three_step_allocate(&sc, &budget, &p.circuit(), p.psi).unwrap();
    let sim = SimConfig { trials: 1_000_000, frames: 1_000_000, seed: 8, relaxed_eps: Some(1e-3) };
    let r = validate_allocation(&sc, &report.allocation, &budget, &sim).unwrap();
    assert!(r.overall_loss.pass, "{:?}", r.overall_loss);
    assert!(r.pass, "{:?}", [r.ul_drop_rate, r.dl_drop_rate, r.delay_violation_rate]);
    for s in &r.ul {
        assert!(s.max_power <= s.p_th * (1.0 + 1e-12));
    }
    for s in &r.dl {
        assert!(s.max_power <= s.p_th * (1.0 + 1e-12));
    }
}
