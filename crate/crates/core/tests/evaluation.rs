mod common;

use common::*;
use orasp::evaluation::*;
use orasp::model_core::FirstStageSolution;
use orasp::scenario::ScenarioSet;
use orasp::sp_solver::{solve_sp_cvar, solve_sp_e, Risk, SolveOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn no_idle() -> Costs {
    Costs { room_idle: 0, anes_idle: 0, ..Costs::default() }
}

#[test]
fn single_surgery_at_the_mean_costs_nothing() {
    let inst = build(&[("T", 1, 1, [99.0, 53.0, 54.0, 143.0])], &[(vec!["T"], true)], 480.0, &no_idle());
    let sol = FirstStageSolution::from_order(&inst, &[0], &[0], &[0], vec![0.0]);
    let sc = ScenarioSet::from_rows(vec![vec![99.0]; 5]);
    let m = simulate(&inst, &sol, &sc).unwrap();
    assert_eq!(m.len(), 5);
    assert!(m.waiting.iter().chain(&m.room_overtime).chain(&m.operational_cost).all(|&x| x == 0.0));
    assert!(m.total_cost.iter().all(|&x| x == m.fixed_cost));
}

#[test]
fn back_to_back_waiting_is_the_overrun() {
    let inst = build(&[("T", 2, 1, [60.0, 15.0, 30.0, 100.0])], &[(vec!["T"], true)], 480.0, &no_idle());
    let sol = FirstStageSolution::from_order(&inst, &[0, 0], &[0, 0], &[0, 1], vec![0.0, 50.0]);
    let d1 = [30.0, 45.0, 50.0, 55.0, 90.0];
    let sc = ScenarioSet::from_rows(d1.iter().map(|&d| vec![d, 60.0]).collect());
    let m = simulate(&inst, &sol, &sc).unwrap();
    for (k, &d) in d1.iter().enumerate() {
        assert!((m.waiting[k] - (d - 50.0).max(0.0)).abs() < 1e-9);
    }
}

#[test]
fn components_reassemble_the_cost() {
    let inst = desk_instance(5, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sol = random_first_stage(&inst, &mut rng);
    let sc = random_scenarios(&inst, 20, 5);
    let m = simulate(&inst, &sol, &sc).unwrap();
    for (k, d) in sc.durations.iter().enumerate() {
        assert!(close(m.operational_cost[k], recourse_by_recursion(&inst, &sol, d), 1e-9));
        assert!((m.total_cost[k] - m.fixed_cost - m.operational_cost[k]).abs() < 1e-9);
    }
    let csv = m.to_csv();
    assert_eq!(csv.lines().count(), 21);
    let hist = m.histogram(Metric::Waiting, 4);
    assert_eq!(hist.iter().map(|h| h.2).sum::<usize>(), 20);
}

#[test]
fn invalid_schedule_is_rejected() {
    let inst = desk_instance(6, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut sol = random_first_stage(&inst, &mut rng);
    sol.x[0] = vec![false; inst.n_anes()];
    let sc = random_scenarios(&inst, 2, 6);
    assert!(simulate(&inst, &sol, &sc).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn simulation_ignores_scenario_order(seed in any::<u64>()) {
        let inst = desk_instance(seed, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sol = random_first_stage(&inst, &mut rng);
        let sc = random_scenarios(&inst, 6, seed);
        let mut rev = sc.durations.clone();
        rev.reverse();
        let a = simulate(&inst, &sol, &sc).unwrap();
        let b = simulate(&inst, &sol, &ScenarioSet::from_rows(rev)).unwrap();
        for m in Metric::ALL {
            prop_assert!((a.mean(m) - b.mean(m)).abs() <= 1e-9 * a.mean(m).abs().max(1.0));
        }
    }

    #[test]
    fn disappointment_falls_as_the_promise_rises(v in 1.0f64..1e6, bump in 0.0f64..1e5, costs in prop::collection::vec(0.0f64..2e6, 1..20)) {
        let lo = disappointment(v, &costs).unwrap();
        let hi = disappointment(v + bump, &costs).unwrap();
        for (a, b) in lo.iter().zip(&hi) {
            prop_assert!(*b <= *a + 1e-12 && *b >= 0.0);
        }
    }
}

#[test]
fn disappointment_examples() {
    assert_eq!(disappointment(100.0, &[100.0, 150.0, 80.0]).unwrap(), vec![0.0, 0.5, 0.0]);
    assert!(disappointment(0.0, &[1.0]).is_err());
    assert!(disappointment(-5.0, &[1.0]).is_err());
}

#[test]
fn mco_without_randomness() {
    let inst = degenerate(desk_instance(9, 4));
    let r = mco(&inst, 3, 5, 10, 1, &SolveOptions::exact()).unwrap();
    assert_eq!(r.v_k.len(), 3);
    assert!(r.v_k.iter().all(|&v| (v - r.v_k[0]).abs() < 1e-6));
    assert!(r.mu_hat_k.iter().all(|&v| (v - r.mu_hat_k[0]).abs() < 1e-6));
    assert!(r.gap.iter().all(|g| g.abs() < 1e-6));
    assert!(r.aoi < 1e-9);
}

#[test]
fn mco_two_replications() {
    let inst = desk_instance(10, 4);
    let r = mco(&inst, 2, 5, 50, 3, &SolveOptions::exact()).unwrap();
    let max_k = r.mu_hat_k.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pooled = (r.sigma2_hat + r.sigma2_hat_k.iter().sum::<f64>() / 2.0).sqrt();
    assert!(r.mu_hat <= max_k + 3.0 * pooled);
    let num: f64 = r.gap.iter().sum();
    let den: f64 = r.mu_hat_k.iter().sum();
    assert!((r.aoi - (num / den).abs()).abs() < 1e-12);
    assert!(mco(&inst, 1, 5, 50, 3, &SolveOptions::exact()).is_err());
    assert_eq!(r.to_csv().lines().count(), 3);
}

#[test]
fn enumeration_on_one_surgery() {
    let inst = desk_instance(12, 1);
    let sc = random_scenarios(&inst, 3, 12);
    let bf = brute_force_optimum(&inst, &sc, Risk::Expectation).unwrap();
    let sp = solve_sp_e(&inst, &sc, &SolveOptions::exact()).unwrap();
    assert!(close(bf, sp.objective, 1e-9));
}

#[test]
fn enumeration_on_three_identical_surgeries() {
    let inst = build(&[("T", 3, 2, [80.0, 20.0, 50.0, 130.0])], &[(vec!["T"], true)], 200.0, &Costs::default());
    let sc = random_scenarios(&inst, 3, 13);
    let bf = brute_force_optimum(&inst, &sc, Risk::Expectation).unwrap();
    let plain = SolveOptions { sbc: orasp::model_core::SbcOptions::none(), ..SolveOptions::exact() };
    assert!(close(bf, solve_sp_e(&inst, &sc, &plain).unwrap().objective, 1e-6));
    let cvar = brute_force_optimum(&inst, &sc, Risk::Cvar(0.5)).unwrap();
    assert!(close(cvar, solve_sp_cvar(&inst, &sc, 0.5, &plain).unwrap().objective, 1e-6));
    // With interchangeable durations the symmetry-broken model keeps the optimum.
    let ex = exchangeable_scenarios(&inst, 3, 13);
    let bf = brute_force_optimum(&inst, &ex, Risk::Expectation).unwrap();
    assert!(close(bf, solve_sp_e(&inst, &ex, &SolveOptions::exact()).unwrap().objective, 1e-6));
}

#[test]
fn enumeration_refuses_large_instances() {
    let inst = desk_instance(14, 8);
    let sc = random_scenarios(&inst, 1, 14);
    assert!(matches!(brute_force_optimum(&inst, &sc, Risk::Expectation), Err(EvalError::TooLarge(8))));
}

#[test]
fn compensated_sum_is_order_free() {
    let xs: Vec<f64> = (0..10_000).map(|k| 1e8 + k as f64 * 0.1).collect();
    let mut ys = xs.clone();
    ys.reverse();
    assert_eq!(kahan_sum(&xs), kahan_sum(&ys));
}
