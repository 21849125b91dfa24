mod common;

use common::*;
use orasp::evaluation::brute_force_optimum;
use orasp::instance::build_catalog_instance;
use orasp::model_core::{evaluate_recourse, SbcOptions};
use orasp::scenario::ScenarioSet;
use orasp::sp_solver::*;
use proptest::prelude::*;

fn exact_no_sbc() -> SolveOptions {
    SolveOptions { sbc: SbcOptions::none(), ..SolveOptions::exact() }
}

#[test]
fn forced_single_surgery() {
    let c = Costs { room_fixed: 900, room_idle: 0, anes_idle: 0, ..Costs::default() };
    let inst = build(&[("T", 1, 1, [100.0, 20.0, 60.0, 140.0])], &[(vec!["T"], true)], 480.0, &c);
    let sc = ScenarioSet::from_rows(vec![vec![60.0], vec![100.0], vec![140.0]]);
    let b = solve_sp_e(&inst, &sc, &SolveOptions::exact()).unwrap();
    assert!(b.first_stage.v[0] && !b.first_stage.y[0]);
    assert!((b.objective - 900.0).abs() < 1e-6);
    assert!((b.fixed_cost - 900.0).abs() < 1e-9);
    assert!(b.risk_term.abs() < 1e-6);
    assert_eq!(b.model_tag, ModelTag::SpE);
}

#[test]
fn single_mean_scenario_is_deterministic() {
    for seed in 0..3 {
        let inst = desk_instance(seed, 4);
        let sc = ScenarioSet::from_rows(vec![inst.durations.mean.clone()]);
        let b = solve_sp_e(&inst, &sc, &SolveOptions::exact()).unwrap();
        let q = evaluate_recourse(&inst, &b.first_stage, &inst.durations.mean).unwrap();
        assert!(close(b.objective, b.first_stage.fixed_cost(&inst) + q.cost, 1e-6));
        assert!(close(b.objective, b.fixed_cost + b.risk_term, 1e-9));
        let bf = brute_force_optimum(&inst, &sc, Risk::Expectation).unwrap();
        assert!(close(b.objective, bf, 1e-6), "seed {seed}: {} vs {bf}", b.objective);
    }
}

#[test]
fn four_surgeries_five_scenarios_match_enumeration() {
    let inst = desk_instance(7, 4);
    let sc = random_scenarios(&inst, 5, 7);
    let b = solve_sp_e(&inst, &sc, &exact_no_sbc()).unwrap();
    let bf = brute_force_optimum(&inst, &sc, Risk::Expectation).unwrap();
    assert!(close(b.objective, bf, 1e-6), "{} vs {bf}", b.objective);
}

#[test]
fn symmetry_breaking_keeps_the_optimum_on_exchangeable_scenarios() {
    let inst = build(&[("T", 4, 2, [70.0, 15.0, 40.0, 110.0])], &[(vec!["T"], true), (vec!["T"], false)], 180.0, &Costs::default());
    let sc = exchangeable_scenarios(&inst, 4, 3);
    let on = solve_sp_e(&inst, &sc, &SolveOptions::exact()).unwrap();
    let off = solve_sp_e(&inst, &sc, &exact_no_sbc()).unwrap();
    let bf = brute_force_optimum(&inst, &sc, Risk::Expectation).unwrap();
    assert!(close(on.objective, off.objective, 1e-6));
    assert!(close(on.objective, bf, 1e-6));
}

#[test]
fn cvar_at_zero_is_the_mean() {
    let inst = desk_instance(11, 4);
    let sc = random_scenarios(&inst, 4, 11);
    let e = solve_sp_e(&inst, &sc, &exact_no_sbc()).unwrap();
    let c0 = solve_sp_cvar(&inst, &sc, 0.0, &exact_no_sbc()).unwrap();
    let c95 = solve_sp_cvar(&inst, &sc, 0.95, &exact_no_sbc()).unwrap();
    assert!(close(e.objective, c0.objective, 1e-6));
    assert!(c95.objective >= e.objective - 1e-6);
    assert_eq!(c95.model_tag, ModelTag::SpCvar);
}

#[test]
fn cvar_of_four_costs() {
    assert!((empirical_cvar(&[0.0, 0.0, 0.0, 100.0], 0.75) - 100.0).abs() < 1e-12);
    assert!((empirical_cvar(&[0.0, 0.0, 0.0, 100.0], 0.0) - 25.0).abs() < 1e-12);
}

#[test]
fn invalid_gamma_is_rejected() {
    let inst = desk_instance(1, 2);
    let sc = random_scenarios(&inst, 2, 1);
    assert!(solve_sp_cvar(&inst, &sc, 1.0, &SolveOptions::default()).is_err());
    assert!(solve_sp_cvar(&inst, &sc, -0.1, &SolveOptions::default()).is_err());
    let empty = ScenarioSet::from_rows(vec![]);
    assert!(solve_sp_e(&inst, &empty, &SolveOptions::default()).is_err());
}

/// tau + mean excess over a fine grid, as an independent reference.
fn cvar_by_grid(costs: &[f64], gamma: f64) -> f64 {
    let lo = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let n = costs.len() as f64;
    (0..=2000)
        .map(|k| lo + (hi - lo) * k as f64 / 2000.0)
        .map(|t| t + costs.iter().map(|&c| (c - t).max(0.0)).sum::<f64>() / (n * (1.0 - gamma)))
        .fold(f64::INFINITY, f64::min)
}

proptest! {
    #[test]
    fn cvar_is_the_grid_minimum(costs in prop::collection::vec(0.0f64..1000.0, 1..12), g in 0.0f64..0.99) {
        let fast = empirical_cvar(&costs, g);
        let slow = cvar_by_grid(&costs, g);
        prop_assert!(fast <= slow + 1e-9);
        prop_assert!(slow - fast <= 1000.0 / 2000.0 / (1.0 - g) + 1e-9);
        let mean = costs.iter().sum::<f64>() / costs.len() as f64;
        let max = costs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(fast >= mean - 1e-9 && fast <= max + 1e-9);
    }
}

#[test]
fn catalog_one_splits_into_three_pools() {
    let inst = build_catalog_instance(1, 1).unwrap();
    let dec = decompose_by_pool(&inst).unwrap();
    assert_eq!(dec.parts.len(), 3);
    let mut types: Vec<Vec<String>> = dec
        .parts
        .iter()
        .map(|p| {
            let mut t: Vec<String> = p.instance.surgeries.iter().map(|s| s.surgery_type.clone()).collect();
            t.dedup();
            t
        })
        .collect();
    types.sort();
    assert_eq!(types, vec![vec!["CARD".to_string()], vec!["MED".into(), "GASTRO".into()], vec!["ORTH".into()]]);
    let total: usize = dec.parts.iter().map(|p| p.surgeries.len()).sum();
    assert_eq!(total, inst.n_surgeries());
}

#[test]
fn single_pool_is_identity() {
    let inst = desk_instance(3, 4);
    let dec = decompose_by_pool(&inst).unwrap();
    assert_eq!(dec.parts.len(), 1);
    assert_eq!(dec.parts[0].surgeries, (0..4).collect::<Vec<_>>());
}

fn two_pools() -> orasp::instance::Instance {
    build(
        &[("A", 2, 1, [60.0, 10.0, 40.0, 90.0]), ("B", 3, 1, [50.0, 10.0, 30.0, 80.0])],
        &[(vec!["A"], true), (vec!["B"], true)],
        150.0,
        &Costs::default(),
    )
}

#[test]
fn decomposed_parts_sum_to_the_whole() {
    let inst = two_pools();
    let sc = random_scenarios(&inst, 4, 5);
    let whole = solve_sp_e(&inst, &sc, &exact_no_sbc()).unwrap();
    let split = solve_sp_e(&inst, &sc, &SolveOptions { decompose: true, ..exact_no_sbc() }).unwrap();
    assert!(close(whole.objective, split.objective, 1e-6));
    assert_eq!(split.first_stage.n(), 5);
    let cw = solve_sp_cvar(&inst, &sc, 0.5, &exact_no_sbc()).unwrap();
    let cs = solve_sp_cvar(&inst, &sc, 0.5, &SolveOptions { decompose: true, ..exact_no_sbc() }).unwrap();
    assert!(cs.objective >= cw.objective - 1e-6);
}

#[test]
fn bundle_round_trips_as_json() {
    let inst = desk_instance(2, 3);
    let sc = random_scenarios(&inst, 2, 2);
    let b = solve_sp_e(&inst, &sc, &SolveOptions::default()).unwrap();
    let text = serde_json::to_string(&b).unwrap();
    let back: SolutionBundle = serde_json::from_str(&text).unwrap();
    assert_eq!(back.first_stage, b.first_stage);
    assert!(b.gap <= 0.02 + 1e-9);
}
