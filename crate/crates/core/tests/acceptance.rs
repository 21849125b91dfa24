//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test -p orasp --test acceptance -- 1 5 8`.

#[path = "common/mod.rs"]
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use common::*;
use orasp::dro_solver::*;
use orasp::evaluation::{brute_force_optimum, mco, simulate, Metric, MetricsSummary};
use orasp::instance::{build_catalog_instance, DurationModel, Instance};
use orasp::model_core::{evaluate_recourse_dual, Evaluator, ModelContext, SbcOptions};
use orasp::scenario::{sample_in_sample, sample_out_of_sample, ScenarioSet};
use orasp::sp_solver::{solve_sp_cvar, solve_sp_e, Risk, SolutionBundle, SolveOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn exact_no_sbc() -> SolveOptions {
    SolveOptions { sbc: SbcOptions::none(), ..SolveOptions::exact() }
}

fn deterministic_value(inst: &Instance) -> f64 {
    let sc = ScenarioSet::from_rows(vec![inst.durations.mean.clone()]);
    solve_sp_e(inst, &sc, &SolveOptions::exact()).unwrap().objective
}

fn c1_dual_bounds() -> Outcome {
    let (inst, sol, d) = five_surgery_example();
    let b = dual_bounds(&inst);
    ensure!(b.lambda_bar == 1520.0, "lambda bar {}", b.lambda_bar);
    ensure!(b.mu_bar == vec![180.0], "mu bar {:?}", b.mu_bar);
    ensure!(b.theta_bar == vec![470.0, 470.0], "theta bar {:?}", b.theta_bar);
    let dual = evaluate_recourse_dual(&inst, &sol, &d, &b).map_err(|e| e.to_string())?;
    let last = dual.lambda_at(4, 3);
    ensure!((last - 1520.0).abs() < 1e-6, "last lambda {last}");
    Ok(format!("lambda bar 1520, last lambda {last}"))
}

fn c2_strong_duality() -> Outcome {
    let mut worst = 0.0f64;
    let cases = 120;
    for seed in 0..cases {
        let n = 1 + (seed as usize % 6);
        let inst = desk_instance(1000 + seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sol = random_first_stage(&inst, &mut rng);
        let d = random_durations(&inst, &mut rng);
        let ev = Evaluator { ctx: ModelContext::new(&inst, true).map_err(|e| e.to_string())? };
        let primal = ev.evaluate(&sol, &d).map_err(|e| e.to_string())?.cost;
        let dual = ev.evaluate_dual(&sol, &d, &dual_bounds(&inst)).map_err(|e| e.to_string())?.value;
        let oracle = recourse_by_recursion(&inst, &sol, &d);
        let rel = (primal - dual).abs().max((primal - oracle).abs()) / primal.abs().max(1.0);
        worst = worst.max(rel);
        ensure!(rel <= 1e-6, "seed {seed}: primal {primal} dual {dual} oracle {oracle}");
    }
    Ok(format!("{cases} pairs, worst relative gap {worst:.1e}"))
}

fn c3_saa_vs_enumeration() -> Outcome {
    let cases = [(300, 3, 5), (301, 4, 4), (302, 5, 3), (303, 4, 5), (304, 5, 4), (305, 3, 3)];
    for &(seed, n, nsc) in &cases {
        let inst = desk_instance(seed, n);
        let sc = random_scenarios(&inst, nsc, seed);
        let opts = exact_no_sbc();
        let checks = [
            (Risk::Expectation, solve_sp_e(&inst, &sc, &opts)),
            (Risk::Cvar(0.0), solve_sp_cvar(&inst, &sc, 0.0, &opts)),
            (Risk::Cvar(0.5), solve_sp_cvar(&inst, &sc, 0.5, &opts)),
        ];
        for (risk, got) in checks {
            let got = got.map_err(|e| e.to_string())?.objective;
            let bf = brute_force_optimum(&inst, &sc, risk).map_err(|e| e.to_string())?;
            ensure!(close(got, bf, 1e-6), "seed {seed} {risk:?}: milp {got} enumeration {bf}");
        }
    }
    Ok(format!("{} instances, E, CVaR 0 and CVaR 0.5", cases.len()))
}

fn monotone(trace: &[CcgIteration]) -> bool {
    trace.windows(2).all(|w| w[1].lb >= w[0].lb - 1e-9 && w[1].ub <= w[0].ub + 1e-9)
}

fn c4_ccg_vs_vertex_master() -> Outcome {
    let mut iters = vec![];
    for (seed, n) in [(400, 3), (401, 4), (402, 5), (403, 6)] {
        let inst = desk_instance(seed, n);
        let opts = MasterOptions::exact();
        for risk in [Risk::Expectation, Risk::Cvar(0.95)] {
            let res = ccg(&inst, risk, 1e-4, &opts).map_err(|e| e.to_string())?;
            ensure!(res.converged, "seed {seed} {risk:?}: not converged");
            ensure!(monotone(&res.iterations), "seed {seed} {risk:?}: bounds not monotone");
            let full = solve_full_vertex_master(&inst, risk, &opts).map_err(|e| e.to_string())?;
            let obj = res.final_bundle.objective;
            ensure!(
                (obj - full.objective).abs() <= 1e-4 * full.objective.abs().max(1.0),
                "seed {seed} {risk:?}: ccg {obj} vertex master {}",
                full.objective
            );
            iters.push(res.iterations.len());
        }
    }
    Ok(format!("8 runs, iterations {iters:?}"))
}

fn c5_worst_case() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for seed in 0..24u64 {
        let n = 1 + (seed as usize % 3);
        let inst = desk_instance(500 + seed, n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sol = random_first_stage(&inst, &mut rng);
        let (risk, gamma) = if seed % 4 == 3 { (Risk::Cvar(0.8), 0.8) } else { (Risk::Expectation, 0.0) };
        let wc = worst_case_risk(&inst, &sol, risk, 1e-8).map_err(|e| e.to_string())?;
        let lp = vertex_distribution_value(&inst, &sol, gamma);
        let rel = (wc.value - lp).abs() / lp.abs().max(1.0);
        worst = worst.max(rel);
        ensure!(rel <= 1e-5, "seed {seed} {risk:?}: {} vs {lp}", wc.value);
        cases += 1;
    }
    Ok(format!("{cases} cases, worst relative gap {worst:.1e}"))
}

fn c6_ordering() -> Outcome {
    for (seed, n) in [(600, 4), (601, 4), (602, 5)] {
        let inst = desk_instance(seed, n);
        let sc = random_scenarios(&inst, 5, seed);
        let tol = |v: f64| 1e-6 * v.abs().max(1.0);
        let sp_e = solve_sp_e(&inst, &sc, &exact_no_sbc()).map_err(|e| e.to_string())?.objective;
        let sp_c = solve_sp_cvar(&inst, &sc, 0.95, &exact_no_sbc()).map_err(|e| e.to_string())?.objective;
        ensure!(sp_e <= sp_c + tol(sp_c), "seed {seed}: SP-E {sp_e} > SP-CVaR {sp_c}");
        let opts = MasterOptions::exact();
        let dro_e = ccg(&inst, Risk::Expectation, 1e-4, &opts).map_err(|e| e.to_string())?.final_bundle.objective;
        let dro_c = ccg(&inst, Risk::Cvar(0.95), 1e-4, &opts).map_err(|e| e.to_string())?.final_bundle.objective;
        let det = deterministic_value(&inst);
        let slack = 1e-4 * dro_c.abs().max(1.0);
        ensure!(dro_e <= dro_c + slack, "seed {seed}: DRO-E {dro_e} > DRO-CVaR {dro_c}");
        ensure!(det <= dro_e + slack, "seed {seed}: deterministic {det} > DRO-E {dro_e}");
    }
    Ok("SP-E <= SP-CVaR, deterministic <= DRO-E <= DRO-CVaR on 3 instances".into())
}

fn c7_symmetry_breaking() -> Outcome {
    let inst = build(&[("T", 4, 2, [70.0, 15.0, 40.0, 110.0])], &[(vec!["T"], true), (vec!["T"], false)], 180.0, &Costs::default());
    for seed in 0..3 {
        let sc = exchangeable_scenarios(&inst, 4, 700 + seed);
        let on = solve_sp_e(&inst, &sc, &SolveOptions::exact()).map_err(|e| e.to_string())?.objective;
        let off = solve_sp_e(&inst, &sc, &exact_no_sbc()).map_err(|e| e.to_string())?.objective;
        ensure!(close(on, off, 1e-6), "SP-E seed {seed}: with {on} without {off}");
    }
    let on = ccg(&inst, Risk::Expectation, 1e-4, &MasterOptions::exact()).map_err(|e| e.to_string())?;
    let plain = MasterOptions { solve: exact_no_sbc(), ..MasterOptions::exact() };
    let off = ccg(&inst, Risk::Expectation, 1e-4, &plain).map_err(|e| e.to_string())?;
    let (a, b) = (on.final_bundle.objective, off.final_bundle.objective);
    ensure!((a - b).abs() <= 2e-4 * b.abs().max(1.0), "DRO-E: with {a} without {b}");

    let cat = build_catalog_instance(1, 1).map_err(|e| e.to_string())?;
    let sc = sample_in_sample(&cat.durations, 10, 7).map_err(|e| e.to_string())?;
    let with = SolveOptions { decompose: true, ..SolveOptions::default() };
    let without = SolveOptions { sbc: SbcOptions::none(), ..with.clone() };
    let t = Instant::now();
    let b_on = solve_sp_e(&cat, &sc, &with).map_err(|e| e.to_string())?;
    let t_on = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let b_off = solve_sp_e(&cat, &sc, &without).map_err(|e| e.to_string())?;
    let t_off = t.elapsed().as_secs_f64();
    let detail = format!(
        "catalog 1: nodes {} vs {}, time {t_on:.1}s vs {t_off:.1}s",
        b_on.nodes, b_off.nodes
    );
    ensure!(b_on.nodes <= 2 * b_off.nodes.max(1) || t_on <= 2.0 * t_off, "slower with symmetry breaking: {detail}");
    Ok(detail)
}

/// Paired comparison: mean of a - b and its standard error.
fn paired(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let m = d.iter().sum::<f64>() / n;
    let v = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn c8_out_of_sample() -> Outcome {
    let inst = build_catalog_instance(2, 1).map_err(|e| e.to_string())?;
    let opts = SolveOptions { decompose: true, ..SolveOptions::default() };
    let sc = sample_in_sample(&inst.durations, 30, 8).map_err(|e| e.to_string())?;
    let sp_e = solve_sp_e(&inst, &sc, &opts).map_err(|e| e.to_string())?;
    let sp_c = solve_sp_cvar(&inst, &sc, 0.95, &opts).map_err(|e| e.to_string())?;
    let mopts = MasterOptions { solve: opts.clone(), ..MasterOptions::default() };
    let dro_e = ccg(&inst, Risk::Expectation, 0.01, &mopts).map_err(|e| e.to_string())?.final_bundle;
    let mut lines = vec![];
    let mut failed = vec![];
    for setting in ["I", "IIIc"] {
        let fresh = sample_out_of_sample(&inst.durations, setting.parse().unwrap(), 1000, 88).map_err(|e| e.to_string())?;
        let sim = |b: &SolutionBundle| simulate(&inst, &b.first_stage, &fresh).map_err(|e| e.to_string());
        let (e, c, d): (MetricsSummary, MetricsSummary, MetricsSummary) = (sim(&sp_e)?, sim(&sp_c)?, sim(&dro_e)?);
        let w = |m: &MetricsSummary| m.values(Metric::Waiting).to_vec();
        let o = |m: &MetricsSummary| m.values(Metric::RoomOvertime).to_vec();
        lines.push(format!(
            "{setting}: waiting {:.0}/{:.0}/{:.0} overtime {:.0}/{:.0}/{:.0}",
            e.mean(Metric::Waiting),
            c.mean(Metric::Waiting),
            d.mean(Metric::Waiting),
            e.mean(Metric::RoomOvertime),
            c.mean(Metric::RoomOvertime),
            d.mean(Metric::RoomOvertime)
        ));
        let mut check = |label: &str, (diff, se): (f64, f64)| {
            if diff <= 2.0 * se {
                failed.push(format!("{setting} {label} (diff {diff:.1}, se {se:.1})"));
            }
        };
        check("waiting SP-CVaR < SP-E", paired(&w(&e), &w(&c)));
        check("waiting DRO-E < SP-CVaR", paired(&w(&c), &w(&d)));
        if setting == "I" {
            check("overtime SP-E < DRO-E", paired(&o(&d), &o(&e)));
        }
    }
    let detail = format!("SP-E/SP-CVaR/DRO-E means, {}", lines.join("; "));
    ensure!(failed.is_empty(), "{detail}; failed: {}", failed.join(", "));
    Ok(detail)
}

fn c9_mco() -> Outcome {
    let inst = build_catalog_instance(1, 1).map_err(|e| e.to_string())?;
    let opts = SolveOptions { decompose: true, ..SolveOptions::default() };
    let r = mco(&inst, 5, 50, 1000, 9, &opts).map_err(|e| e.to_string())?;
    let sigma = r.sigma_hat();
    ensure!(r.failures.is_empty(), "failed replications {:?}", r.failures);
    ensure!(r.aoi < 0.05, "AOI {:.4}", r.aoi);
    for (k, m) in r.mu_hat_k.iter().enumerate() {
        ensure!(*m >= r.mu_hat - 3.0 * sigma, "replication {k}: {m} < {} - 3 * {sigma}", r.mu_hat);
    }
    Ok(format!("AOI {:.4}, mu hat {:.0}, sigma hat {:.0}", r.aoi, r.mu_hat, sigma))
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

fn c10_samplers() -> Outcome {
    let dm = DurationModel { mean: vec![99.0], std: vec![53.0], lo: vec![54.0], hi: vec![143.0] };
    let col = |s: &ScenarioSet| s.durations.iter().map(|r| r[0]).collect::<Vec<f64>>();
    let n = 100_000;
    let ins = col(&sample_in_sample(&dm, n, 10).map_err(|e| e.to_string())?);
    ensure!(ins.iter().all(|&x| (54.0..=143.0).contains(&x)), "in-sample draw outside the box");
    let uni = col(&sample_out_of_sample(&dm, "IIIa".parse().unwrap(), n, 11).map_err(|e| e.to_string())?);
    let (m, sd) = mean_sd(&uni);
    ensure!((m - 98.5).abs() < 3.0 * sd / (n as f64).sqrt(), "uniform mean {m}");
    let beta = col(&sample_out_of_sample(&dm, "IV".parse().unwrap(), 2 * n, 12).map_err(|e| e.to_string())?);
    let (bm, bsd) = mean_sd(&beta);
    ensure!(beta.iter().all(|&x| (27.0..=214.5).contains(&x)), "beta draw outside its support");
    ensure!((bm - 99.0).abs() < 3.0 * bsd / (2.0 * n as f64).sqrt(), "beta mean {bm}");
    ensure!((bsd * bsd - 2809.0).abs() / 2809.0 < 0.02, "beta variance {}", bsd * bsd);
    let wide = col(&sample_out_of_sample(&dm, "IIc".parse().unwrap(), 20_000, 13).map_err(|e| e.to_string())?);
    ensure!(wide.iter().all(|&x| (27.0..=214.5).contains(&x)), "widened draw outside its support");
    let again = sample_out_of_sample(&dm, "IIc".parse().unwrap(), 20_000, 13).map_err(|e| e.to_string())?;
    ensure!(col(&again) == wide, "same seed gave different draws");
    Ok(format!("uniform mean {m:.2}, beta mean {bm:.2} variance {:.0}", bsd * bsd))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome); 10] = [
        (1, "dual bounds on the five-surgery example", c1_dual_bounds),
        (2, "recourse strong duality", c2_strong_duality),
        (3, "SAA equals enumeration", c3_saa_vs_enumeration),
        (4, "column-and-constraint generation equals the vertex master", c4_ccg_vs_vertex_master),
        (5, "worst-case risk equals the vertex LP", c5_worst_case),
        (6, "risk ordering", c6_ordering),
        (7, "symmetry breaking keeps the optimum and speed", c7_symmetry_breaking),
        (8, "out-of-sample waiting and overtime pattern", c8_out_of_sample),
        (9, "Monte-Carlo optimality gap", c9_mco),
        (10, "duration samplers", c10_samplers),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let res = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panic: {}", msg.unwrap_or_default()))
        });
        let secs = t.elapsed().as_secs_f64();
        match res {
            Ok(detail) => println!("criterion {id} PASS {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {id} FAIL {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
