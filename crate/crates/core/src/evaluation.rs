//! Out-of-sample simulation, disappointment, Monte-Carlo optimization gap
//! estimates and an exhaustive oracle for small instances.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{derive_feasibility, Instance};
use crate::milp_adapter::{solve, MilpModel, RowSense, SolveParams, VarId};
use crate::model_core::{check_first_stage, transitive_closure, Evaluator, FirstStageSolution, ModelError};
use crate::scenario::{sample_in_sample, ScenarioError, ScenarioSet};
use crate::sp_solver::{require_solution, solve_sp_e, Risk, SolveError, SolveOptions};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("instance too large for enumeration: {0} surgeries (limit 7)")]
    TooLarge(usize),
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct Kahan {
    sum: f64,
    c: f64,
}

impl Kahan {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum
    }
}

pub fn kahan_sum(xs: &[f64]) -> f64 {
    let mut k = Kahan::default();
    xs.iter().for_each(|&x| k.add(x));
    k.total()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Waiting,
    RoomOvertime,
    AnesOvertime,
    RoomIdle,
    AnesIdle,
    OperationalCost,
    TotalCost,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Waiting,
        Metric::RoomOvertime,
        Metric::AnesOvertime,
        Metric::RoomIdle,
        Metric::AnesIdle,
        Metric::OperationalCost,
        Metric::TotalCost,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Waiting => "waiting",
            Metric::RoomOvertime => "room_overtime",
            Metric::AnesOvertime => "anes_overtime",
            Metric::RoomIdle => "room_idle",
            Metric::AnesIdle => "anes_idle",
            Metric::OperationalCost => "operational_cost",
            Metric::TotalCost => "total_cost",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown metric '{s}'"))
    }
}

/// Per-scenario out-of-sample metrics (minutes, and money per scenario).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub fixed_cost: f64,
    pub waiting: Vec<f64>,
    pub room_overtime: Vec<f64>,
    pub anes_overtime: Vec<f64>,
    pub room_idle: Vec<f64>,
    pub anes_idle: Vec<f64>,
    pub operational_cost: Vec<f64>,
    pub total_cost: Vec<f64>,
}

impl MetricsSummary {
    pub fn len(&self) -> usize {
        self.waiting.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waiting.is_empty()
    }

    pub fn values(&self, m: Metric) -> &[f64] {
        match m {
            Metric::Waiting => &self.waiting,
            Metric::RoomOvertime => &self.room_overtime,
            Metric::AnesOvertime => &self.anes_overtime,
            Metric::RoomIdle => &self.room_idle,
            Metric::AnesIdle => &self.anes_idle,
            Metric::OperationalCost => &self.operational_cost,
            Metric::TotalCost => &self.total_cost,
        }
    }

    pub fn mean(&self, m: Metric) -> f64 {
        kahan_sum(self.values(m)) / self.len().max(1) as f64
    }

    /// Standard error of the mean.
    pub fn std_error(&self, m: Metric) -> f64 {
        let xs = self.values(m);
        let n = xs.len();
        if n < 2 {
            return 0.0;
        }
        let mu = self.mean(m);
        let ss: Vec<f64> = xs.iter().map(|x| (x - mu) * (x - mu)).collect();
        (kahan_sum(&ss) / (n - 1) as f64 / n as f64).sqrt()
    }

    /// One row per scenario.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        let mut header = vec!["scenario"];
        header.extend(Metric::ALL.iter().map(|m| m.name()));
        w.write_record(&header).expect("in-memory write");
        for k in 0..self.len() {
            let mut row = vec![k.to_string()];
            row.extend(Metric::ALL.iter().map(|&m| format!("{:.6}", self.values(m)[k])));
            w.write_record(&row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// metric, mean, std_error rows.
    pub fn summary_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["metric", "mean", "std_error"]).expect("in-memory write");
        for m in Metric::ALL {
            w.write_record([m.name().to_string(), format!("{:.6}", self.mean(m)), format!("{:.6}", self.std_error(m))])
                .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }

    /// Equal-width bins (lower edge, upper edge, count).
    pub fn histogram(&self, m: Metric, bins: usize) -> Vec<(f64, f64, usize)> {
        let xs = self.values(m);
        if xs.is_empty() || bins == 0 {
            return vec![];
        }
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
        let mut counts = vec![0; bins];
        for &x in xs {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
        (0..bins).map(|k| (lo + k as f64 * width, lo + (k + 1) as f64 * width, counts[k])).collect()
    }
}

/// Evaluate a fixed schedule on every scenario.
pub fn simulate(inst: &Instance, sol: &FirstStageSolution, scenarios: &ScenarioSet) -> Result<MetricsSummary, EvalError> {
    let ev = Evaluator::new(inst)?;
    check_first_stage(&ev.ctx, sol)?;
    if scenarios.n_surgeries() != inst.n_surgeries() && !scenarios.is_empty() {
        return Err(EvalError::Domain("scenario width differs from the surgery count".into()));
    }
    let fixed = sol.fixed_cost(inst);
    let mut out = MetricsSummary {
        fixed_cost: fixed,
        waiting: vec![],
        room_overtime: vec![],
        anes_overtime: vec![],
        room_idle: vec![],
        anes_idle: vec![],
        operational_cost: vec![],
        total_cost: vec![],
    };
    for d in &scenarios.durations {
        let o = ev.evaluate(sol, d)?;
        out.waiting.push(o.waiting());
        out.room_overtime.push(o.room_overtime());
        out.anes_overtime.push(o.anes_overtime());
        out.room_idle.push(o.room_idle());
        out.anes_idle.push(o.anes_idle());
        out.operational_cost.push(o.cost);
        out.total_cost.push(fixed + o.cost);
    }
    Ok(out)
}

/// Relative excess of realized cost over the promised value, floored at 0.
pub fn disappointment(v_opt: f64, total_costs: &[f64]) -> Result<Vec<f64>, EvalError> {
    if !(v_opt > 0.0) {
        return Err(EvalError::Domain(format!("promised value {v_opt} must be positive")));
    }
    Ok(total_costs.iter().map(|&v| ((v - v_opt) / v_opt).max(0.0)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McoReport {
    pub k: usize,
    pub n: usize,
    pub n_prime: usize,
    pub seed: u64,
    /// SAA optimal values, one per successful replication.
    pub v_k: Vec<f64>,
    pub mu_hat: f64,
    pub mu_hat_k: Vec<f64>,
    pub sigma2_hat: f64,
    pub sigma2_hat_k: Vec<f64>,
    pub gap: Vec<f64>,
    pub aoi: f64,
    /// Replications that failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

impl McoReport {
    pub fn sigma_hat(&self) -> f64 {
        self.sigma2_hat.sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["replication", "v_k", "mu_hat_k", "sigma2_hat_k", "gap"]).expect("in-memory write");
        for k in 0..self.v_k.len() {
            w.write_record([
                k.to_string(),
                format!("{:.6}", self.v_k[k]),
                format!("{:.6}", self.mu_hat_k[k]),
                format!("{:.6}", self.sigma2_hat_k[k]),
                format!("{:.6}", self.gap[k]),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

fn replication_seeds(seed: u64, k: usize) -> (u64, u64) {
    let base = seed.wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(k as u64 + 1));
    (base, base ^ 0xD1B5_4A32_D192_ED03)
}

/// Monte-Carlo optimization estimates for the expected-cost SAA.
pub fn mco(
    inst: &Instance,
    k: usize,
    n: usize,
    n_prime: usize,
    seed: u64,
    opts: &SolveOptions,
) -> Result<McoReport, EvalError> {
    if k < 2 || n < 1 || n_prime < 2 {
        return Err(EvalError::Domain("need K >= 2, N >= 1, N' >= 2".into()));
    }
    let mut v_k = vec![];
    let mut mu_hat_k = vec![];
    let mut sigma2_hat_k = vec![];
    let mut failures = vec![];
    for rep in 0..k {
        let (s_in, s_out) = replication_seeds(seed, rep);
        let run = || -> Result<(f64, f64, f64), EvalError> {
            let sc = sample_in_sample(&inst.durations, n, s_in)?;
            let b = solve_sp_e(inst, &sc, opts)?;
            let fresh = sample_in_sample(&inst.durations, n_prime, s_out)?;
            let sim = simulate(inst, &b.first_stage, &fresh)?;
            let mu = sim.mean(Metric::TotalCost);
            let dev: Vec<f64> = sim.total_cost.iter().map(|x| (x - mu) * (x - mu)).collect();
            let s2 = kahan_sum(&dev) / (n_prime as f64 * (n_prime as f64 - 1.0));
            Ok((b.objective, mu, s2))
        };
        match run() {
            Ok((v, mu, s2)) => {
                v_k.push(v);
                mu_hat_k.push(mu);
                sigma2_hat_k.push(s2);
            }
            Err(e) => failures.push((rep, e.to_string())),
        }
    }
    let kk = v_k.len();
    if kk < 2 {
        return Err(EvalError::Domain(format!("only {kk} replications succeeded")));
    }
    let mu_hat = kahan_sum(&v_k) / kk as f64;
    let dev: Vec<f64> = v_k.iter().map(|v| (v - mu_hat) * (v - mu_hat)).collect();
    let sigma2_hat = kahan_sum(&dev) / (kk as f64 * (kk as f64 - 1.0));
    let gap: Vec<f64> = mu_hat_k.iter().map(|m| m - mu_hat).collect();
    let denom = kahan_sum(&mu_hat_k);
    let aoi = if denom == 0.0 { 0.0 } else { (kahan_sum(&gap) / denom).abs() };
    Ok(McoReport { k, n, n_prime, seed, v_k, mu_hat, mu_hat_k, sigma2_hat, sigma2_hat_k, gap, aoi, failures })
}

/// All orderings of 0..n.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == used.len() {
            out.push(cur.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = vec![];
    rec(&mut vec![], &mut vec![false; n], &mut out);
    out
}

/// Exhaustive optimum for tiny instances: every compatible (room,
/// anesthesiologist) assignment, every induced precedence structure, and
/// for each one LP over start times and all scenario recourses.
pub fn brute_force_optimum(inst: &Instance, scenarios: &ScenarioSet, risk: Risk) -> Result<f64, EvalError> {
    Ok(brute_force_solution(inst, scenarios, risk)?.0)
}

/// Like [`brute_force_optimum`], also returning an optimal schedule.
pub fn brute_force_solution(
    inst: &Instance,
    scenarios: &ScenarioSet,
    risk: Risk,
) -> Result<(f64, FirstStageSolution), EvalError> {
    let n = inst.n_surgeries();
    if n > 7 {
        return Err(EvalError::TooLarge(n));
    }
    risk.validate()?;
    if scenarios.is_empty() || scenarios.n_surgeries() != n {
        return Err(EvalError::Domain("scenario set does not match the instance".into()));
    }
    let idx = derive_feasibility(inst).map_err(ModelError::from)?;
    let perms = permutations(n);
    let mut best = (f64::INFINITY, None);
    let mut choice = vec![0usize; n];
    let options: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|i| idx.a_of[i].iter().flat_map(|&a| idx.r_of[i].iter().map(move |&r| (a, r))).collect())
        .collect();
    let (room_twin, anes_twin) = twins(inst);
    loop {
        let anes: Vec<usize> = (0..n).map(|i| options[i][choice[i]].0).collect();
        let room: Vec<usize> = (0..n).map(|i| options[i][choice[i]].1).collect();
        let canonical = first_use_ordered(&room, &room_twin) && first_use_ordered(&anes, &anes_twin);
        let mut proto = FirstStageSolution::from_order(inst, &anes, &room, &(0..n).collect::<Vec<_>>(), vec![0.0; n]);
        // Dropping every precedence row bounds all orderings of this assignment from below.
        proto.u = vec![vec![false; n]; n];
        if canonical && proto.fixed_cost(inst) < best.0 && skeleton_lp(inst, &proto, scenarios, risk)?.0 < best.0 {
            let mut seen = HashSet::new();
            for p in &perms {
                let u = induced_precedence(&anes, &room, p);
                if !seen.insert(u) {
                    continue;
                }
                let cand = FirstStageSolution::from_order(inst, &anes, &room, p, vec![0.0; n]);
                let (val, s) = skeleton_lp(inst, &cand, scenarios, risk)?;
                if val < best.0 {
                    let mut sol = cand;
                    sol.s = s;
                    best = (val, Some(sol));
                }
            }
        }
        // odometer over assignment choices
        let mut k = 0;
        loop {
            if k == n {
                let (v, s) = best;
                return s.map(|s| (v, s)).ok_or_else(|| EvalError::Domain("no feasible assignment".into()));
            }
            choice[k] += 1;
            if choice[k] < options[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// For each resource, the previous resource it can be swapped with at no
/// change in cost (identical attributes and compatibilities), if any.
fn twins(inst: &Instance) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let n = inst.n_surgeries();
    let room_col = |r: usize| (0..n).map(|i| inst.compat_room[i][r]).collect::<Vec<_>>();
    let anes_col = |a: usize| (0..n).map(|i| inst.compat_anes[i][a]).collect::<Vec<_>>();
    let same_room = |p: usize, r: usize| {
        let (x, y) = (&inst.rooms[p], &inst.rooms[r]);
        x.horizon_end == y.horizon_end
            && (x.fixed_cost, x.overtime_cost, x.idle_cost) == (y.fixed_cost, y.overtime_cost, y.idle_cost)
            && room_col(p) == room_col(r)
    };
    let same_anes = |p: usize, a: usize| {
        let (x, y) = (&inst.anesthesiologists[p], &inst.anesthesiologists[a]);
        (x.shift_start, x.shift_end, x.is_regular, x.is_on_call) == (y.shift_start, y.shift_end, y.is_regular, y.is_on_call)
            && (x.call_in_cost, x.overtime_cost, x.idle_cost) == (y.call_in_cost, y.overtime_cost, y.idle_cost)
            && anes_col(p) == anes_col(a)
    };
    let rooms = (0..inst.n_rooms()).map(|r| (0..r).rev().find(|&p| same_room(p, r))).collect();
    let anes = (0..inst.n_anes()).map(|a| (0..a).rev().find(|&p| same_anes(p, a))).collect();
    (rooms, anes)
}

/// Canonical labelling: a resource is used only if its twin is, and first
/// by a lower-indexed surgery.
fn first_use_ordered(assign: &[usize], twin: &[Option<usize>]) -> bool {
    let first = |r: usize| assign.iter().position(|&x| x == r).unwrap_or(usize::MAX);
    twin.iter().enumerate().all(|(r, t)| t.is_none_or(|p| first(r) == usize::MAX || first(p) < first(r)))
}

fn induced_precedence(anes: &[usize], room: &[usize], order: &[usize]) -> Vec<Vec<bool>> {
    let n = anes.len();
    let mut u = vec![vec![false; n]; n];
    for (p, &i) in order.iter().enumerate() {
        for &j in &order[p + 1..] {
            if anes[i] == anes[j] || room[i] == room[j] {
                u[i][j] = true;
            }
        }
    }
    transitive_closure(&mut u);
    u
}

/// LP over s and per-scenario recourse for a fixed combinatorial skeleton;
/// only the rows that are active under the skeleton are written.
fn skeleton_lp(
    inst: &Instance,
    sol: &FirstStageSolution,
    scenarios: &ScenarioSet,
    risk: Risk,
) -> Result<(f64, Vec<f64>), EvalError> {
    let n = inst.n_surgeries();
    let nn = scenarios.len() as f64;
    let mut m = MilpModel::new();
    m.objective_constant = sol.fixed_cost(inst);
    let horizon = inst.horizon();
    let s: Vec<VarId> = (0..n)
        .map(|i| {
            let a = sol.anes_of(i).expect("assigned");
            m.continuous(format!("s{i}"), inst.anesthesiologists[a].shift_start, horizon)
        })
        .collect();
    let tau = match risk {
        Risk::Cvar(_) => {
            let t = m.continuous("tau", f64::NEG_INFINITY, f64::INFINITY);
            m.add_obj(t, 1.0);
            Some(t)
        }
        Risk::Expectation => None,
    };
    let inf = f64::INFINITY;
    for (k, d) in scenarios.durations.iter().enumerate() {
        let mut cost: Vec<(VarId, f64)> = vec![];
        let q: Vec<VarId> = (0..n).map(|i| m.continuous(format!("q{k}_{i}"), 0.0, inf)).collect();
        for i in 0..n {
            m.add_row("", vec![(q[i], 1.0), (s[i], -1.0)], RowSense::Ge, 0.0);
            let w = m.continuous("", 0.0, inf);
            m.add_row("", vec![(w, 1.0), (q[i], -1.0), (s[i], 1.0)], RowSense::Ge, 0.0);
            cost.push((w, inst.cw(i)));
            for j in 0..n {
                if sol.u[i][j] {
                    m.add_row("", vec![(q[j], 1.0), (q[i], -1.0)], RowSense::Ge, d[i]);
                }
            }
        }
        for a in 0..inst.n_anes() {
            let an = &inst.anesthesiologists[a];
            let mine: Vec<usize> = (0..n).filter(|&i| sol.x[i][a]).collect();
            let o = m.continuous("", 0.0, inf);
            if an.is_regular {
                for &i in &mine {
                    m.add_row("", vec![(o, 1.0), (q[i], -1.0)], RowSense::Ge, d[i] - an.shift_end);
                }
            }
            let g = m.continuous("", 0.0, inf);
            let base = if an.is_regular { an.shift_end - an.shift_start - mine.iter().map(|&i| d[i]).sum::<f64>() } else { 0.0 };
            m.add_row("", vec![(g, 1.0), (o, -1.0)], RowSense::Ge, base);
            cost.push((o, inst.co_anes(a)));
            cost.push((g, inst.cg_anes(a)));
        }
        for r in 0..inst.n_rooms() {
            let mine: Vec<usize> = (0..n).filter(|&i| sol.z[i][r]).collect();
            let o = m.continuous("", 0.0, inf);
            for &i in &mine {
                m.add_row("", vec![(o, 1.0), (q[i], -1.0)], RowSense::Ge, d[i] - inst.rooms[r].horizon_end);
            }
            let g = m.continuous("", 0.0, inf);
            let base = if sol.v[r] { inst.rooms[r].horizon_end - mine.iter().map(|&i| d[i]).sum::<f64>() } else { 0.0 };
            m.add_row("", vec![(g, 1.0), (o, -1.0)], RowSense::Ge, base);
            cost.push((o, inst.co_room(r)));
            cost.push((g, inst.cg_room(r)));
        }
        match (risk, tau) {
            (Risk::Cvar(g), Some(t)) => {
                let eta = m.continuous("", 0.0, inf);
                m.add_obj(eta, 1.0 / (nn * (1.0 - g)));
                let mut row = vec![(eta, 1.0), (t, 1.0)];
                row.extend(cost.iter().map(|&(v, c)| (v, -c)));
                m.add_row("", row, RowSense::Ge, 0.0);
            }
            _ => {
                for (v, c) in cost {
                    m.add_obj(v, c / nn);
                }
            }
        }
    }
    let res = solve(&m, &SolveParams::exact()).map_err(SolveError::from)?;
    require_solution(&res)?;
    Ok((res.objective, s.iter().map(|v| res.values[v.0]).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disappointment_formula() {
        assert_eq!(disappointment(100.0, &[100.0, 150.0, 80.0]).unwrap(), vec![0.0, 0.5, 0.0]);
        assert!(disappointment(0.0, &[1.0]).is_err());
    }

    #[test]
    fn kahan_beats_naive_drift() {
        let xs = vec![0.1; 1_000_000];
        assert!((kahan_sum(&xs) - 100_000.0).abs() < 1e-8);
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(0), vec![Vec::<usize>::new()]);
    }
}
