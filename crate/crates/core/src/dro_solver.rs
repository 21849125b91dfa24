//! Mean-support distributionally robust models: dual bounds, the
//! adversarial subproblem, the master problem and the column-and-constraint
//! generation loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{DurationModel, Instance};
use crate::milp_adapter::{solve, MilpError, MilpModel, RowSense, SolveParams, SolveStatus, VarId};
use crate::model_core::{
    add_idle_nonneg_vi, add_second_stage, add_symmetry_breaking, build_first_stage, dual_constant, dual_support,
    idle_credit, Evaluator, FirstStageSolution, FirstStageVars, ModelContext, ModelError,
};
use crate::sp_solver::{decompose_by_pool, require_solution, ModelTag, Risk, SolutionBundle, SolveError, SolveOptions};

#[derive(Debug, Error)]
pub enum DroError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("no convergence after {} iterations", .0.len())]
    NonConvergence(Vec<CcgIteration>),
    #[error("subproblem inconsistent: {0}")]
    Inconsistent(String),
    #[error("invalid input: {0}")]
    Input(String),
}

impl From<ModelError> for DroError {
    fn from(e: ModelError) -> Self {
        DroError::Solve(e.into())
    }
}

impl From<MilpError> for DroError {
    fn from(e: MilpError) -> Self {
        DroError::Solve(e.into())
    }
}

/// Mean-support ambiguity set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySet {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AmbiguitySet {
    pub fn new(mean: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, DroError> {
        if mean.len() != lo.len() || mean.len() != hi.len() {
            return Err(DroError::Input("ambiguity set vectors differ in length".into()));
        }
        for i in 0..mean.len() {
            if !(lo[i] <= mean[i] && mean[i] <= hi[i]) {
                return Err(DroError::Input(format!("surgery {i}: mean outside the support")));
            }
        }
        Ok(AmbiguitySet { mean, lo, hi })
    }

    pub fn from_durations(dm: &DurationModel) -> Result<Self, DroError> {
        Self::new(dm.mean.clone(), dm.lo.clone(), dm.hi.clone())
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn vertex(&self, b: &[bool]) -> Vec<f64> {
        (0..self.len()).map(|i| if b[i] { self.hi[i] } else { self.lo[i] }).collect()
    }

    /// All 2^n support vertices, bit i of the index selecting the upper end.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let n = self.len();
        (0..1usize << n)
            .map(|mask| self.vertex(&(0..n).map(|i| mask >> i & 1 == 1).collect::<Vec<_>>()))
            .collect()
    }
}

/// Upper bounds on the recourse dual multipliers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualBounds {
    /// per anesthesiologist: c^g + c^o
    pub mu_bar: Vec<f64>,
    /// per room: c^g + c^o
    pub theta_bar: Vec<f64>,
    pub lambda_bar: f64,
}

/// Bounds with the smallest waiting cost dropped from the sequencing bound.
pub fn dual_bounds(inst: &Instance) -> DualBounds {
    dual_bounds_with(inst, true)
}

pub fn dual_bounds_with(inst: &Instance, drop_min_waiting: bool) -> DualBounds {
    let mu_bar: Vec<f64> = (0..inst.n_anes()).map(|a| inst.cg_anes(a) + inst.co_anes(a)).collect();
    let theta_bar: Vec<f64> = (0..inst.n_rooms()).map(|r| inst.cg_room(r) + inst.co_room(r)).collect();
    let cw: Vec<f64> = (0..inst.n_surgeries()).map(|i| inst.cw(i)).collect();
    let mut wait: f64 = cw.iter().sum();
    if drop_min_waiting && !cw.is_empty() {
        wait -= cw.iter().copied().fold(f64::INFINITY, f64::min);
    }
    let lambda_bar = wait + mu_bar.iter().sum::<f64>() + theta_bar.iter().sum::<f64>();
    DualBounds { mu_bar, theta_bar, lambda_bar }
}

/// Distributional dual variables at a master solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroDuals {
    pub rho: Vec<f64>,
    pub rho0: f64,
    pub psi_lo: Vec<f64>,
    pub psi_hi: Vec<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubproblemSolution {
    /// Attained value of max_d Q(sol, d) - rho.d
    pub value: f64,
    /// Proven upper bound on that maximum.
    pub upper_bound: f64,
    pub b: Vec<bool>,
    pub worst_d: Vec<f64>,
    pub lambda: Vec<(usize, usize, f64)>,
    pub mu: Vec<(usize, usize, f64)>,
    pub theta: Vec<(usize, usize, f64)>,
    pub zeta_l: Vec<(usize, usize, f64)>,
    pub zeta_m: Vec<(usize, usize, f64)>,
    pub zeta_t: Vec<(usize, usize, f64)>,
}

/// max over the support box of Q(sol, d) - rho.d, as a MILP over the
/// recourse duals and a vertex selector b. Multipliers that complementary
/// slackness forces to zero at `sol` are left out.
pub fn solve_subproblem(
    inst: &Instance,
    sol: &FirstStageSolution,
    rho: &[f64],
    bounds: &DualBounds,
    params: &SolveParams,
) -> Result<SubproblemSolution, DroError> {
    let ctx = ModelContext::new(inst, true)?;
    let ev = Evaluator { ctx };
    subproblem(&ev, sol, rho, bounds, params)
}

fn subproblem(
    ev: &Evaluator,
    sol: &FirstStageSolution,
    rho: &[f64],
    bounds: &DualBounds,
    params: &SolveParams,
) -> Result<SubproblemSolution, DroError> {
    let ctx = &ev.ctx;
    let inst = ctx.inst;
    let n = ctx.n();
    if rho.len() != n {
        return Err(DroError::Input("rho length differs from the surgery count".into()));
    }
    let lo = &inst.durations.lo;
    let hi = &inst.durations.hi;
    let dd: Vec<f64> = (0..n).map(|i| hi[i] - lo[i]).collect();
    let sup = dual_support(ctx, sol);
    let mut m = MilpModel::new();
    let b: Vec<VarId> = (0..n).map(|i| m.binary(format!("b[{i}]"))).collect();
    let lam: Vec<VarId> =
        sup.lambda.iter().map(|&(i, j)| m.continuous(format!("lambda[{i},{j}]"), 0.0, bounds.lambda_bar)).collect();
    let mu: Vec<VarId> =
        sup.mu.iter().map(|&(i, a)| m.continuous(format!("mu[{i},{a}]"), 0.0, bounds.mu_bar[a])).collect();
    let th: Vec<VarId> =
        sup.theta.iter().map(|&(i, r)| m.continuous(format!("theta[{i},{r}]"), 0.0, bounds.theta_bar[r])).collect();
    let mccormick = |m: &mut MilpModel, name: String, var: VarId, i: usize, ub: f64| {
        let zeta = m.continuous(name.clone(), 0.0, ub);
        m.add_row(format!("{name}_le"), vec![(zeta, 1.0), (var, -1.0)], RowSense::Le, 0.0);
        m.add_row(format!("{name}_b"), vec![(zeta, 1.0), (b[i], -ub)], RowSense::Le, 0.0);
        m.add_row(format!("{name}_ge"), vec![(zeta, 1.0), (var, -1.0), (b[i], -ub)], RowSense::Ge, -ub);
        zeta
    };
    let zl: Vec<VarId> = sup
        .lambda
        .iter()
        .zip(&lam)
        .map(|(&(i, j), &v)| mccormick(&mut m, format!("zetaL[{i},{j}]"), v, i, bounds.lambda_bar))
        .collect();
    let zm: Vec<VarId> = sup
        .mu
        .iter()
        .zip(&mu)
        .map(|(&(i, a), &v)| mccormick(&mut m, format!("zetaM[{i},{a}]"), v, i, bounds.mu_bar[a]))
        .collect();
    let zt: Vec<VarId> = sup
        .theta
        .iter()
        .zip(&th)
        .map(|(&(i, r), &v)| mccormick(&mut m, format!("zetaT[{i},{r}]"), v, i, bounds.theta_bar[r]))
        .collect();
    // maximisation written as minimisation of the negation
    let obj = |m: &mut MilpModel, v: VarId, c: f64| m.add_obj(v, -c);
    for (k, &(i, j)) in sup.lambda.iter().enumerate() {
        obj(&mut m, lam[k], sol.s[i] - sol.s[j] + lo[i]);
        obj(&mut m, zl[k], dd[i]);
    }
    for (k, &(i, a)) in sup.mu.iter().enumerate() {
        obj(&mut m, mu[k], sol.s[i] - inst.anesthesiologists[a].shift_end + lo[i]);
        obj(&mut m, zm[k], dd[i]);
    }
    for (k, &(i, r)) in sup.theta.iter().enumerate() {
        obj(&mut m, th[k], sol.s[i] - inst.rooms[r].horizon_end + lo[i]);
        obj(&mut m, zt[k], dd[i]);
    }
    for i in 0..n {
        obj(&mut m, b[i], -dd[i] * (idle_credit(ctx, sol, i) + rho[i]));
    }
    let lo_rho: f64 = (0..n).map(|i| lo[i] * rho[i]).sum();
    m.objective_constant = -(dual_constant(ctx, sol, lo) - lo_rho);
    for a in 0..inst.n_anes() {
        let t: Vec<_> = sup.mu.iter().zip(&mu).filter(|((_, x), _)| *x == a).map(|(_, &v)| (v, 1.0)).collect();
        if !t.is_empty() {
            m.add_row(format!("mu_cap[{a}]"), t, RowSense::Le, inst.cg_anes(a) + inst.co_anes(a));
        }
    }
    for r in 0..inst.n_rooms() {
        let t: Vec<_> = sup.theta.iter().zip(&th).filter(|((_, x), _)| *x == r).map(|(_, &v)| (v, 1.0)).collect();
        if !t.is_empty() {
            m.add_row(format!("theta_cap[{r}]"), t, RowSense::Le, inst.cg_room(r) + inst.co_room(r));
        }
    }
    for i in 0..n {
        let mut t = vec![];
        for (k, &(p, q)) in sup.lambda.iter().enumerate() {
            if p == i {
                t.push((lam[k], 1.0));
            }
            if q == i {
                t.push((lam[k], -1.0));
            }
        }
        t.extend(sup.mu.iter().zip(&mu).filter(|((p, _), _)| *p == i).map(|(_, &v)| (v, 1.0)));
        t.extend(sup.theta.iter().zip(&th).filter(|((p, _), _)| *p == i).map(|(_, &v)| (v, 1.0)));
        if !t.is_empty() {
            m.add_row(format!("flow[{i}]"), t, RowSense::Ge, -inst.cw(i));
        }
    }
    let res = solve(&m, params)?;
    if !res.has_solution() {
        return Err(SolveError::Status { status: res.status, message: res.message }.into());
    }
    let bsel: Vec<bool> = b.iter().map(|v| res.values[v.0] > 0.5).collect();
    let worst_d: Vec<f64> = (0..n).map(|i| if bsel[i] { hi[i] } else { lo[i] }).collect();
    let incumbent = -res.objective;
    let upper = if res.status == SolveStatus::OptimalWithinGap { -res.best_bound } else { f64::INFINITY };
    // The incumbent is a dual-feasible value at worst_d, so it cannot exceed
    // the primal recourse there.
    let primal = ev.evaluate(sol, &worst_d)?.cost - dot(rho, &worst_d);
    let tol = 1e-6 * primal.abs().max(1.0);
    if incumbent > primal + tol {
        return Err(DroError::Inconsistent(format!("dual value {incumbent} above primal {primal}")));
    }
    let pick = |ids: &[VarId], keys: &[(usize, usize)]| {
        keys.iter().zip(ids).map(|(&(p, q), v)| (p, q, res.values[v.0])).filter(|t| t.2.abs() > 1e-9).collect()
    };
    Ok(SubproblemSolution {
        value: incumbent.max(primal),
        upper_bound: upper.max(incumbent.max(primal)),
        b: bsel,
        worst_d,
        lambda: pick(&lam, &sup.lambda),
        mu: pick(&mu, &sup.mu),
        theta: pick(&th, &sup.theta),
        zeta_l: pick(&zl, &sup.lambda),
        zeta_m: pick(&zm, &sup.mu),
        zeta_t: pick(&zt, &sup.theta),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Valid inequalities and switches for the master problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MasterOptions {
    pub solve: SolveOptions,
    /// Global lower bound from the deterministic mean-duration model.
    pub global_lb: bool,
    /// Mean-duration recourse block with its lower-bounding cut.
    pub mean_block: bool,
    /// Constant box on rho.
    pub rho_box: bool,
    /// Bounds on rho that depend on the first-stage variables.
    pub rho_var_bounds: bool,
    /// Iteration cap of the generation loop.
    pub max_iterations: usize,
    /// Time limit per master solve, seconds.
    pub master_time_limit: Option<f64>,
}

impl Default for MasterOptions {
    fn default() -> Self {
        MasterOptions {
            solve: SolveOptions::default(),
            global_lb: true,
            mean_block: true,
            rho_box: true,
            rho_var_bounds: false,
            max_iterations: 200,
            master_time_limit: None,
        }
    }
}

impl MasterOptions {
    pub fn exact() -> Self {
        MasterOptions { solve: SolveOptions::exact(), ..Self::default() }
    }

    /// Bare master: no valid inequalities beyond the scenario blocks.
    pub fn plain(solve: SolveOptions) -> Self {
        MasterOptions {
            solve: SolveOptions { idle_vi: false, ..solve },
            global_lb: false,
            mean_block: false,
            rho_box: false,
            ..Self::default()
        }
    }
}

/// Column handles of a built master problem.
pub struct MasterVars {
    pub first_stage: FirstStageVars,
    pub rho: Vec<VarId>,
    pub rho0: Option<VarId>,
    pub psi_lo: Vec<VarId>,
    pub psi_hi: Vec<VarId>,
    pub delta: VarId,
}

impl MasterVars {
    pub fn duals(&self, values: &[f64]) -> DroDuals {
        let get = |v: &[VarId]| v.iter().map(|id| values[id.0]).collect::<Vec<f64>>();
        DroDuals {
            rho: get(&self.rho),
            rho0: self.rho0.map_or(0.0, |v| values[v.0]),
            psi_lo: get(&self.psi_lo),
            psi_hi: get(&self.psi_hi),
            delta: values[self.delta.0],
        }
    }
}

/// Coefficients of the risk expression on (rho0, rho.m, delta).
fn risk_weights(risk: Risk) -> (f64, f64) {
    match risk {
        Risk::Expectation => (0.0, 1.0),
        Risk::Cvar(g) => (1.0 / (1.0 - g) - 1.0, 1.0 / (1.0 - g)),
    }
}

/// Constant lower and upper bounds on every rho component.
pub fn rho_box(inst: &Instance, bounds: &DualBounds) -> (f64, f64) {
    let mx = |v: Vec<f64>| v.into_iter().fold(0.0, f64::max);
    let cga = mx((0..inst.n_anes()).map(|a| inst.cg_anes(a)).collect());
    let cgr = mx((0..inst.n_rooms()).map(|r| inst.cg_room(r)).collect());
    let coa = mx((0..inst.n_anes()).map(|a| inst.co_anes(a)).collect());
    let cor = mx((0..inst.n_rooms()).map(|r| inst.co_room(r)).collect());
    (-cga - cgr, 2.0 * bounds.lambda_bar + coa + cor)
}

/// Master problem over a finite scenario pool. `lower` is the optimal
/// deterministic recourse value used by the global cut, when enabled.
pub fn build_master(
    inst: &Instance,
    pool: &[Vec<f64>],
    risk: Risk,
    opts: &MasterOptions,
    lower: Option<f64>,
) -> Result<(MilpModel, MasterVars), DroError> {
    risk.validate()?;
    let ctx = ModelContext::new(inst, opts.solve.tightened_m)?;
    let n = ctx.n();
    let mean = inst.durations.mean.clone();
    let bounds = dual_bounds(inst);
    let (mut m, fs) = build_first_stage(&ctx, None)?;
    add_symmetry_breaking(&mut m, &ctx, &fs, &opts.solve.sbc)?;
    let (rlo, rhi) = if opts.rho_box { rho_box(inst, &bounds) } else { (f64::NEG_INFINITY, f64::INFINITY) };
    let rho: Vec<VarId> = (0..n).map(|i| m.continuous(format!("rho[{i}]"), rlo, rhi)).collect();
    let delta = m.continuous("delta", f64::NEG_INFINITY, f64::INFINITY);
    let (w0, wm) = risk_weights(risk);
    m.add_obj(delta, 1.0);
    for i in 0..n {
        m.add_obj(rho[i], wm * mean[i]);
    }
    let (mut rho0, mut psi_lo, mut psi_hi) = (None, vec![], vec![]);
    if let Risk::Cvar(_) = risk {
        let r0 = m.continuous("rho0", f64::NEG_INFINITY, f64::INFINITY);
        m.add_obj(r0, w0);
        psi_lo = (0..n).map(|i| m.continuous(format!("psi_lo[{i}]"), 0.0, f64::INFINITY)).collect();
        psi_hi = (0..n).map(|i| m.continuous(format!("psi_hi[{i}]"), 0.0, f64::INFINITY)).collect();
        let mut t = vec![(r0, 1.0)];
        for i in 0..n {
            t.push((psi_lo[i], inst.durations.lo[i]));
            t.push((psi_hi[i], -inst.durations.hi[i]));
            m.add_row(format!("psi[{i}]"), vec![(psi_lo[i], 1.0), (psi_hi[i], -1.0), (rho[i], -1.0)], RowSense::Eq, 0.0);
        }
        m.add_row("rho0", t, RowSense::Ge, 0.0);
        rho0 = Some(r0);
    }
    // risk expression minus delta, as terms
    let risk_terms = |extra: Vec<(VarId, f64)>| {
        let mut t = extra;
        t.push((delta, 1.0));
        for i in 0..n {
            t.push((rho[i], wm * mean[i]));
        }
        if let Some(r0) = rho0 {
            t.push((r0, w0));
        }
        t
    };
    let mut mean_cost = None;
    for (k, d) in pool.iter().enumerate() {
        let tag = format!("#{k}");
        let ss = add_second_stage(&mut m, &ctx, &fs, d, &ctx.bigm, &tag);
        if opts.solve.idle_vi {
            add_idle_nonneg_vi(&mut m, &ctx, &fs, &ss, d, &tag);
        }
        let mut t: Vec<(VarId, f64)> = vec![(delta, 1.0)];
        t.extend(ss.cost.iter().map(|&(v, c)| (v, -c)));
        t.extend((0..n).map(|i| (rho[i], d[i])));
        m.add_row(format!("epi[{k}]"), t, RowSense::Ge, 0.0);
        if mean_cost.is_none() && d.iter().zip(&mean).all(|(a, b)| (a - b).abs() <= 1e-12) {
            mean_cost = Some(ss.cost.clone());
        }
    }
    if opts.mean_block {
        let cost = match mean_cost {
            Some(c) => c,
            None => {
                let ss = add_second_stage(&mut m, &ctx, &fs, &mean, &ctx.bigm, "#mean");
                if opts.solve.idle_vi {
                    add_idle_nonneg_vi(&mut m, &ctx, &fs, &ss, &mean, "#mean");
                }
                ss.cost
            }
        };
        let t = risk_terms(cost.iter().map(|&(v, c)| (v, -c)).collect());
        m.add_row("mean_recourse", t, RowSense::Ge, 0.0);
    }
    if let (true, Some(l)) = (opts.global_lb, lower) {
        m.add_row("global_lb", risk_terms(vec![]), RowSense::Ge, l);
    }
    if opts.rho_var_bounds {
        for i in 0..n {
            let mut lo_t = vec![(rho[i], 1.0)];
            let mut hi_t = vec![(rho[i], 1.0)];
            for &a in &ctx.idx.a_of[i] {
                let x = fs.x[i][a].expect("x");
                lo_t.push((x, inst.cg_anes(a) * inst.h_reg(a)));
                hi_t.push((x, -inst.co_anes(a)));
            }
            for &r in &ctx.idx.r_of[i] {
                let z = fs.z[i][r].expect("z");
                lo_t.push((z, inst.cg_room(r)));
                hi_t.push((z, -inst.co_room(r)));
            }
            let kappa = m.continuous(format!("kappa[{i}]"), 0.0, 2.0);
            let mut kt = vec![(kappa, 1.0)];
            kt.extend((0..n).filter_map(|j| fs.u[i][j]).map(|u| (u, -1.0)));
            m.add_row(format!("kappa[{i}]"), kt, RowSense::Le, 0.0);
            hi_t.push((kappa, -bounds.lambda_bar));
            m.add_row(format!("rho_lo[{i}]"), lo_t, RowSense::Ge, 0.0);
            m.add_row(format!("rho_hi[{i}]"), hi_t, RowSense::Le, 0.0);
        }
    }
    Ok((m, MasterVars { first_stage: fs, rho, rho0, psi_lo, psi_hi, delta }))
}

/// Optimal recourse value of the deterministic model at d = mean, with
/// fixed costs left out (a lower bound over all first stages).
pub fn deterministic_lower_bound(inst: &Instance, opts: &SolveOptions) -> Result<f64, DroError> {
    let ctx = ModelContext::new(inst, opts.tightened_m)?;
    let (mut m, fs) = build_first_stage(&ctx, None)?;
    add_symmetry_breaking(&mut m, &ctx, &fs, &opts.sbc)?;
    m.objective.clear();
    let mean = inst.durations.mean.clone();
    let ss = add_second_stage(&mut m, &ctx, &fs, &mean, &ctx.bigm, "");
    if opts.idle_vi {
        add_idle_nonneg_vi(&mut m, &ctx, &fs, &ss, &mean, "");
    }
    for &(v, c) in &ss.cost {
        m.add_obj(v, c);
    }
    let res = solve(&m, &opts.params)?;
    require_solution(&res)?;
    Ok(res.best_bound)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcgIteration {
    pub iteration: usize,
    pub lb: f64,
    pub ub: f64,
    pub gap: f64,
    /// Pool index of the scenario added after this iteration.
    pub added: Option<usize>,
    pub worst_d: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CcgResult {
    pub iterations: Vec<CcgIteration>,
    pub final_bundle: SolutionBundle,
    pub scenario_pool: Vec<Vec<f64>>,
    pub converged: bool,
    pub epsilon: f64,
    pub duals: DroDuals,
    /// Per-part traces when the instance was decomposed.
    pub parts: Vec<Vec<CcgIteration>>,
}

impl CcgResult {
    /// Delimited trace: iteration, LB, UB, gap, added scenario id.
    pub fn trace_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(["part", "iteration", "lb", "ub", "gap", "added"]).expect("in-memory write");
        let parts: Vec<&Vec<CcgIteration>> =
            if self.parts.is_empty() { vec![&self.iterations] } else { self.parts.iter().collect() };
        for (p, trace) in parts.iter().enumerate() {
            for it in trace.iter() {
                w.write_record([
                    p.to_string(),
                    it.iteration.to_string(),
                    format!("{:.6}", it.lb),
                    format!("{:.6}", it.ub),
                    format!("{:.8}", it.gap),
                    it.added.map_or(String::new(), |k| k.to_string()),
                ])
                .expect("in-memory write");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

fn rel_gap(lb: f64, ub: f64) -> f64 {
    if ub - lb <= 1e-9 * ub.abs().max(1.0) {
        0.0
    } else {
        (ub - lb) / ub.abs().max(1e-9)
    }
}

/// Column-and-constraint generation. Decomposes by pool when
/// `opts.solve.decompose` is set and sums the parts.
pub fn ccg(inst: &Instance, risk: Risk, epsilon: f64, opts: &MasterOptions) -> Result<CcgResult, DroError> {
    if !(epsilon > 0.0) {
        return Err(DroError::Input("epsilon must be positive".into()));
    }
    risk.validate()?;
    if !opts.solve.decompose {
        return ccg_whole(inst, risk, epsilon, opts);
    }
    let dec = decompose_by_pool(inst).map_err(SolveError::from)?;
    let sub = MasterOptions { solve: SolveOptions { decompose: false, ..opts.solve.clone() }, ..opts.clone() };
    let results: Vec<CcgResult> =
        dec.parts.iter().map(|p| ccg_whole(&p.instance, risk, epsilon, &sub)).collect::<Result<_, _>>()?;
    let bundles: Vec<SolutionBundle> = results.iter().map(|r| r.final_bundle.clone()).collect();
    let final_bundle = dec.combine(&bundles);
    let n = inst.n_surgeries();
    let mut duals = DroDuals { rho: vec![0.0; n], rho0: 0.0, psi_lo: vec![], psi_hi: vec![], delta: 0.0 };
    for (part, r) in dec.parts.iter().zip(&results) {
        for (li, &i) in part.surgeries.iter().enumerate() {
            duals.rho[i] = r.duals.rho[li];
        }
        duals.rho0 += r.duals.rho0;
        duals.delta += r.duals.delta;
    }
    let iterations = (0..results.iter().map(|r| r.iterations.len()).max().unwrap_or(0))
        .map(|k| {
            let at = |r: &CcgResult| r.iterations.get(k).or(r.iterations.last()).cloned().expect("trace");
            let (lb, ub) = results.iter().map(at).fold((0.0, 0.0), |acc, it| (acc.0 + it.lb, acc.1 + it.ub));
            CcgIteration { iteration: k + 1, lb, ub, gap: rel_gap(lb, ub), added: None, worst_d: vec![] }
        })
        .collect();
    Ok(CcgResult {
        iterations,
        final_bundle,
        scenario_pool: vec![],
        converged: results.iter().all(|r| r.converged),
        epsilon,
        duals,
        parts: results.into_iter().map(|r| r.iterations).collect(),
    })
}

fn ccg_whole(inst: &Instance, risk: Risk, epsilon: f64, opts: &MasterOptions) -> Result<CcgResult, DroError> {
    let start = Instant::now();
    AmbiguitySet::from_durations(&inst.durations)?;
    let bounds = dual_bounds(inst);
    let ev = Evaluator::new(inst)?;
    let lower = if opts.global_lb { Some(deterministic_lower_bound(inst, &opts.solve)?) } else { None };
    let mut params = opts.solve.params.clone();
    if let Some(t) = opts.master_time_limit {
        params.time_limit = Some(t);
    }
    let mut pool = vec![inst.durations.mean.clone()];
    let (mut lb, mut ub) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut trace: Vec<CcgIteration> = vec![];
    let mut best: Option<(FirstStageSolution, DroDuals, f64, f64, f64)> = None;
    let mut nodes = 0;
    for j in 1..=opts.max_iterations {
        let (model, mv) = build_master(inst, &pool, risk, opts, lower)?;
        let res = solve(&model, &params)?;
        require_solution(&res)?;
        nodes += res.nodes;
        let sol = mv.first_stage.extract(&res.values);
        let duals = mv.duals(&res.values);
        lb = lb.max(res.best_bound);
        let sp = subproblem(&ev, &sol, &duals.rho, &bounds, &SolveParams::exact())?;
        let z_wo_delta = res.objective - duals.delta;
        let cand = z_wo_delta + sp.upper_bound;
        if cand < ub {
            ub = cand;
            best = Some((sol.clone(), duals.clone(), cand, res.objective, res.gap()));
        }
        let gap = rel_gap(lb, ub);
        let duplicate = pool.iter().any(|d| d.iter().zip(&sp.worst_d).all(|(a, b)| (a - b).abs() <= 1e-9));
        let stop = gap < epsilon || duals.delta >= sp.value - 1e-9 * sp.value.abs().max(1.0) || duplicate;
        trace.push(CcgIteration {
            iteration: j,
            lb,
            ub,
            gap,
            added: if stop { None } else { Some(pool.len()) },
            worst_d: sp.worst_d.clone(),
        });
        if stop {
            let (sol, duals, value, _, master_gap) = best.expect("ub set");
            let fixed = sol.fixed_cost(inst);
            let final_bundle = SolutionBundle {
                objective: value,
                fixed_cost: fixed,
                risk_term: value - fixed,
                gap: gap.max(master_gap),
                best_bound: lb,
                wall_time: start.elapsed().as_secs_f64(),
                nodes,
                model_tag: match risk {
                    Risk::Expectation => ModelTag::DroE,
                    Risk::Cvar(_) => ModelTag::DroCvar,
                },
                first_stage: sol,
            };
            return Ok(CcgResult {
                iterations: trace,
                final_bundle,
                scenario_pool: pool,
                converged: true,
                epsilon,
                duals,
                parts: vec![],
            });
        }
        pool.push(sp.worst_d);
    }
    Err(DroError::NonConvergence(trace))
}

/// Solve the master once with every support vertex in the pool.
pub fn solve_full_vertex_master(inst: &Instance, risk: Risk, opts: &MasterOptions) -> Result<SolutionBundle, DroError> {
    let start = Instant::now();
    let amb = AmbiguitySet::from_durations(&inst.durations)?;
    if amb.len() > 12 {
        return Err(DroError::Input("vertex enumeration limited to 12 surgeries".into()));
    }
    let lower = if opts.global_lb { Some(deterministic_lower_bound(inst, &opts.solve)?) } else { None };
    let (model, mv) = build_master(inst, &amb.vertices(), risk, opts, lower)?;
    let res = solve(&model, &opts.solve.params)?;
    require_solution(&res)?;
    let sol = mv.first_stage.extract(&res.values);
    let fixed = sol.fixed_cost(inst);
    Ok(SolutionBundle {
        first_stage: sol,
        objective: res.objective,
        fixed_cost: fixed,
        risk_term: res.objective - fixed,
        gap: res.gap(),
        best_bound: res.best_bound,
        wall_time: start.elapsed().as_secs_f64(),
        nodes: res.nodes,
        model_tag: match risk {
            Risk::Expectation => ModelTag::DroE,
            Risk::Cvar(_) => ModelTag::DroCvar,
        },
    })
}

/// Worst-case risk of a fixed first stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub value: f64,
    pub lower: f64,
    pub rho: Vec<f64>,
    pub cuts: usize,
}

/// Minimise the dual of the worst-case risk over rho (and rho0, psi for
/// CVaR) by a cutting-plane method: each cut is the subproblem value at a
/// trial rho, linear in rho through the reported worst vertex.
pub fn worst_case_risk(
    inst: &Instance,
    sol: &FirstStageSolution,
    risk: Risk,
    tol: f64,
) -> Result<WorstCase, DroError> {
    risk.validate()?;
    let ev = Evaluator::new(inst)?;
    let n = ev.ctx.n();
    let bounds = dual_bounds(inst);
    let amb = AmbiguitySet::from_durations(&inst.durations)?;
    let (rlo, rhi) = rho_box(inst, &bounds);
    let (w0, wm) = risk_weights(risk);
    let mut m = MilpModel::new();
    let rho: Vec<VarId> = (0..n).map(|i| m.continuous(format!("rho[{i}]"), rlo, rhi)).collect();
    let t = m.continuous("t", f64::NEG_INFINITY, f64::INFINITY);
    m.add_obj(t, 1.0);
    for i in 0..n {
        m.add_obj(rho[i], wm * amb.mean[i]);
    }
    if let Risk::Cvar(_) = risk {
        let r0 = m.continuous("rho0", f64::NEG_INFINITY, f64::INFINITY);
        m.add_obj(r0, w0);
        let mut row = vec![(r0, 1.0)];
        for i in 0..n {
            let pl = m.continuous(format!("psi_lo[{i}]"), 0.0, f64::INFINITY);
            let ph = m.continuous(format!("psi_hi[{i}]"), 0.0, f64::INFINITY);
            m.add_row(format!("psi[{i}]"), vec![(pl, 1.0), (ph, -1.0), (rho[i], -1.0)], RowSense::Eq, 0.0);
            row.push((pl, amb.lo[i]));
            row.push((ph, -amb.hi[i]));
        }
        m.add_row("rho0", row, RowSense::Ge, 0.0);
    }
    let add_cut = |m: &mut MilpModel, d: &[f64], q: f64| {
        let mut terms = vec![(t, 1.0)];
        terms.extend((0..n).map(|i| (rho[i], d[i])));
        let k = m.num_rows();
        m.add_row(format!("cut[{k}]"), terms, RowSense::Ge, q);
    };
    let qm = ev.evaluate(sol, &amb.mean)?.cost;
    add_cut(&mut m, &amb.mean, qm);
    let mut best = f64::INFINITY;
    let mut best_rho = vec![0.0; n];
    for cuts in 1..=10_000 {
        let res = solve(&m, &SolveParams::exact())?;
        require_solution(&res)?;
        let r: Vec<f64> = rho.iter().map(|v| res.values[v.0]).collect();
        let sp = subproblem(&ev, sol, &r, &bounds, &SolveParams::exact())?;
        let lower = res.objective;
        let upper = res.objective - res.values[t.0] + sp.upper_bound;
        if upper < best {
            best = upper;
            best_rho = r.clone();
        }
        if best - lower <= tol * best.abs().max(1.0) {
            return Ok(WorstCase { value: best, lower, rho: best_rho, cuts });
        }
        let q = sp.value + dot(&r, &sp.worst_d);
        add_cut(&mut m, &sp.worst_d, q);
    }
    Err(DroError::Inconsistent("cutting plane did not close".into()))
}
