//! Sample-average extensive forms for the expectation and CVaR models, and
//! the per-pool decomposition.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::instance::{derive_feasibility, Instance, InstanceError};
use crate::milp_adapter::{solve, MilpError, MilpModel, RowSense, SolveParams, SolveResult, SolveStatus, VarId};
use crate::model_core::{
    add_idle_nonneg_vi, add_second_stage, add_symmetry_breaking, build_first_stage, FirstStageSolution,
    FirstStageVars, ModelContext, ModelError, SbcOptions,
};
use crate::scenario::ScenarioSet;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("solver ended with status {status:?}: {message}")]
    Status { status: SolveStatus, message: String },
    #[error("invalid input: {0}")]
    Input(String),
}

impl SolveError {
    /// Whether the failure means the model itself has no solution.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, SolveError::Status { status: SolveStatus::Infeasible, .. })
            || matches!(self, SolveError::Model(ModelError::InfeasibleFixing(_)))
    }
}

/// Risk measure applied to the recourse cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Risk {
    Expectation,
    Cvar(f64),
}

impl Risk {
    pub fn validate(self) -> Result<(), SolveError> {
        match self {
            Risk::Cvar(g) if !(0.0..1.0).contains(&g) => Err(SolveError::Input(format!("gamma {g} outside [0, 1)"))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelTag {
    #[serde(rename = "SP-E")]
    SpE,
    #[serde(rename = "SP-CVaR")]
    SpCvar,
    #[serde(rename = "DRO-E")]
    DroE,
    #[serde(rename = "DRO-CVaR")]
    DroCvar,
}

impl std::fmt::Display for ModelTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelTag::SpE => "SP-E",
            ModelTag::SpCvar => "SP-CVaR",
            ModelTag::DroE => "DRO-E",
            ModelTag::DroCvar => "DRO-CVaR",
        })
    }
}

impl std::str::FromStr for ModelTag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "sp-e" => Ok(ModelTag::SpE),
            "sp-cvar" => Ok(ModelTag::SpCvar),
            "dro-e" => Ok(ModelTag::DroE),
            "dro-cvar" => Ok(ModelTag::DroCvar),
            _ => Err(format!("unknown model '{s}'")),
        }
    }
}

/// Switches shared by the SAA and DRO solvers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveOptions {
    pub params: SolveParams,
    pub sbc: SbcOptions,
    pub idle_vi: bool,
    pub tightened_m: bool,
    pub decompose: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            params: SolveParams::default(),
            sbc: SbcOptions::default(),
            idle_vi: true,
            tightened_m: true,
            decompose: false,
        }
    }
}

impl SolveOptions {
    pub fn exact() -> Self {
        SolveOptions { params: SolveParams::exact(), ..Self::default() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionBundle {
    pub first_stage: FirstStageSolution,
    pub objective: f64,
    pub fixed_cost: f64,
    pub risk_term: f64,
    pub gap: f64,
    /// Lower bound on the optimal value.
    pub best_bound: f64,
    pub wall_time: f64,
    pub nodes: u64,
    pub model_tag: ModelTag,
}

/// Reject backend outcomes without a usable incumbent.
pub(crate) fn require_solution(res: &SolveResult) -> Result<(), SolveError> {
    if res.has_solution() {
        Ok(())
    } else {
        Err(SolveError::Status { status: res.status, message: res.message.clone() })
    }
}

/// Extensive form with handles for inspection.
pub struct SaaModel {
    pub model: MilpModel,
    pub first_stage: FirstStageVars,
    pub cost_vars: Vec<Vec<(VarId, f64)>>,
}

/// Build the SAA extensive form on one instance.
pub fn build_saa_model(
    inst: &Instance,
    scenarios: &ScenarioSet,
    risk: Risk,
    opts: &SolveOptions,
) -> Result<SaaModel, SolveError> {
    risk.validate()?;
    let n = scenarios.len();
    if n == 0 {
        return Err(SolveError::Input("no scenarios".into()));
    }
    if scenarios.n_surgeries() != inst.n_surgeries() {
        return Err(SolveError::Input("scenario width differs from the surgery count".into()));
    }
    let ctx = ModelContext::new(inst, opts.tightened_m)?;
    let (mut m, fs) = build_first_stage(&ctx, None)?;
    add_symmetry_breaking(&mut m, &ctx, &fs, &opts.sbc)?;
    let mut cost_vars = vec![];
    let scale = match risk {
        Risk::Expectation => 1.0 / n as f64,
        Risk::Cvar(g) => 1.0 / (n as f64 * (1.0 - g)),
    };
    let tau = match risk {
        Risk::Cvar(_) => {
            let t = m.continuous("tau", f64::NEG_INFINITY, f64::INFINITY);
            m.add_obj(t, 1.0);
            Some(t)
        }
        Risk::Expectation => None,
    };
    for (k, d) in scenarios.durations.iter().enumerate() {
        let tag = format!("#{k}");
        let ss = add_second_stage(&mut m, &ctx, &fs, d, &ctx.bigm, &tag);
        if opts.idle_vi {
            add_idle_nonneg_vi(&mut m, &ctx, &fs, &ss, d, &tag);
        }
        match tau {
            None => {
                for &(v, c) in &ss.cost {
                    m.add_obj(v, c * scale);
                }
            }
            Some(t) => {
                let eta = m.continuous(format!("eta[{k}]"), 0.0, f64::INFINITY);
                m.add_obj(eta, scale);
                let mut terms = vec![(eta, 1.0), (t, 1.0)];
                terms.extend(ss.cost.iter().map(|&(v, c)| (v, -c)));
                m.add_row(format!("cvar[{k}]"), terms, RowSense::Ge, 0.0);
            }
        }
        cost_vars.push(ss.cost);
    }
    Ok(SaaModel { model: m, first_stage: fs, cost_vars })
}

fn solve_whole(inst: &Instance, scenarios: &ScenarioSet, risk: Risk, opts: &SolveOptions) -> Result<SolutionBundle, SolveError> {
    let start = Instant::now();
    let saa = build_saa_model(inst, scenarios, risk, opts)?;
    let res = solve(&saa.model, &opts.params)?;
    require_solution(&res)?;
    let sol = saa.first_stage.extract(&res.values);
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
            Risk::Expectation => ModelTag::SpE,
            Risk::Cvar(_) => ModelTag::SpCvar,
        },
    })
}

fn solve_saa(inst: &Instance, scenarios: &ScenarioSet, risk: Risk, opts: &SolveOptions) -> Result<SolutionBundle, SolveError> {
    if !opts.decompose {
        return solve_whole(inst, scenarios, risk, opts);
    }
    let dec = decompose_by_pool(inst)?;
    let whole = SolveOptions { decompose: false, ..opts.clone() };
    let mut bundles = vec![];
    for part in &dec.parts {
        let sc = scenarios.select_columns(&part.surgeries);
        bundles.push(solve_whole(&part.instance, &sc, risk, &whole)?);
    }
    Ok(dec.combine(&bundles))
}

/// SAA of the expected-cost model.
pub fn solve_sp_e(inst: &Instance, scenarios: &ScenarioSet, opts: &SolveOptions) -> Result<SolutionBundle, SolveError> {
    solve_saa(inst, scenarios, Risk::Expectation, opts)
}

/// SAA of the CVaR model at level `gamma`.
pub fn solve_sp_cvar(
    inst: &Instance,
    scenarios: &ScenarioSet,
    gamma: f64,
    opts: &SolveOptions,
) -> Result<SolutionBundle, SolveError> {
    solve_saa(inst, scenarios, Risk::Cvar(gamma), opts)
}

/// Sample CVaR of a cost vector: min over tau of tau + mean excess / (1 - gamma).
pub fn empirical_cvar(costs: &[f64], gamma: f64) -> f64 {
    let n = costs.len() as f64;
    let excess = |t: f64| t + costs.iter().map(|&c| (c - t).max(0.0)).sum::<f64>() / (n * (1.0 - gamma));
    // piecewise linear and convex in tau with breakpoints at the costs
    costs.iter().map(|&t| excess(t)).fold(f64::INFINITY, f64::min)
}

/// One independent piece of an instance.
#[derive(Debug, Clone)]
pub struct SubInstance {
    pub instance: Instance,
    /// Original indices, ascending.
    pub surgeries: Vec<usize>,
    pub rooms: Vec<usize>,
    pub anesthesiologists: Vec<usize>,
}

/// Partition of an instance into resource-disjoint parts.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub parts: Vec<SubInstance>,
    pub n_surgeries: usize,
    pub n_rooms: usize,
    pub n_anes: usize,
}

fn find(p: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while p[r] != r {
        r = p[r];
    }
    let mut y = x;
    while p[y] != r {
        let next = p[y];
        p[y] = r;
        y = next;
    }
    r
}

/// Split by connected components of the compatibility graph. Parts are
/// ordered by their smallest surgery; resources no surgery can use join
/// the last part.
pub fn decompose_by_pool(inst: &Instance) -> Result<Decomposition, InstanceError> {
    let idx = derive_feasibility(inst)?;
    let (n, nr, na) = (inst.n_surgeries(), inst.n_rooms(), inst.n_anes());
    // nodes: surgeries, then rooms, then anesthesiologists
    let mut p: Vec<usize> = (0..n + nr + na).collect();
    for i in 0..n {
        for &r in &idx.r_of[i] {
            let (a, b) = (find(&mut p, i), find(&mut p, n + r));
            p[a] = b;
        }
        for &a in &idx.a_of[i] {
            let (x, y) = (find(&mut p, i), find(&mut p, n + nr + a));
            p[x] = y;
        }
    }
    let mut order: Vec<usize> = vec![];
    let mut members: BTreeMap<usize, (Vec<usize>, Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut p, i);
        if !order.contains(&root) {
            order.push(root);
        }
        members.entry(root).or_default().0.push(i);
    }
    let mut orphans = (vec![], vec![]);
    for r in 0..nr {
        let root = find(&mut p, n + r);
        match members.get_mut(&root) {
            Some(e) => e.1.push(r),
            None => orphans.0.push(r),
        }
    }
    for a in 0..na {
        let root = find(&mut p, n + nr + a);
        match members.get_mut(&root) {
            Some(e) => e.2.push(a),
            None => orphans.1.push(a),
        }
    }
    let mut groups: Vec<(Vec<usize>, Vec<usize>, Vec<usize>)> =
        order.iter().map(|r| members.remove(r).expect("root")).collect();
    if groups.is_empty() {
        groups.push((vec![], vec![], vec![]));
    }
    let last = groups.last_mut().expect("nonempty");
    last.1.extend(orphans.0);
    last.2.extend(orphans.1);
    last.1.sort_unstable();
    last.2.sort_unstable();
    let parts = groups
        .into_iter()
        .enumerate()
        .map(|(k, (is, rs, as_))| SubInstance {
            instance: sub_instance(inst, &is, &rs, &as_, k),
            surgeries: is,
            rooms: rs,
            anesthesiologists: as_,
        })
        .collect();
    Ok(Decomposition { parts, n_surgeries: n, n_rooms: nr, n_anes: na })
}

fn sub_instance(inst: &Instance, is: &[usize], rs: &[usize], as_: &[usize], k: usize) -> Instance {
    Instance {
        name: format!("{}-part{}", inst.name, k + 1),
        rate_minutes: inst.rate_minutes,
        surgeries: is.iter().map(|&i| inst.surgeries[i].clone()).collect(),
        rooms: rs.iter().map(|&r| inst.rooms[r].clone()).collect(),
        anesthesiologists: as_.iter().map(|&a| inst.anesthesiologists[a].clone()).collect(),
        compat_anes: is.iter().map(|&i| as_.iter().map(|&a| inst.compat_anes[i][a]).collect()).collect(),
        compat_room: is.iter().map(|&i| rs.iter().map(|&r| inst.compat_room[i][r]).collect()).collect(),
        durations: inst.durations.select(is),
    }
}

impl Decomposition {
    /// Reassemble part solutions into one solution of the full instance.
    pub fn recombine(&self, sols: &[FirstStageSolution]) -> FirstStageSolution {
        let n = self.n_surgeries;
        let mut out = FirstStageSolution {
            x: vec![vec![false; self.n_anes]; n],
            z: vec![vec![false; self.n_rooms]; n],
            y: vec![false; self.n_anes],
            v: vec![false; self.n_rooms],
            u: vec![vec![false; n]; n],
            alpha: vec![],
            beta: vec![],
            s: vec![0.0; n],
        };
        for (part, sol) in self.parts.iter().zip(sols) {
            let (is, rs, as_) = (&part.surgeries, &part.rooms, &part.anesthesiologists);
            for (li, &i) in is.iter().enumerate() {
                out.s[i] = sol.s[li];
                for (la, &a) in as_.iter().enumerate() {
                    out.x[i][a] = sol.x[li][la];
                }
                for (lr, &r) in rs.iter().enumerate() {
                    out.z[i][r] = sol.z[li][lr];
                }
                for (lj, &j) in is.iter().enumerate() {
                    out.u[i][j] = sol.u[li][lj];
                }
            }
            for (la, &a) in as_.iter().enumerate() {
                out.y[a] = sol.y[la];
            }
            for (lr, &r) in rs.iter().enumerate() {
                out.v[r] = sol.v[lr];
            }
            out.alpha.extend(sol.alpha.iter().map(|&(i, j, a)| (is[i], is[j], as_[a])));
            out.beta.extend(sol.beta.iter().map(|&(i, j, r)| (is[i], is[j], rs[r])));
        }
        out.alpha.sort_unstable();
        out.beta.sort_unstable();
        out
    }

    /// Sum part bundles into a bundle for the full instance.
    pub fn combine(&self, bundles: &[SolutionBundle]) -> SolutionBundle {
        let sols: Vec<FirstStageSolution> = bundles.iter().map(|b| b.first_stage.clone()).collect();
        SolutionBundle {
            first_stage: self.recombine(&sols),
            objective: bundles.iter().map(|b| b.objective).sum(),
            fixed_cost: bundles.iter().map(|b| b.fixed_cost).sum(),
            risk_term: bundles.iter().map(|b| b.risk_term).sum(),
            gap: bundles.iter().map(|b| b.gap).fold(0.0, f64::max),
            best_bound: bundles.iter().map(|b| b.best_bound).sum(),
            wall_time: bundles.iter().map(|b| b.wall_time).sum(),
            nodes: bundles.iter().map(|b| b.nodes).sum(),
            model_tag: bundles.first().map_or(ModelTag::SpE, |b| b.model_tag),
        }
    }
}
