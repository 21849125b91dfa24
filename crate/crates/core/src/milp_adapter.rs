//! Thin interface to an external MILP solver.
//!
//! Models are built through [`MilpModel`] and handed to a [`Backend`]. The
//! only backend shipped is HiGHS; the engine never touches HiGHS types.

use std::ffi::CString;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feasibility tolerance applied when the adapter re-checks a returned point.
pub const FEAS_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MilpError {
    #[error("solver backend unavailable: {0}")]
    Config(String),
    #[error("solver backend failure: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    Continuous,
    Integer,
    Binary,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub lb: f64,
    pub ub: f64,
    pub kind: VarKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Constraint {
    pub name: String,
    pub terms: Vec<(VarId, f64)>,
    pub sense: RowSense,
    pub rhs: f64,
}

/// A minimisation model with linear rows.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MilpModel {
    pub variables: Vec<Variable>,
    pub constraints: Vec<Constraint>,
    pub objective: Vec<(VarId, f64)>,
    pub objective_constant: f64,
}

impl MilpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lb: f64, ub: f64, kind: VarKind) -> VarId {
        let (lb, ub) = match kind {
            VarKind::Binary => (lb.max(0.0), ub.min(1.0)),
            _ => (lb, ub),
        };
        self.variables.push(Variable { name: name.into(), lb, ub, kind });
        VarId(self.variables.len() - 1)
    }

    pub fn continuous(&mut self, name: impl Into<String>, lb: f64, ub: f64) -> VarId {
        self.add_var(name, lb, ub, VarKind::Continuous)
    }

    pub fn binary(&mut self, name: impl Into<String>) -> VarId {
        self.add_var(name, 0.0, 1.0, VarKind::Binary)
    }

    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        terms: Vec<(VarId, f64)>,
        sense: RowSense,
        rhs: f64,
    ) -> usize {
        self.constraints.push(Constraint { name: name.into(), terms, sense, rhs });
        self.constraints.len() - 1
    }

    pub fn add_obj(&mut self, var: VarId, coef: f64) {
        if coef != 0.0 {
            self.objective.push((var, coef));
        }
    }

    pub fn fix(&mut self, var: VarId, value: f64) {
        let v = &mut self.variables[var.0];
        v.lb = value;
        v.ub = value;
    }

    pub fn num_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn num_rows(&self) -> usize {
        self.constraints.len()
    }

    /// Copy with every integrality requirement dropped.
    pub fn relaxed(&self) -> MilpModel {
        let mut m = self.clone();
        for v in &mut m.variables {
            v.kind = VarKind::Continuous;
        }
        m
    }

    pub fn is_mip(&self) -> bool {
        self.variables.iter().any(|v| v.kind != VarKind::Continuous)
    }

    /// Every row and the objective reference declared variables.
    pub fn check_references(&self) -> Result<(), String> {
        let n = self.variables.len();
        for c in &self.constraints {
            if let Some((v, _)) = c.terms.iter().find(|(v, _)| v.0 >= n) {
                return Err(format!("row {} references undeclared variable {}", c.name, v.0));
            }
        }
        if let Some((v, _)) = self.objective.iter().find(|(v, _)| v.0 >= n) {
            return Err(format!("objective references undeclared variable {}", v.0));
        }
        for v in &self.variables {
            if v.kind != VarKind::Continuous && !(v.lb.is_finite() && v.ub.is_finite()) {
                return Err(format!("integer variable {} has an infinite bound", v.name));
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective_constant + self.objective.iter().map(|(v, c)| c * x[v.0]).sum::<f64>()
    }

    /// Largest scaled violation of bounds, rows and integrality at `x`.
    pub fn max_violation(&self, x: &[f64]) -> (f64, String) {
        let mut worst = (0.0, String::new());
        for (j, v) in self.variables.iter().enumerate() {
            let scale = 1.0_f64.max(x[j].abs());
            let viol = ((v.lb - x[j]).max(x[j] - v.ub)).max(0.0) / scale;
            if viol > worst.0 {
                worst = (viol, format!("bound of {}", v.name));
            }
            if v.kind != VarKind::Continuous {
                let viol = (x[j] - x[j].round()).abs();
                if viol > worst.0 {
                    worst = (viol, format!("integrality of {}", v.name));
                }
            }
        }
        for c in &self.constraints {
            let act: f64 = c.terms.iter().map(|(v, a)| a * x[v.0]).sum();
            let scale = 1.0_f64
                .max(c.rhs.abs())
                .max(c.terms.iter().map(|(v, a)| (a * x[v.0]).abs()).fold(0.0, f64::max));
            let viol = match c.sense {
                RowSense::Le => act - c.rhs,
                RowSense::Ge => c.rhs - act,
                RowSense::Eq => (act - c.rhs).abs(),
            }
            .max(0.0)
                / scale;
            if viol > worst.0 {
                worst = (viol, format!("row {}", c.name));
            }
        }
        worst
    }

    /// Render the model in CPLEX LP text format.
    pub fn to_lp_format(&self) -> String {
        let name = |j: usize| sanitize(&self.variables[j].name, j);
        let mut out = String::from("\\ generated by orasp\nMinimize\n obj:");
        write_terms(&mut out, &self.objective, &name);
        if self.objective_constant != 0.0 {
            let _ = write!(out, " {:+}", self.objective_constant);
        }
        out.push_str("\nSubject To\n");
        for (k, c) in self.constraints.iter().enumerate() {
            let _ = write!(out, " {}:", sanitize(&c.name, k));
            if c.terms.is_empty() {
                out.push_str(" 0 x_empty_");
            } else {
                write_terms(&mut out, &c.terms, &name);
            }
            let op = match c.sense {
                RowSense::Le => "<=",
                RowSense::Ge => ">=",
                RowSense::Eq => "=",
            };
            let _ = writeln!(out, " {} {}", op, c.rhs);
        }
        out.push_str("Bounds\n");
        for (j, v) in self.variables.iter().enumerate() {
            let lb = if v.lb.is_finite() { format!("{}", v.lb) } else { "-inf".into() };
            let ub = if v.ub.is_finite() { format!("{}", v.ub) } else { "+inf".into() };
            let _ = writeln!(out, " {} <= {} <= {}", lb, name(j), ub);
        }
        let ints: Vec<String> = (0..self.variables.len())
            .filter(|&j| self.variables[j].kind != VarKind::Continuous)
            .map(name)
            .collect();
        if !ints.is_empty() {
            out.push_str("General\n");
            for chunk in ints.chunks(8) {
                let _ = writeln!(out, " {}", chunk.join(" "));
            }
        }
        out.push_str("End\n");
        out
    }
}

fn sanitize(name: &str, idx: usize) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "_.[]".contains(c) { c } else { '_' })
        .collect();
    if s.is_empty() || s.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '.') {
        format!("v{}_{}", idx, s)
    } else {
        s
    }
}

fn write_terms(out: &mut String, terms: &[(VarId, f64)], name: &dyn Fn(usize) -> String) {
    for (v, c) in terms {
        let _ = write!(out, " {:+} {}", c, name(v.0));
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveParams {
    pub rel_gap: f64,
    pub time_limit: Option<f64>,
    pub threads: Option<u32>,
    pub seed: Option<u64>,
}

impl Default for SolveParams {
    fn default() -> Self {
        Self { rel_gap: 0.02, time_limit: None, threads: None, seed: None }
    }
}

impl SolveParams {
    pub fn exact() -> Self {
        Self { rel_gap: 0.0, ..Self::default() }
    }

    pub fn with_gap(mut self, gap: f64) -> Self {
        self.rel_gap = gap;
        self
    }

    pub fn with_time_limit(mut self, secs: f64) -> Self {
        self.time_limit = Some(secs);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    OptimalWithinGap,
    FeasibleTimeLimit,
    Infeasible,
    Unbounded,
    Error,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub objective: f64,
    pub best_bound: f64,
    pub values: Vec<f64>,
    pub nodes: u64,
    pub wall_time: f64,
    pub message: String,
}

impl SolveResult {
    pub fn has_solution(&self) -> bool {
        matches!(self.status, SolveStatus::OptimalWithinGap | SolveStatus::FeasibleTimeLimit)
    }

    pub fn value(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    /// Relative gap between incumbent and bound.
    pub fn gap(&self) -> f64 {
        if !self.has_solution() {
            return f64::INFINITY;
        }
        let diff = (self.objective - self.best_bound).max(0.0);
        if diff <= 1e-9 {
            0.0
        } else {
            diff / self.objective.abs().max(1e-9)
        }
    }
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, model: &MilpModel, params: &SolveParams) -> Result<SolveResult, MilpError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct HighsBackend;

impl Backend for HighsBackend {
    fn name(&self) -> &'static str {
        "highs"
    }

    fn solve(&self, model: &MilpModel, params: &SolveParams) -> Result<SolveResult, MilpError> {
        solve_highs(model, params)
    }
}

/// Backend chosen by the `ORASP_BACKEND` environment variable (default `highs`).
pub fn default_backend() -> Result<Box<dyn Backend>, MilpError> {
    match std::env::var("ORASP_BACKEND").ok().as_deref() {
        None | Some("") | Some("highs") => Ok(Box::new(HighsBackend)),
        Some(other) => Err(MilpError::Config(format!("unknown backend '{other}'"))),
    }
}

fn env_threads() -> Option<u32> {
    std::env::var("ORASP_THREADS").ok().and_then(|s| s.parse().ok())
}

/// Solve `model` with the default backend and re-check the returned point.
pub fn solve(model: &MilpModel, params: &SolveParams) -> Result<SolveResult, MilpError> {
    if params.rel_gap < 0.0 {
        return Err(MilpError::Config("rel_gap must be nonnegative".into()));
    }
    model.check_references().map_err(MilpError::Config)?;
    let backend = default_backend()?;
    let mut res = backend.solve(model, params)?;
    if res.has_solution() {
        let (viol, at) = model.max_violation(&res.values);
        if viol > FEAS_TOL {
            res.status = SolveStatus::Error;
            res.message = format!("returned point violates {at} by {viol:.3e}");
        }
    }
    Ok(res)
}

fn solve_highs(model: &MilpModel, params: &SolveParams) -> Result<SolveResult, MilpError> {
    use highs::{HighsModelStatus as S, RowProblem, Sense};
    let start = Instant::now();
    if model.variables.is_empty() {
        let infeasible = model.constraints.iter().any(|c| match c.sense {
            RowSense::Le => c.rhs < -FEAS_TOL,
            RowSense::Ge => c.rhs > FEAS_TOL,
            RowSense::Eq => c.rhs.abs() > FEAS_TOL,
        });
        return Ok(SolveResult {
            status: if infeasible { SolveStatus::Infeasible } else { SolveStatus::OptimalWithinGap },
            objective: model.objective_constant,
            best_bound: model.objective_constant,
            values: vec![],
            nodes: 0,
            wall_time: 0.0,
            message: String::new(),
        });
    }
    let mut cost = vec![0.0; model.variables.len()];
    for (v, c) in &model.objective {
        cost[v.0] += c;
    }
    let mut pb = RowProblem::default();
    let cols: Vec<highs::Col> = model
        .variables
        .iter()
        .zip(&cost)
        .map(|(v, &c)| {
            let int = v.kind != VarKind::Continuous;
            pb.add_column_with_integrality(c, v.lb..=v.ub, int)
        })
        .collect();
    for c in &model.constraints {
        let row: Vec<(highs::Col, f64)> = c.terms.iter().map(|(v, a)| (cols[v.0], *a)).collect();
        match c.sense {
            RowSense::Le => pb.add_row(f64::NEG_INFINITY..=c.rhs, row),
            RowSense::Ge => pb.add_row(c.rhs..=f64::INFINITY, row),
            RowSense::Eq => pb.add_row(c.rhs..=c.rhs, row),
        }
    }
    let mut m = pb.try_optimise(Sense::Minimise).map_err(|e| MilpError::Backend(format!("{e:?}")))?;
    m.make_quiet();
    macro_rules! opt {
        ($k:expr, $v:expr) => {
            m.try_set_option($k, $v)
                .map_err(|e| MilpError::Backend(format!("option {}: {:?}", $k, e)))?
        };
    }
    opt!("mip_rel_gap", params.rel_gap);
    if params.rel_gap == 0.0 {
        opt!("mip_abs_gap", 1e-7);
    }
    opt!("mip_feasibility_tolerance", 1e-7);
    opt!("primal_feasibility_tolerance", 1e-8);
    if let Some(t) = params.time_limit {
        opt!("time_limit", t);
    }
    if let Some(th) = params.threads.or_else(env_threads) {
        opt!("threads", th.max(1) as i32);
    }
    if let Some(seed) = params.seed {
        opt!("random_seed", (seed % i32::MAX as u64) as i32);
    }
    let solved = m.try_solve().map_err(|e| MilpError::Backend(format!("HiGHS run failed: {e:?}")))?;
    let status = solved.status();
    let values = solved.get_solution().columns().to_vec();
    let has_point = values.len() == model.variables.len()
        && matches!(
            solved.primal_solution_status(),
            highs::HighsSolutionStatus::Feasible
        );
    let is_mip = model.is_mip();
    let objective = if has_point { model.objective_value(&values) } else { f64::NAN };
    let mut best_bound = objective;
    let mut nodes = 0;
    if is_mip {
        if let Ok(b) = solved.double_info_value(c"mip_dual_bound") {
            best_bound = b + model.objective_constant;
        }
        let key = CString::new("mip_node_count").expect("static key");
        let mut count: i64 = 0;
        let rc = unsafe {
            highs_sys::Highs_getInt64InfoValue(solved.as_ptr(), key.as_ptr(), &mut count)
        };
        if rc == 0 {
            nodes = count.max(0) as u64;
        }
    }
    let (status, message) = match status {
        S::Optimal => (SolveStatus::OptimalWithinGap, String::new()),
        S::Infeasible => (SolveStatus::Infeasible, String::new()),
        S::Unbounded | S::UnboundedOrInfeasible => (SolveStatus::Unbounded, format!("{status:?}")),
        S::ReachedTimeLimit
        | S::ReachedIterationLimit
        | S::ReachedSolutionLimit
        | S::ObjectiveBound
        | S::ObjectiveTarget
        | S::ReachedInterrupt
        | S::ReachedMemoryLimit => {
            if has_point {
                (SolveStatus::FeasibleTimeLimit, format!("{status:?}"))
            } else {
                (SolveStatus::Error, format!("{status:?} without incumbent"))
            }
        }
        other => (SolveStatus::Error, format!("{other:?}")),
    };
    let values = if has_point { values } else { vec![] };
    let best_bound = if best_bound.is_finite() && objective.is_finite() {
        best_bound.min(objective)
    } else {
        best_bound
    };
    Ok(SolveResult {
        status,
        objective,
        best_bound,
        values,
        nodes,
        wall_time: start.elapsed().as_secs_f64(),
        message,
    })
}
