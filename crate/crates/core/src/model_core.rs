//! First- and second-stage model fragments, recourse evaluation, symmetry
//! breaking and idle-time valid inequalities.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dro_solver::DualBounds;
use crate::instance::{contiguous, derive_feasibility, FeasibilityIndex, Instance, InstanceError};
use crate::milp_adapter::{solve, MilpError, MilpModel, RowSense, SolveParams, SolveStatus, VarId};

pub type ModelFragment = MilpModel;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error("infeasible fixing: {0}")]
    InfeasibleFixing(String),
    #[error("first-stage solution rejected: {0}")]
    InvalidSolution(String),
    #[error("symmetry breaking needs contiguous indices: {0}")]
    Structure(String),
    #[error(transparent)]
    Milp(#[from] MilpError),
    #[error("backend: {0}")]
    Backend(String),
}

/// Big-M constants in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BigM {
    pub m_start: f64,
    pub m_seq: f64,
    pub m_anes: f64,
    pub m_room: f64,
}

impl BigM {
    fn from_seq(inst: &Instance, m_seq: f64) -> BigM {
        let min_tend = inst.anesthesiologists.iter().map(|a| a.shift_end).fold(f64::INFINITY, f64::min);
        let min_room = inst.rooms.iter().map(|r| r.horizon_end).fold(f64::INFINITY, f64::min);
        BigM {
            m_start: max_shift_start(inst),
            m_seq,
            m_anes: (m_seq - min_tend.min(m_seq)).max(0.0),
            m_room: (m_seq - min_room.min(m_seq)).max(0.0),
        }
    }

    /// Pointwise maximum.
    pub fn max(self, o: BigM) -> BigM {
        BigM {
            m_start: self.m_start.max(o.m_start),
            m_seq: self.m_seq.max(o.m_seq),
            m_anes: self.m_anes.max(o.m_anes),
            m_room: self.m_room.max(o.m_room),
        }
    }

    pub fn scaled(self, k: f64) -> BigM {
        BigM { m_start: self.m_start * k, m_seq: self.m_seq * k, m_anes: self.m_anes * k, m_room: self.m_room * k }
    }
}

fn max_shift_start(inst: &Instance) -> f64 {
    inst.anesthesiologists.iter().map(|a| a.shift_start).fold(0.0, f64::max)
}

/// Big-M values from the duration upper bounds.
///
/// The tightened variant replaces the all-surgeries sum by the largest sum
/// over groups of surgeries that can share a resource, started from the
/// latest shift start.
pub fn big_m_parameters(inst: &Instance, tightened: bool) -> BigM {
    let hi = &inst.durations.hi;
    if tightened {
        let load = derive_feasibility(inst)
            .map(|idx| {
                idx.surgery_components()
                    .iter()
                    .map(|c| c.iter().map(|&i| hi[i]).sum::<f64>())
                    .fold(0.0, f64::max)
            })
            .unwrap_or_else(|_| hi.iter().sum());
        BigM::from_seq(inst, max_shift_start(inst) + load)
    } else {
        let total: f64 = hi.iter().sum();
        let mut m = BigM::from_seq(inst, inst.horizon() + total);
        let min_room = inst.rooms.iter().map(|r| r.horizon_end).fold(f64::INFINITY, f64::min);
        m.m_room = total + (inst.horizon() - min_room).max(0.0);
        m
    }
}

/// Precomputed index data shared by all builders.
#[derive(Debug, Clone)]
pub struct ModelContext<'a> {
    pub inst: &'a Instance,
    pub idx: FeasibilityIndex,
    pub comp: Vec<usize>,
    pub bigm: BigM,
}

impl<'a> ModelContext<'a> {
    pub fn new(inst: &'a Instance, tightened: bool) -> Result<Self, ModelError> {
        let idx = derive_feasibility(inst)?;
        let comp = idx.component_of();
        Ok(ModelContext { inst, idx, comp, bigm: big_m_parameters(inst, tightened) })
    }

    pub fn n(&self) -> usize {
        self.inst.n_surgeries()
    }

    /// Precedence between `i` and `j` is modeled only inside a component.
    pub fn linked(&self, i: usize, j: usize) -> bool {
        i != j && self.comp[i] == self.comp[j]
    }

    pub fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = vec![];
        for i in 0..n {
            for j in 0..n {
                if self.linked(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    fn common_anes(&self, i: usize, j: usize) -> Vec<usize> {
        self.idx.a_of[i].iter().copied().filter(|a| self.idx.a_of[j].contains(a)).collect()
    }

    fn common_rooms(&self, i: usize, j: usize) -> Vec<usize> {
        self.idx.r_of[i].iter().copied().filter(|r| self.idx.r_of[j].contains(r)).collect()
    }
}

/// Affine expression over model variables.
#[derive(Debug, Clone, Default)]
pub struct Lin {
    pub terms: Vec<(VarId, f64)>,
    pub constant: f64,
}

impl Lin {
    pub fn var(v: VarId) -> Lin {
        Lin { terms: vec![(v, 1.0)], constant: 0.0 }
    }

    pub fn constant(c: f64) -> Lin {
        Lin { terms: vec![], constant: c }
    }

    /// self + k * other
    pub fn add(mut self, other: &Lin, k: f64) -> Lin {
        if k != 0.0 {
            self.terms.extend(other.terms.iter().map(|&(v, c)| (v, c * k)));
            self.constant += other.constant * k;
        }
        self
    }

    pub fn add_var(mut self, v: VarId, k: f64) -> Lin {
        if k != 0.0 {
            self.terms.push((v, k));
        }
        self
    }

    pub fn plus(mut self, c: f64) -> Lin {
        self.constant += c;
        self
    }
}

/// Add `lhs (sense) 0` moving the constant to the right-hand side.
pub fn add_lin_row(m: &mut MilpModel, name: impl Into<String>, lhs: Lin, sense: RowSense) -> usize {
    m.add_row(name, lhs.terms, sense, -lhs.constant)
}

/// Uniform access to first-stage quantities, either as model variables
/// (coupled) or as constants taken from a fixed solution.
pub trait FirstStageView {
    fn x(&self, i: usize, a: usize) -> Lin;
    fn z(&self, i: usize, r: usize) -> Lin;
    fn y(&self, a: usize) -> Lin;
    fn v(&self, r: usize) -> Lin;
    fn u(&self, i: usize, j: usize) -> Lin;
    fn s(&self, i: usize) -> Lin;
    /// Whether `x[i][a]` can be nonzero; lets builders skip dead rows.
    fn x_possible(&self, i: usize, a: usize) -> bool;
    fn z_possible(&self, i: usize, r: usize) -> bool;
    fn u_possible(&self, i: usize, j: usize) -> bool;
}

/// Column handles of the first-stage variables.
#[derive(Debug, Clone)]
pub struct FirstStageVars {
    pub x: Vec<Vec<Option<VarId>>>,
    pub z: Vec<Vec<Option<VarId>>>,
    pub y: Vec<VarId>,
    pub v: Vec<VarId>,
    pub u: Vec<Vec<Option<VarId>>>,
    pub alpha: BTreeMap<(usize, usize, usize), VarId>,
    pub beta: BTreeMap<(usize, usize, usize), VarId>,
    pub s: Vec<VarId>,
}

fn opt_lin(v: Option<VarId>) -> Lin {
    v.map(Lin::var).unwrap_or_default()
}

impl FirstStageView for FirstStageVars {
    fn x(&self, i: usize, a: usize) -> Lin {
        opt_lin(self.x[i][a])
    }
    fn z(&self, i: usize, r: usize) -> Lin {
        opt_lin(self.z[i][r])
    }
    fn y(&self, a: usize) -> Lin {
        Lin::var(self.y[a])
    }
    fn v(&self, r: usize) -> Lin {
        Lin::var(self.v[r])
    }
    fn u(&self, i: usize, j: usize) -> Lin {
        opt_lin(self.u[i][j])
    }
    fn s(&self, i: usize) -> Lin {
        Lin::var(self.s[i])
    }
    fn x_possible(&self, i: usize, a: usize) -> bool {
        self.x[i][a].is_some()
    }
    fn z_possible(&self, i: usize, r: usize) -> bool {
        self.z[i][r].is_some()
    }
    fn u_possible(&self, i: usize, j: usize) -> bool {
        self.u[i][j].is_some()
    }
}

impl FirstStageVars {
    /// Read a first-stage solution out of a solver point.
    pub fn extract(&self, values: &[f64]) -> FirstStageSolution {
        let b = |v: Option<VarId>| v.is_some_and(|v| values[v.0] > 0.5);
        let n = self.x.len();
        FirstStageSolution {
            x: self.x.iter().map(|row| row.iter().map(|&v| b(v)).collect()).collect(),
            z: self.z.iter().map(|row| row.iter().map(|&v| b(v)).collect()).collect(),
            y: self.y.iter().map(|&v| b(Some(v))).collect(),
            v: self.v.iter().map(|&v| b(Some(v))).collect(),
            u: self.u.iter().map(|row| row.iter().map(|&v| b(v)).collect()).collect(),
            alpha: self.alpha.iter().filter(|(_, &v)| b(Some(v))).map(|(&k, _)| k).collect(),
            beta: self.beta.iter().filter(|(_, &v)| b(Some(v))).map(|(&k, _)| k).collect(),
            s: (0..n).map(|i| values[self.s[i].0].max(0.0)).collect(),
        }
    }
}

/// Binary first-stage decisions plus scheduled start times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstStageSolution {
    pub x: Vec<Vec<bool>>,
    pub z: Vec<Vec<bool>>,
    pub y: Vec<bool>,
    pub v: Vec<bool>,
    pub u: Vec<Vec<bool>>,
    /// (i, i', a) with alpha = 1
    pub alpha: Vec<(usize, usize, usize)>,
    /// (i, i', r) with beta = 1
    pub beta: Vec<(usize, usize, usize)>,
    pub s: Vec<f64>,
}

fn flag(b: bool) -> Lin {
    Lin::constant(if b { 1.0 } else { 0.0 })
}

impl FirstStageView for FirstStageSolution {
    fn x(&self, i: usize, a: usize) -> Lin {
        flag(self.x[i][a])
    }
    fn z(&self, i: usize, r: usize) -> Lin {
        flag(self.z[i][r])
    }
    fn y(&self, a: usize) -> Lin {
        flag(self.y[a])
    }
    fn v(&self, r: usize) -> Lin {
        flag(self.v[r])
    }
    fn u(&self, i: usize, j: usize) -> Lin {
        flag(self.u[i][j])
    }
    fn s(&self, i: usize) -> Lin {
        Lin::constant(self.s[i])
    }
    fn x_possible(&self, i: usize, a: usize) -> bool {
        self.x[i][a]
    }
    fn z_possible(&self, i: usize, r: usize) -> bool {
        self.z[i][r]
    }
    fn u_possible(&self, i: usize, j: usize) -> bool {
        self.u[i][j]
    }
}

impl FirstStageSolution {
    pub fn n(&self) -> usize {
        self.s.len()
    }

    pub fn anes_of(&self, i: usize) -> Option<usize> {
        self.x[i].iter().position(|&b| b)
    }

    pub fn room_of(&self, i: usize) -> Option<usize> {
        self.z[i].iter().position(|&b| b)
    }

    pub fn fixed_cost(&self, inst: &Instance) -> f64 {
        let rooms: f64 = (0..inst.n_rooms()).filter(|&r| self.v[r]).map(|r| inst.fixed_room(r)).sum();
        let anes: f64 = (0..inst.n_anes()).filter(|&a| self.y[a]).map(|a| inst.fixed_anes(a)).sum();
        rooms + anes
    }

    /// Build a complete solution from assignments and a global priority
    /// order. Each resource processes its surgeries in `order`; `u` is the
    /// transitive closure of those per-resource sequences. Rooms are opened
    /// and on-call staff called in exactly when used.
    pub fn from_order(inst: &Instance, anes_of: &[usize], room_of: &[usize], order: &[usize], s: Vec<f64>) -> Self {
        let n = inst.n_surgeries();
        let mut pos = vec![0; n];
        for (k, &i) in order.iter().enumerate() {
            pos[i] = k;
        }
        let mut x = vec![vec![false; inst.n_anes()]; n];
        let mut z = vec![vec![false; inst.n_rooms()]; n];
        let mut y = vec![false; inst.n_anes()];
        let mut v = vec![false; inst.n_rooms()];
        for i in 0..n {
            x[i][anes_of[i]] = true;
            z[i][room_of[i]] = true;
            v[room_of[i]] = true;
            if inst.anesthesiologists[anes_of[i]].is_on_call {
                y[anes_of[i]] = true;
            }
        }
        let mut u = vec![vec![false; n]; n];
        let mut alpha = vec![];
        let mut beta = vec![];
        for i in 0..n {
            for j in 0..n {
                if i == j || pos[i] > pos[j] {
                    continue;
                }
                if anes_of[i] == anes_of[j] {
                    alpha.push((i, j, anes_of[i]));
                    u[i][j] = true;
                }
                if room_of[i] == room_of[j] {
                    beta.push((i, j, room_of[i]));
                    u[i][j] = true;
                }
            }
        }
        transitive_closure(&mut u);
        alpha.sort_unstable();
        beta.sort_unstable();
        FirstStageSolution { x, z, y, v, u, alpha, beta, s }
    }
}

/// Warshall closure in place.
pub fn transitive_closure(u: &mut [Vec<bool>]) {
    let n = u.len();
    for k in 0..n {
        for i in 0..n {
            if u[i][k] {
                for j in 0..n {
                    if u[k][j] {
                        u[i][j] = true;
                    }
                }
            }
        }
    }
}

/// Check every first-stage invariant; returns the first violation found.
pub fn check_first_stage(ctx: &ModelContext, sol: &FirstStageSolution) -> Result<(), ModelError> {
    let inst = ctx.inst;
    let n = ctx.n();
    let bad = |m: String| Err(ModelError::InvalidSolution(m));
    if sol.s.len() != n || sol.x.len() != n || sol.z.len() != n || sol.u.len() != n {
        return bad("dimension mismatch".into());
    }
    if sol.y.len() != inst.n_anes() || sol.v.len() != inst.n_rooms() {
        return bad("dimension mismatch".into());
    }
    let horizon = inst.horizon();
    for i in 0..n {
        let xa: Vec<usize> = (0..inst.n_anes()).filter(|&a| sol.x[i][a]).collect();
        let zr: Vec<usize> = (0..inst.n_rooms()).filter(|&r| sol.z[i][r]).collect();
        if xa.len() != 1 || !ctx.idx.a_of[i].contains(&xa[0]) {
            return bad(format!("surgery {i} needs exactly one compatible anesthesiologist"));
        }
        if zr.len() != 1 || !ctx.idx.r_of[i].contains(&zr[0]) {
            return bad(format!("surgery {i} needs exactly one compatible room"));
        }
        let (a, r) = (xa[0], zr[0]);
        if !sol.v[r] {
            return bad(format!("surgery {i} in closed room {r}"));
        }
        let an = &inst.anesthesiologists[a];
        if !(an.is_regular || sol.y[a]) {
            return bad(format!("surgery {i} given to on-call {a} who is not called in"));
        }
        let s = sol.s[i];
        if !(s >= -1e-6 && s <= horizon + 1e-6) {
            return bad(format!("surgery {i} start {s} outside [0, {horizon}]"));
        }
        if s < an.shift_start - 1e-6 {
            return bad(format!("surgery {i} start {s} before shift start of {a}"));
        }
    }
    for a in 0..inst.n_anes() {
        if sol.y[a] && !inst.anesthesiologists[a].is_on_call {
            return bad(format!("regular anesthesiologist {a} flagged as called in"));
        }
    }
    for i in 0..n {
        if sol.u[i][i] {
            return bad(format!("u[{i}][{i}] set"));
        }
        for j in 0..n {
            if sol.u[i][j] && !ctx.linked(i, j) {
                return bad(format!("precedence {i}->{j} between unrelated surgeries"));
            }
            if sol.u[i][j] && sol.u[j][i] {
                return bad(format!("precedence cycle {i}<->{j}"));
            }
            for k in 0..n {
                if sol.u[i][j] && sol.u[j][k] && i != k && !sol.u[i][k] {
                    return bad(format!("transitivity {i}->{j}->{k}"));
                }
            }
        }
    }
    let alpha: BTreeSet<_> = sol.alpha.iter().copied().collect();
    let beta: BTreeSet<_> = sol.beta.iter().copied().collect();
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let (ai, aj) = (sol.anes_of(i), sol.anes_of(j));
            if ai == aj {
                let a = ai.expect("checked");
                let fwd = alpha.contains(&(i, j, a));
                let bwd = alpha.contains(&(j, i, a));
                if fwd == bwd {
                    return bad(format!("surgeries {i},{j} on anesthesiologist {a} need exactly one order"));
                }
                if fwd && !sol.u[i][j] {
                    return bad(format!("alpha {i}->{j} without precedence"));
                }
            }
            let (ri, rj) = (sol.room_of(i), sol.room_of(j));
            if ri == rj {
                let r = ri.expect("checked");
                let fwd = beta.contains(&(i, j, r));
                let bwd = beta.contains(&(j, i, r));
                if fwd == bwd {
                    return bad(format!("surgeries {i},{j} in room {r} need exactly one order"));
                }
                if fwd && !sol.u[i][j] {
                    return bad(format!("beta {i}->{j} without precedence"));
                }
            }
        }
    }
    for &(i, j, a) in &sol.alpha {
        if !(sol.x[i][a] && sol.x[j][a]) {
            return bad(format!("alpha ({i},{j},{a}) without both assignments"));
        }
    }
    for &(i, j, r) in &sol.beta {
        if !(sol.z[i][r] && sol.z[j][r]) {
            return bad(format!("beta ({i},{j},{r}) without both assignments"));
        }
    }
    Ok(())
}

/// Forced assignment values (special scheduling requests).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fixings {
    pub x: Vec<(usize, usize, bool)>,
    pub z: Vec<(usize, usize, bool)>,
    pub v: Vec<(usize, bool)>,
    pub y: Vec<(usize, bool)>,
}

/// First-stage constraint system with fixed-cost objective terms.
pub fn build_first_stage(
    ctx: &ModelContext,
    fixings: Option<&Fixings>,
) -> Result<(ModelFragment, FirstStageVars), ModelError> {
    let inst = ctx.inst;
    let idx = &ctx.idx;
    let n = ctx.n();
    let (na, nr) = (inst.n_anes(), inst.n_rooms());
    let mut m = MilpModel::new();
    let v: Vec<VarId> = (0..nr).map(|r| m.binary(format!("v[{r}]"))).collect();
    let y: Vec<VarId> = (0..na)
        .map(|a| {
            let id = m.binary(format!("y[{a}]"));
            if !inst.anesthesiologists[a].is_on_call {
                m.fix(id, 0.0);
            }
            id
        })
        .collect();
    let mut x = vec![vec![None; na]; n];
    let mut z = vec![vec![None; nr]; n];
    for i in 0..n {
        for &a in &idx.a_of[i] {
            x[i][a] = Some(m.binary(format!("x[{i},{a}]")));
        }
        for &r in &idx.r_of[i] {
            z[i][r] = Some(m.binary(format!("z[{i},{r}]")));
        }
    }
    let horizon = inst.horizon();
    let s: Vec<VarId> = (0..n).map(|i| m.continuous(format!("s[{i}]"), 0.0, horizon)).collect();
    let mut u = vec![vec![None; n]; n];
    for (i, j) in ctx.ordered_pairs() {
        u[i][j] = Some(m.binary(format!("u[{i},{j}]")));
    }
    let mut alpha = BTreeMap::new();
    let mut beta = BTreeMap::new();
    for (i, j) in ctx.ordered_pairs() {
        for a in ctx.common_anes(i, j) {
            alpha.insert((i, j, a), m.binary(format!("alpha[{i},{j},{a}]")));
        }
        for r in ctx.common_rooms(i, j) {
            beta.insert((i, j, r), m.binary(format!("beta[{i},{j},{r}]")));
        }
    }
    let fs = FirstStageVars { x, z, y, v, u, alpha, beta, s };

    for r in 0..nr {
        m.add_obj(fs.v[r], inst.fixed_room(r));
    }
    for a in 0..na {
        m.add_obj(fs.y[a], inst.fixed_anes(a));
    }
    for i in 0..n {
        let xs = idx.a_of[i].iter().map(|&a| (fs.x[i][a].expect("x"), 1.0)).collect();
        m.add_row(format!("assign_anes[{i}]"), xs, RowSense::Eq, 1.0);
        let zs = idx.r_of[i].iter().map(|&r| (fs.z[i][r].expect("z"), 1.0)).collect();
        m.add_row(format!("assign_room[{i}]"), zs, RowSense::Eq, 1.0);
    }
    for &(i, r) in &idx.f_r {
        m.add_row(format!("open[{i},{r}]"), vec![(fs.z[i][r].expect("z"), 1.0), (fs.v[r], -1.0)], RowSense::Le, 0.0);
    }
    let big = ctx.bigm.m_start;
    for &(i, a) in &idx.f_a {
        let an = &inst.anesthesiologists[a];
        let xv = fs.x[i][a].expect("x");
        m.add_row(format!("duty[{i},{a}]"), vec![(xv, 1.0), (fs.y[a], -1.0)], RowSense::Le, inst.h_reg(a));
        if an.shift_start > 0.0 {
            m.add_row(format!("shift_start[{i},{a}]"), vec![(fs.s[i], 1.0), (xv, -big)], RowSense::Ge, an.shift_start - big);
        }
    }
    for (&(i, j, a), &al) in &fs.alpha {
        m.add_row(format!("alpha_u[{i},{j},{a}]"), vec![(al, 1.0), (fs.u[i][j].expect("u"), -1.0)], RowSense::Le, 0.0);
    }
    for (&(i, j, r), &be) in &fs.beta {
        m.add_row(format!("beta_u[{i},{j},{r}]"), vec![(be, 1.0), (fs.u[i][j].expect("u"), -1.0)], RowSense::Le, 0.0);
    }
    for (i, j) in ctx.ordered_pairs() {
        if i < j {
            let terms = vec![(fs.u[i][j].expect("u"), 1.0), (fs.u[j][i].expect("u"), 1.0)];
            m.add_row(format!("antisym[{i},{j}]"), terms, RowSense::Le, 1.0);
        }
    }
    for (i, j) in ctx.ordered_pairs() {
        for k in 0..n {
            if k == i || k == j || !ctx.linked(j, k) {
                continue;
            }
            let terms = vec![
                (fs.u[i][k].expect("u"), 1.0),
                (fs.u[i][j].expect("u"), -1.0),
                (fs.u[j][k].expect("u"), -1.0),
            ];
            m.add_row(format!("trans[{i},{j},{k}]"), terms, RowSense::Ge, -1.0);
        }
    }
    for (i, j) in ctx.ordered_pairs() {
        if i > j {
            continue;
        }
        for a in ctx.common_anes(i, j) {
            let (f, b) = (fs.alpha[&(i, j, a)], fs.alpha[&(j, i, a)]);
            let (xi, xj) = (fs.x[i][a].expect("x"), fs.x[j][a].expect("x"));
            m.add_row(format!("alpha_le_i[{i},{j},{a}]"), vec![(f, 1.0), (b, 1.0), (xi, -1.0)], RowSense::Le, 0.0);
            m.add_row(format!("alpha_le_j[{i},{j},{a}]"), vec![(f, 1.0), (b, 1.0), (xj, -1.0)], RowSense::Le, 0.0);
            m.add_row(
                format!("alpha_ge[{i},{j},{a}]"),
                vec![(f, 1.0), (b, 1.0), (xi, -1.0), (xj, -1.0)],
                RowSense::Ge,
                -1.0,
            );
        }
        for r in ctx.common_rooms(i, j) {
            let (f, b) = (fs.beta[&(i, j, r)], fs.beta[&(j, i, r)]);
            let (zi, zj) = (fs.z[i][r].expect("z"), fs.z[j][r].expect("z"));
            m.add_row(format!("beta_le_i[{i},{j},{r}]"), vec![(f, 1.0), (b, 1.0), (zi, -1.0)], RowSense::Le, 0.0);
            m.add_row(format!("beta_le_j[{i},{j},{r}]"), vec![(f, 1.0), (b, 1.0), (zj, -1.0)], RowSense::Le, 0.0);
            m.add_row(
                format!("beta_ge[{i},{j},{r}]"),
                vec![(f, 1.0), (b, 1.0), (zi, -1.0), (zj, -1.0)],
                RowSense::Ge,
                -1.0,
            );
        }
    }
    for (i, j) in ctx.ordered_pairs() {
        for a in ctx.common_anes(i, j) {
            for r in ctx.common_rooms(i, j) {
                let al = fs.alpha[&(i, j, a)];
                let be = fs.beta[&(i, j, r)];
                let (xi, xj) = (fs.x[i][a].expect("x"), fs.x[j][a].expect("x"));
                let (zi, zj) = (fs.z[i][r].expect("z"), fs.z[j][r].expect("z"));
                m.add_row(
                    format!("link_alpha[{i},{j},{a},{r}]"),
                    vec![(al, 1.0), (xi, -1.0), (xj, -1.0), (be, -1.0)],
                    RowSense::Ge,
                    -2.0,
                );
                m.add_row(
                    format!("link_beta[{i},{j},{a},{r}]"),
                    vec![(be, 1.0), (zi, -1.0), (zj, -1.0), (al, -1.0)],
                    RowSense::Ge,
                    -2.0,
                );
            }
        }
    }
    if let Some(fx) = fixings {
        apply_fixings(ctx, &mut m, &fs, fx)?;
    }
    Ok((m, fs))
}

fn apply_fixings(ctx: &ModelContext, m: &mut MilpModel, fs: &FirstStageVars, fx: &Fixings) -> Result<(), ModelError> {
    let val = |b: bool| if b { 1.0 } else { 0.0 };
    for &(i, a, b) in &fx.x {
        match fs.x.get(i).and_then(|row| row.get(a)).copied().flatten() {
            Some(id) => m.fix(id, val(b)),
            None if !b => {}
            None => return Err(ModelError::InfeasibleFixing(format!("x[{i},{a}] = 1 but the pair is incompatible"))),
        }
    }
    for &(i, r, b) in &fx.z {
        match fs.z.get(i).and_then(|row| row.get(r)).copied().flatten() {
            Some(id) => m.fix(id, val(b)),
            None if !b => {}
            None => return Err(ModelError::InfeasibleFixing(format!("z[{i},{r}] = 1 but the pair is incompatible"))),
        }
    }
    for &(r, b) in &fx.v {
        let id = *fs.v.get(r).ok_or_else(|| ModelError::InfeasibleFixing(format!("room {r} does not exist")))?;
        m.fix(id, val(b));
    }
    for &(a, b) in &fx.y {
        let an = ctx
            .inst
            .anesthesiologists
            .get(a)
            .ok_or_else(|| ModelError::InfeasibleFixing(format!("anesthesiologist {a} does not exist")))?;
        if b && !an.is_on_call {
            return Err(ModelError::InfeasibleFixing(format!("y[{a}] = 1 for a regular anesthesiologist")));
        }
        m.fix(fs.y[a], val(b));
    }
    Ok(())
}

/// Column handles of one scenario's recourse block.
#[derive(Debug, Clone)]
pub struct SecondStageVars {
    pub q: Vec<VarId>,
    pub w: Vec<VarId>,
    pub o_a: Vec<VarId>,
    pub g_a: Vec<VarId>,
    pub o_r: Vec<VarId>,
    pub g_r: Vec<VarId>,
    /// Recourse cost as a linear form.
    pub cost: Vec<(VarId, f64)>,
}

/// Append recourse variables and constraints for duration vector `d`.
/// The cost is not added to the objective; callers weight it.
pub fn add_second_stage(
    m: &mut MilpModel,
    ctx: &ModelContext,
    fs: &impl FirstStageView,
    d: &[f64],
    bigm: &BigM,
    tag: &str,
) -> SecondStageVars {
    let inst = ctx.inst;
    let n = ctx.n();
    let (na, nr) = (inst.n_anes(), inst.n_rooms());
    let q: Vec<VarId> = (0..n).map(|i| m.continuous(format!("q{tag}[{i}]"), 0.0, f64::INFINITY)).collect();
    let w: Vec<VarId> = (0..n).map(|i| m.continuous(format!("w{tag}[{i}]"), 0.0, f64::INFINITY)).collect();
    let o_a: Vec<VarId> = (0..na).map(|a| m.continuous(format!("oa{tag}[{a}]"), 0.0, f64::INFINITY)).collect();
    let g_a: Vec<VarId> = (0..na).map(|a| m.continuous(format!("ga{tag}[{a}]"), 0.0, f64::INFINITY)).collect();
    let o_r: Vec<VarId> = (0..nr).map(|r| m.continuous(format!("or{tag}[{r}]"), 0.0, f64::INFINITY)).collect();
    let g_r: Vec<VarId> = (0..nr).map(|r| m.continuous(format!("gr{tag}[{r}]"), 0.0, f64::INFINITY)).collect();

    for (i, j) in ctx.ordered_pairs() {
        // q_j >= q_i + d_i - M (1 - u_ij)
        let lhs = Lin::var(q[j]).add_var(q[i], -1.0).plus(-d[i] + bigm.m_seq).add(&fs.u(i, j), -bigm.m_seq);
        add_lin_row(m, format!("seq{tag}[{i},{j}]"), lhs, RowSense::Ge);
    }
    for i in 0..n {
        add_lin_row(m, format!("start{tag}[{i}]"), Lin::var(q[i]).add(&fs.s(i), -1.0), RowSense::Ge);
        add_lin_row(m, format!("wait{tag}[{i}]"), Lin::var(w[i]).add_var(q[i], -1.0).add(&fs.s(i), 1.0), RowSense::Ge);
    }
    for &(i, a) in &ctx.idx.f_a {
        if !fs.x_possible(i, a) || inst.anesthesiologists[a].is_on_call {
            // Relaxed: either the pair is unused or the on-call term lifts it.
            continue;
        }
        let t_end = inst.anesthesiologists[a].shift_end;
        // o_a >= q_i + d_i - t_end - M (1 - x + y)
        let lhs = Lin::var(o_a[a])
            .add_var(q[i], -1.0)
            .plus(-d[i] + t_end + bigm.m_anes)
            .add(&fs.x(i, a), -bigm.m_anes)
            .add(&fs.y(a), bigm.m_anes);
        add_lin_row(m, format!("ot_anes{tag}[{i},{a}]"), lhs, RowSense::Ge);
    }
    for &(i, r) in &ctx.idx.f_r {
        if !fs.z_possible(i, r) {
            continue;
        }
        let t_end = inst.rooms[r].horizon_end;
        let lhs = Lin::var(o_r[r])
            .add_var(q[i], -1.0)
            .plus(-d[i] + t_end + bigm.m_room)
            .add(&fs.z(i, r), -bigm.m_room);
        add_lin_row(m, format!("ot_room{tag}[{i},{r}]"), lhs, RowSense::Ge);
    }
    for a in 0..na {
        let an = &inst.anesthesiologists[a];
        let h = inst.h_reg(a);
        // g_a >= (t_end - t_start - sum d x) h + o_a
        let mut lhs = Lin::var(g_a[a]).add_var(o_a[a], -1.0).plus(-(an.shift_end - an.shift_start) * h);
        if h > 0.0 {
            for &i in &ctx.idx.i_of_a[a] {
                lhs = lhs.add(&fs.x(i, a), d[i] * h);
            }
        }
        add_lin_row(m, format!("idle_anes{tag}[{a}]"), lhs, RowSense::Ge);
    }
    for r in 0..nr {
        let t_end = inst.rooms[r].horizon_end;
        let mut lhs = Lin::var(g_r[r]).add_var(o_r[r], -1.0).add(&fs.v(r), -t_end);
        for &i in &ctx.idx.i_of_r[r] {
            lhs = lhs.add(&fs.z(i, r), d[i]);
        }
        add_lin_row(m, format!("idle_room{tag}[{r}]"), lhs, RowSense::Ge);
    }
    let mut cost = vec![];
    for a in 0..na {
        cost.push((g_a[a], inst.cg_anes(a)));
        cost.push((o_a[a], inst.co_anes(a)));
    }
    for r in 0..nr {
        cost.push((g_r[r], inst.cg_room(r)));
        cost.push((o_r[r], inst.co_room(r)));
    }
    for i in 0..n {
        cost.push((w[i], inst.cw(i)));
    }
    cost.retain(|&(_, c)| c != 0.0);
    SecondStageVars { q, w, o_a, g_a, o_r, g_r, cost }
}

/// How second-stage fragments see the first stage.
pub enum SecondStageMode<'s> {
    /// First-stage variables are declared in the fragment (no first-stage rows).
    Coupled,
    /// Constants substituted; the fragment is a pure LP.
    Fixed(&'s FirstStageSolution),
}

/// Stand-alone second-stage fragment; in coupled mode the first-stage
/// columns are declared but left unconstrained.
pub fn build_second_stage(
    ctx: &ModelContext,
    d: &[f64],
    bigm: &BigM,
    mode: SecondStageMode,
) -> Result<(ModelFragment, SecondStageVars), ModelError> {
    match mode {
        SecondStageMode::Fixed(sol) => {
            let mut m = MilpModel::new();
            let ss = add_second_stage(&mut m, ctx, sol, d, bigm, "");
            for &(v, c) in &ss.cost {
                m.add_obj(v, c);
            }
            Ok((m, ss))
        }
        SecondStageMode::Coupled => {
            let (fm, fs) = build_first_stage(ctx, None)?;
            let mut m = MilpModel { variables: fm.variables, ..MilpModel::new() };
            let ss = add_second_stage(&mut m, ctx, &fs, d, bigm, "");
            for &(v, c) in &ss.cost {
                m.add_obj(v, c);
            }
            Ok((m, ss))
        }
    }
}

/// Realized recourse quantities for one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondStageOutcome {
    pub q: Vec<f64>,
    pub w: Vec<f64>,
    pub o_a: Vec<f64>,
    pub g_a: Vec<f64>,
    pub o_r: Vec<f64>,
    pub g_r: Vec<f64>,
    pub cost: f64,
}

impl SecondStageOutcome {
    pub fn waiting(&self) -> f64 {
        self.w.iter().sum()
    }

    pub fn room_overtime(&self) -> f64 {
        self.o_r.iter().sum()
    }

    pub fn anes_overtime(&self) -> f64 {
        self.o_a.iter().sum()
    }

    pub fn room_idle(&self) -> f64 {
        self.g_r.iter().sum()
    }

    pub fn anes_idle(&self) -> f64 {
        self.g_a.iter().sum()
    }

    /// Cost recomputed from the components.
    pub fn recompute_cost(&self, inst: &Instance) -> f64 {
        let mut c = 0.0;
        for a in 0..inst.n_anes() {
            c += inst.cg_anes(a) * self.g_a[a] + inst.co_anes(a) * self.o_a[a];
        }
        for r in 0..inst.n_rooms() {
            c += inst.cg_room(r) * self.g_r[r] + inst.co_room(r) * self.o_r[r];
        }
        for i in 0..self.w.len() {
            c += inst.cw(i) * self.w[i];
        }
        c
    }
}

/// Big-M values valid for a fixed solution and a realized duration vector,
/// including realizations beyond the support (out-of-sample families).
pub fn big_m_for_evaluation(ctx: &ModelContext, sol: &FirstStageSolution, d: &[f64]) -> BigM {
    let inst = ctx.inst;
    let s_max = sol.s.iter().copied().fold(max_shift_start(inst), f64::max);
    let mut load = BTreeMap::<usize, f64>::new();
    for i in 0..ctx.n() {
        *load.entry(ctx.comp[i]).or_default() += d[i].max(inst.durations.hi[i]);
    }
    let worst = load.values().copied().fold(0.0, f64::max);
    ctx.bigm.max(BigM::from_seq(inst, s_max + worst))
}

/// Reusable recourse evaluator for one instance.
pub struct Evaluator<'a> {
    pub ctx: ModelContext<'a>,
}

impl<'a> Evaluator<'a> {
    pub fn new(inst: &'a Instance) -> Result<Self, ModelError> {
        Ok(Evaluator { ctx: ModelContext::new(inst, true)? })
    }

    /// Solve the recourse LP for a fixed first stage.
    pub fn evaluate(&self, sol: &FirstStageSolution, d: &[f64]) -> Result<SecondStageOutcome, ModelError> {
        let inst = self.ctx.inst;
        let bigm = big_m_for_evaluation(&self.ctx, sol, d);
        let (m, ss) = build_second_stage(&self.ctx, d, &bigm, SecondStageMode::Fixed(sol))?;
        let res = solve(&m, &SolveParams::exact())?;
        if res.status != SolveStatus::OptimalWithinGap {
            return Err(ModelError::Backend(format!("recourse LP ended {:?}: {}", res.status, res.message)));
        }
        let val = |v: &[VarId]| v.iter().map(|id| res.values[id.0].max(0.0)).collect::<Vec<f64>>();
        let mut out = SecondStageOutcome {
            q: val(&ss.q),
            w: val(&ss.w),
            o_a: val(&ss.o_a),
            g_a: val(&ss.g_a),
            o_r: val(&ss.o_r),
            g_r: val(&ss.g_r),
            cost: res.objective,
        };
        // Idle time with a zero price is not pinned by the LP; report the
        // defining lower bound instead.
        for a in 0..inst.n_anes() {
            let an = &inst.anesthesiologists[a];
            let h = inst.h_reg(a);
            let load: f64 = self.ctx.idx.i_of_a[a].iter().filter(|&&i| sol.x[i][a]).map(|&i| d[i]).sum();
            out.g_a[a] = ((an.shift_end - an.shift_start - load) * h + out.o_a[a]).max(0.0);
        }
        for r in 0..inst.n_rooms() {
            let open = if sol.v[r] { inst.rooms[r].horizon_end } else { 0.0 };
            let load: f64 = self.ctx.idx.i_of_r[r].iter().filter(|&&i| sol.z[i][r]).map(|&i| d[i]).sum();
            out.g_r[r] = (open - load + out.o_r[r]).max(0.0);
        }
        for i in 0..self.ctx.n() {
            out.w[i] = (out.q[i] - sol.s[i]).max(0.0);
        }
        out.cost = out.recompute_cost(inst);
        Ok(out)
    }

    /// Recourse value through the reduced dual LP.
    pub fn evaluate_dual(
        &self,
        sol: &FirstStageSolution,
        d: &[f64],
        bounds: &DualBounds,
    ) -> Result<DualOutcome, ModelError> {
        recourse_dual(&self.ctx, sol, d, bounds)
    }
}

/// Q(sol, d) as an LP solve.
pub fn evaluate_recourse(inst: &Instance, sol: &FirstStageSolution, d: &[f64]) -> Result<SecondStageOutcome, ModelError> {
    Evaluator::new(inst)?.evaluate(sol, d)
}

/// Optimal multipliers of the recourse LP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualOutcome {
    pub value: f64,
    /// (i, i', value) for the sequencing rows
    pub lambda: Vec<(usize, usize, f64)>,
    /// (i, a, value) for anesthesiologist overtime rows
    pub mu: Vec<(usize, usize, f64)>,
    /// (i, r, value) for room overtime rows
    pub theta: Vec<(usize, usize, f64)>,
}

impl DualOutcome {
    pub fn lambda_at(&self, i: usize, j: usize) -> f64 {
        self.lambda.iter().find(|t| t.0 == i && t.1 == j).map_or(0.0, |t| t.2)
    }

    pub fn mu_at(&self, i: usize, a: usize) -> f64 {
        self.mu.iter().find(|t| t.0 == i && t.1 == a).map_or(0.0, |t| t.2)
    }

    pub fn theta_at(&self, i: usize, r: usize) -> f64 {
        self.theta.iter().find(|t| t.0 == i && t.1 == r).map_or(0.0, |t| t.2)
    }
}

/// Which dual multipliers may be nonzero at a fixed first stage
/// (complementary slackness with a sufficiently large big-M).
pub(crate) struct DualSupport {
    pub lambda: Vec<(usize, usize)>,
    pub mu: Vec<(usize, usize)>,
    pub theta: Vec<(usize, usize)>,
}

pub(crate) fn dual_support(ctx: &ModelContext, sol: &FirstStageSolution) -> DualSupport {
    let inst = ctx.inst;
    let lambda = ctx.ordered_pairs().into_iter().filter(|&(i, j)| sol.u[i][j]).collect();
    let mu = ctx
        .idx
        .f_a
        .iter()
        .copied()
        .filter(|&(i, a)| sol.x[i][a] && !sol.y[a] && inst.anesthesiologists[a].is_regular)
        .collect();
    let theta = ctx.idx.f_r.iter().copied().filter(|&(i, r)| sol.z[i][r]).collect();
    DualSupport { lambda, mu, theta }
}

/// Constant part of the dual objective: idle baselines minus the idle
/// credit for the realized workload.
pub(crate) fn dual_constant(ctx: &ModelContext, sol: &FirstStageSolution, d: &[f64]) -> f64 {
    let inst = ctx.inst;
    let mut c = 0.0;
    for a in 0..inst.n_anes() {
        let an = &inst.anesthesiologists[a];
        c += inst.cg_anes(a) * (an.shift_end - an.shift_start) * inst.h_reg(a);
    }
    for r in 0..inst.n_rooms() {
        if sol.v[r] {
            c += inst.cg_room(r) * inst.rooms[r].horizon_end;
        }
    }
    c - (0..ctx.n()).map(|i| d[i] * idle_credit(ctx, sol, i)).sum::<f64>()
}

/// Per-minute idle price released when surgery `i` lengthens.
pub(crate) fn idle_credit(ctx: &ModelContext, sol: &FirstStageSolution, i: usize) -> f64 {
    let inst = ctx.inst;
    let a: f64 = ctx.idx.a_of[i].iter().filter(|&&a| sol.x[i][a]).map(|&a| inst.cg_anes(a) * inst.h_reg(a)).sum();
    let r: f64 = ctx.idx.r_of[i].iter().filter(|&&r| sol.z[i][r]).map(|&r| inst.cg_room(r)).sum();
    a + r
}

fn recourse_dual(
    ctx: &ModelContext,
    sol: &FirstStageSolution,
    d: &[f64],
    bounds: &DualBounds,
) -> Result<DualOutcome, ModelError> {
    let inst = ctx.inst;
    let n = ctx.n();
    let sup = dual_support(ctx, sol);
    let mut m = MilpModel::new();
    let lam: Vec<VarId> = sup
        .lambda
        .iter()
        .map(|&(i, j)| m.continuous(format!("lambda[{i},{j}]"), 0.0, bounds.lambda_bar))
        .collect();
    let mu: Vec<VarId> = sup
        .mu
        .iter()
        .map(|&(i, a)| m.continuous(format!("mu[{i},{a}]"), 0.0, bounds.mu_bar[a]))
        .collect();
    let th: Vec<VarId> = sup
        .theta
        .iter()
        .map(|&(i, r)| m.continuous(format!("theta[{i},{r}]"), 0.0, bounds.theta_bar[r]))
        .collect();
    // maximize => minimize the negation
    for (k, &(i, j)) in sup.lambda.iter().enumerate() {
        m.add_obj(lam[k], -(sol.s[i] - sol.s[j] + d[i]));
    }
    for (k, &(i, a)) in sup.mu.iter().enumerate() {
        m.add_obj(mu[k], -(sol.s[i] - inst.anesthesiologists[a].shift_end + d[i]));
    }
    for (k, &(i, r)) in sup.theta.iter().enumerate() {
        m.add_obj(th[k], -(sol.s[i] - inst.rooms[r].horizon_end + d[i]));
    }
    m.objective_constant = -dual_constant(ctx, sol, d);
    for a in 0..inst.n_anes() {
        let terms: Vec<_> = sup.mu.iter().zip(&mu).filter(|((_, b), _)| *b == a).map(|(_, &v)| (v, 1.0)).collect();
        if !terms.is_empty() {
            m.add_row(format!("mu_cap[{a}]"), terms, RowSense::Le, inst.cg_anes(a) + inst.co_anes(a));
        }
    }
    for r in 0..inst.n_rooms() {
        let terms: Vec<_> = sup.theta.iter().zip(&th).filter(|((_, b), _)| *b == r).map(|(_, &v)| (v, 1.0)).collect();
        if !terms.is_empty() {
            m.add_row(format!("theta_cap[{r}]"), terms, RowSense::Le, inst.cg_room(r) + inst.co_room(r));
        }
    }
    for i in 0..n {
        let mut terms = vec![];
        for (k, &(p, q)) in sup.lambda.iter().enumerate() {
            if p == i {
                terms.push((lam[k], 1.0));
            }
            if q == i {
                terms.push((lam[k], -1.0));
            }
        }
        for (k, &(p, _)) in sup.mu.iter().enumerate() {
            if p == i {
                terms.push((mu[k], 1.0));
            }
        }
        for (k, &(p, _)) in sup.theta.iter().enumerate() {
            if p == i {
                terms.push((th[k], 1.0));
            }
        }
        if !terms.is_empty() {
            m.add_row(format!("flow[{i}]"), terms, RowSense::Ge, -inst.cw(i));
        }
    }
    let res = solve(&m, &SolveParams::exact())?;
    if res.status != SolveStatus::OptimalWithinGap {
        return Err(ModelError::Backend(format!("dual LP ended {:?}: {}", res.status, res.message)));
    }
    let pick = |ids: &[VarId], keys: &[(usize, usize)]| {
        keys.iter()
            .zip(ids)
            .map(|(&(p, q), v)| (p, q, res.values[v.0]))
            .filter(|t| t.2.abs() > 1e-9)
            .collect::<Vec<_>>()
    };
    Ok(DualOutcome {
        value: -res.objective,
        lambda: pick(&lam, &sup.lambda),
        mu: pick(&mu, &sup.mu),
        theta: pick(&th, &sup.theta),
    })
}

/// Q(sol, d) through the dual LP; multipliers outside the complementary
/// support are fixed at zero.
pub fn evaluate_recourse_dual(
    inst: &Instance,
    sol: &FirstStageSolution,
    d: &[f64],
    bounds: &DualBounds,
) -> Result<DualOutcome, ModelError> {
    let ctx = ModelContext::new(inst, true)?;
    recourse_dual(&ctx, sol, d, bounds)
}

/// Switches for the symmetry-breaking families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SbcOptions {
    /// Surgery-to-room assignment order, both directions.
    pub assignment_order: bool,
    /// Index-ascending sequencing inside a room.
    pub room_sequence: bool,
    /// Rooms with smaller index carry at least as many surgeries.
    pub room_load: bool,
    /// Rooms of a type are opened in index order.
    pub room_opening: bool,
    /// z = 0 for room index above surgery index.
    pub room_fixing: bool,
    /// First surgery of a pool goes to the pool's first regular anesthesiologist.
    pub anes_anchor: bool,
    /// y ordering among interchangeable on-call staff.
    pub on_call_order: bool,
    /// Full lexicographic ordering of anesthesiologist assignment vectors.
    pub anes_lex: bool,
}

impl Default for SbcOptions {
    fn default() -> Self {
        SbcOptions {
            assignment_order: true,
            room_sequence: true,
            room_load: true,
            room_opening: true,
            room_fixing: true,
            anes_anchor: true,
            on_call_order: true,
            anes_lex: false,
        }
    }
}

impl SbcOptions {
    pub fn none() -> Self {
        SbcOptions {
            assignment_order: false,
            room_sequence: false,
            room_load: false,
            room_opening: false,
            room_fixing: false,
            anes_anchor: false,
            on_call_order: false,
            anes_lex: false,
        }
    }
}

/// Surgery group (a type, or a sub-type inside it) with the rooms of its type.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetryGroup {
    pub label: String,
    pub surgeries: Vec<usize>,
    pub rooms: Vec<usize>,
    pub subtype: bool,
}

pub fn symmetry_groups(inst: &Instance) -> Result<Vec<SymmetryGroup>, ModelError> {
    if !contiguous(inst.surgeries.iter().map(|s| s.surgery_type.as_str())) {
        return Err(ModelError::Structure("surgery types interleave".into()));
    }
    if !contiguous(inst.rooms.iter().map(|r| r.room_type.as_str())) {
        return Err(ModelError::Structure("room types interleave".into()));
    }
    let with_sub = inst.surgeries.iter().any(|s| s.subtype.is_some());
    let label = |i: usize| {
        let s = &inst.surgeries[i];
        if with_sub {
            format!("{}/{}", s.surgery_type, s.subtype.clone().unwrap_or_default())
        } else {
            s.surgery_type.clone()
        }
    };
    if with_sub {
        let labels: Vec<String> = (0..inst.n_surgeries()).map(label).collect();
        if !contiguous(labels.iter().map(|s| s.as_str())) {
            return Err(ModelError::Structure("sub-types interleave".into()));
        }
    }
    let mut out: Vec<SymmetryGroup> = vec![];
    for i in 0..inst.n_surgeries() {
        let l = label(i);
        match out.last_mut() {
            Some(g) if g.label == l => g.surgeries.push(i),
            _ => {
                let t = &inst.surgeries[i].surgery_type;
                let rooms = (0..inst.n_rooms()).filter(|&r| &inst.rooms[r].room_type == t).collect();
                out.push(SymmetryGroup { label: l, surgeries: vec![i], rooms, subtype: with_sub });
            }
        }
    }
    Ok(out)
}

/// Anesthesiologists grouped by identical covered-type sets, in index order.
pub fn anesthesiologist_pools(inst: &Instance) -> Vec<Vec<usize>> {
    let mut pools: Vec<(BTreeSet<&str>, Vec<usize>)> = vec![];
    for (a, an) in inst.anesthesiologists.iter().enumerate() {
        let key: BTreeSet<&str> = an.covered_types.iter().map(|s| s.as_str()).collect();
        match pools.iter_mut().find(|p| p.0 == key) {
            Some(p) => p.1.push(a),
            None => pools.push((key, vec![a])),
        }
    }
    pools.into_iter().map(|p| p.1).collect()
}

fn same_room(inst: &Instance, r1: usize, r2: usize) -> bool {
    let (a, b) = (&inst.rooms[r1], &inst.rooms[r2]);
    a.room_type == b.room_type
        && a.horizon_end == b.horizon_end
        && a.fixed_cost == b.fixed_cost
        && a.overtime_cost == b.overtime_cost
        && a.idle_cost == b.idle_cost
}

fn same_anes(inst: &Instance, a1: usize, a2: usize) -> bool {
    let (a, b) = (&inst.anesthesiologists[a1], &inst.anesthesiologists[a2]);
    a.shift_start == b.shift_start
        && a.shift_end == b.shift_end
        && a.is_regular == b.is_regular
        && a.call_in_cost == b.call_in_cost
        && a.overtime_cost == b.overtime_cost
        && a.idle_cost == b.idle_cost
}

/// Append the enabled symmetry-breaking families.
pub fn add_symmetry_breaking(
    m: &mut MilpModel,
    ctx: &ModelContext,
    fs: &FirstStageVars,
    opts: &SbcOptions,
) -> Result<(), ModelError> {
    let inst = ctx.inst;
    let groups = symmetry_groups(inst)?;
    let zv = |i: usize, r: usize| fs.z[i][r];
    for g in &groups {
        let (is, rs) = (&g.surgeries, &g.rooms);
        let kk = rs.len();
        if opts.assignment_order && kk > 0 {
            for j in 1..is.len() {
                let (prev, cur) = (is[j - 1], is[j]);
                for k in 0..kk {
                    if g.subtype {
                        // cur in room k => prev in a room with index <= k
                        let mut t: Vec<(VarId, f64)> = zv(cur, rs[k]).map(|v| (v, 1.0)).into_iter().collect();
                        t.extend((0..=k).filter_map(|k2| zv(prev, rs[k2]).map(|v| (v, -1.0))));
                        m.add_row(format!("sbc_sub_lo[{cur},{k}]"), t, RowSense::Le, 0.0);
                        let mut t: Vec<(VarId, f64)> = zv(prev, rs[k]).map(|v| (v, 1.0)).into_iter().collect();
                        t.extend((k..kk).filter_map(|k2| zv(cur, rs[k2]).map(|v| (v, -1.0))));
                        m.add_row(format!("sbc_sub_hi[{prev},{k}]"), t, RowSense::Le, 0.0);
                    } else {
                        let mut t: Vec<(VarId, f64)> = zv(cur, rs[k]).map(|v| (v, 1.0)).into_iter().collect();
                        if k > 0 {
                            t.extend(zv(prev, rs[k - 1]).map(|v| (v, -1.0)));
                        }
                        t.extend(zv(prev, rs[k]).map(|v| (v, -1.0)));
                        m.add_row(format!("sbc_order_lo[{cur},{k}]"), t, RowSense::Le, 0.0);
                        let mut t: Vec<(VarId, f64)> = zv(prev, rs[k]).map(|v| (v, 1.0)).into_iter().collect();
                        t.extend(zv(cur, rs[k]).map(|v| (v, -1.0)));
                        if k + 1 < kk {
                            t.extend(zv(cur, rs[k + 1]).map(|v| (v, -1.0)));
                        }
                        m.add_row(format!("sbc_order_hi[{prev},{k}]"), t, RowSense::Le, 0.0);
                    }
                }
            }
        }
        if opts.room_sequence {
            for j in 1..is.len() {
                let (prev, cur) = (is[j - 1], is[j]);
                let Some(uv) = fs.u[prev][cur] else { continue };
                for &r in rs {
                    if let (Some(a), Some(b)) = (zv(prev, r), zv(cur, r)) {
                        m.add_row(format!("sbc_seq[{prev},{cur},{r}]"), vec![(uv, 1.0), (a, -1.0), (b, -1.0)], RowSense::Ge, -1.0);
                    }
                }
            }
        }
        let identical_rooms = rs.windows(2).all(|w| same_room(inst, w[0], w[1]));
        if opts.room_load && !g.subtype && identical_rooms && groups.iter().filter(|h| h.rooms == *rs).count() == 1 {
            for k in 1..kk {
                let mut t: Vec<(VarId, f64)> = is.iter().filter_map(|&i| zv(i, rs[k - 1]).map(|v| (v, 1.0))).collect();
                t.extend(is.iter().filter_map(|&i| zv(i, rs[k]).map(|v| (v, -1.0))));
                m.add_row(format!("sbc_load[{},{k}]", g.label), t, RowSense::Ge, 0.0);
            }
        }
        if opts.room_fixing && !g.subtype && identical_rooms {
            for j in 0..is.len().min(kk) {
                for k in (j + 1)..kk {
                    if let Some(v) = zv(is[j], rs[k]) {
                        m.fix(v, 0.0);
                    }
                }
            }
        }
    }
    if opts.room_opening {
        let mut seen = BTreeSet::new();
        for g in &groups {
            if !seen.insert(g.rooms.clone()) {
                continue;
            }
            for k in 1..g.rooms.len() {
                let (a, b) = (g.rooms[k - 1], g.rooms[k]);
                if same_room(inst, a, b) {
                    m.add_row(format!("sbc_open[{a},{b}]"), vec![(fs.v[a], 1.0), (fs.v[b], -1.0)], RowSense::Ge, 0.0);
                }
            }
        }
    }
    for pool in anesthesiologist_pools(inst) {
        let regular: Vec<usize> = pool.iter().copied().filter(|&a| inst.anesthesiologists[a].is_regular).collect();
        let on_call: Vec<usize> = pool.iter().copied().filter(|&a| inst.anesthesiologists[a].is_on_call).collect();
        let pool_set: BTreeSet<usize> = pool.iter().copied().collect();
        let served: Vec<usize> = (0..ctx.n())
            .filter(|&i| ctx.idx.a_of[i].iter().copied().collect::<BTreeSet<_>>() == pool_set)
            .collect();
        if opts.anes_anchor {
            if let (Some(&i), Some(&a)) = (served.first(), regular.first()) {
                if let Some(v) = fs.x[i][a] {
                    m.fix(v, 1.0);
                }
            }
        }
        if opts.on_call_order {
            for w in on_call.windows(2) {
                if same_anes(inst, w[0], w[1]) {
                    m.add_row(format!("sbc_oncall[{},{}]", w[0], w[1]), vec![(fs.y[w[0]], 1.0), (fs.y[w[1]], -1.0)], RowSense::Le, 0.0);
                }
            }
        }
        if opts.anes_lex {
            let nn = served.len();
            for w in regular.windows(2) {
                if !same_anes(inst, w[0], w[1]) {
                    continue;
                }
                let mut t = vec![];
                for (j, &i) in served.iter().enumerate() {
                    let wgt = 2f64.powi((nn - 1 - j) as i32);
                    t.extend(fs.x[i][w[0]].map(|v| (v, wgt)));
                    t.extend(fs.x[i][w[1]].map(|v| (v, -wgt)));
                }
                m.add_row(format!("sbc_lex[{},{}]", w[0], w[1]), t, RowSense::Ge, 0.0);
            }
        }
    }
    Ok(())
}

/// Idle-time nonnegativity for one scenario block.
pub fn add_idle_nonneg_vi(
    m: &mut MilpModel,
    ctx: &ModelContext,
    fs: &impl FirstStageView,
    ss: &SecondStageVars,
    d: &[f64],
    tag: &str,
) {
    let inst = ctx.inst;
    for a in 0..inst.n_anes() {
        let h = inst.h_reg(a);
        let an = &inst.anesthesiologists[a];
        let mut lhs = Lin::var(ss.o_a[a]).plus((an.shift_end - an.shift_start) * h);
        if h > 0.0 {
            for &i in &ctx.idx.i_of_a[a] {
                lhs = lhs.add(&fs.x(i, a), -d[i] * h);
            }
        }
        add_lin_row(m, format!("vi_anes{tag}[{a}]"), lhs, RowSense::Ge);
    }
    for r in 0..inst.n_rooms() {
        let mut lhs = Lin::var(ss.o_r[r]).add(&fs.v(r), inst.rooms[r].horizon_end);
        for &i in &ctx.idx.i_of_r[r] {
            lhs = lhs.add(&fs.z(i, r), -d[i]);
        }
        add_lin_row(m, format!("vi_room{tag}[{r}]"), lhs, RowSense::Ge);
    }
}

/// Gantt-ready table: surgery, room, anesthesiologist, s, q, q + d.
pub fn schedule_table(sol: &FirstStageSolution, q: &[f64], d: &[f64]) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["surgery", "room", "anesthesiologist", "scheduled_start", "actual_start", "end"])
        .expect("in-memory write");
    for i in 0..sol.n() {
        w.write_record([
            i.to_string(),
            sol.room_of(i).map_or("-".into(), |r| r.to_string()),
            sol.anes_of(i).map_or("-".into(), |a| a.to_string()),
            format!("{:.4}", sol.s[i]),
            format!("{:.4}", q[i]),
            format!("{:.4}", q[i] + d[i]),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
}
