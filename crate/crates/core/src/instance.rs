//! Problem data: surgeries, rooms, anesthesiologists, costs and durations.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum InstanceError {
    #[error("unknown catalog id {0} (expected 1..=6)")]
    UnknownCatalog(u32),
    #[error("unknown cost structure {0} (expected 1, 2 or 3)")]
    UnknownCostStructure(u32),
    #[error("surgery {surgery} has no compatible {resource}")]
    StructurallyInfeasible { surgery: usize, resource: &'static str },
    #[error("invalid money amount '{0}'")]
    BadMoney(String),
    #[error("instance does not validate: {0}")]
    Invalid(String),
}

const MONEY_SCALE: i64 = 10_000;

/// Fixed-point money amount with four decimal places.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(i64);

impl Money {
    pub const ZERO: Money = Money(0);

    pub fn from_units(units: i64) -> Self {
        Money(units * MONEY_SCALE)
    }

    pub fn from_raw(raw: i64) -> Self {
        Money(raw)
    }

    pub fn raw(self) -> i64 {
        self.0
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / MONEY_SCALE as f64
    }

    pub fn is_negative(self) -> bool {
        self.0 < 0
    }
}

impl std::ops::Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        let int = abs / MONEY_SCALE as u64;
        let frac = abs % MONEY_SCALE as u64;
        if frac == 0 {
            write!(f, "{sign}{int}")
        } else {
            let s = format!("{frac:04}");
            write!(f, "{sign}{int}.{}", s.trim_end_matches('0'))
        }
    }
}

impl FromStr for Money {
    type Err = InstanceError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || InstanceError::BadMoney(s.to_string());
        let t = s.trim();
        let (neg, t) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t),
        };
        let (int, frac) = match t.split_once('.') {
            Some((i, f)) => (i, f),
            None => (t, ""),
        };
        if int.is_empty() || frac.len() > 4 || !int.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        if !frac.chars().all(|c| c.is_ascii_digit()) {
            return Err(bad());
        }
        let i: i64 = int.parse().map_err(|_| bad())?;
        let f: i64 = if frac.is_empty() { 0 } else { format!("{frac:0<4}").parse().map_err(|_| bad())? };
        let raw = i.checked_mul(MONEY_SCALE).and_then(|v| v.checked_add(f)).ok_or_else(bad)?;
        Ok(Money(if neg { -raw } else { raw }))
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            S(String),
            I(i64),
            F(f64),
        }
        match Raw::deserialize(d)? {
            Raw::S(s) => s.parse().map_err(serde::de::Error::custom),
            Raw::I(i) => Ok(Money::from_units(i)),
            Raw::F(f) => Ok(Money((f * MONEY_SCALE as f64).round() as i64)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Surgery {
    pub id: usize,
    pub surgery_type: String,
    /// Optional finer label; surgeries sharing a subtype share a duration law.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtype: Option<String>,
    pub waiting_cost: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingRoom {
    pub id: usize,
    pub room_type: String,
    pub horizon_end: f64,
    pub fixed_cost: Money,
    pub overtime_cost: Money,
    pub idle_cost: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anesthesiologist {
    pub id: usize,
    pub shift_start: f64,
    pub shift_end: f64,
    pub is_regular: bool,
    pub is_on_call: bool,
    pub call_in_cost: Money,
    pub overtime_cost: Money,
    pub idle_cost: Money,
    pub covered_types: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DurationModel {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl DurationModel {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> DurationModel {
        DurationModel {
            mean: idx.iter().map(|&i| self.mean[i]).collect(),
            std: idx.iter().map(|&i| self.std[i]).collect(),
            lo: idx.iter().map(|&i| self.lo[i]).collect(),
            hi: idx.iter().map(|&i| self.hi[i]).collect(),
        }
    }
}

/// A full problem instance.
///
/// Cost rates (waiting, overtime, idle) are money per `rate_minutes` minutes;
/// durations and times are minutes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub name: String,
    #[serde(default = "one")]
    pub rate_minutes: u32,
    pub surgeries: Vec<Surgery>,
    pub rooms: Vec<OperatingRoom>,
    pub anesthesiologists: Vec<Anesthesiologist>,
    pub compat_anes: Vec<Vec<bool>>,
    pub compat_room: Vec<Vec<bool>>,
    pub durations: DurationModel,
}

fn one() -> u32 {
    1
}

impl Instance {
    pub fn n_surgeries(&self) -> usize {
        self.surgeries.len()
    }

    pub fn n_rooms(&self) -> usize {
        self.rooms.len()
    }

    pub fn n_anes(&self) -> usize {
        self.anesthesiologists.len()
    }

    fn per_minute(&self, m: Money) -> f64 {
        m.to_f64() / self.rate_minutes.max(1) as f64
    }

    /// Waiting cost of surgery `i` per minute.
    pub fn cw(&self, i: usize) -> f64 {
        self.per_minute(self.surgeries[i].waiting_cost)
    }

    pub fn co_room(&self, r: usize) -> f64 {
        self.per_minute(self.rooms[r].overtime_cost)
    }

    pub fn cg_room(&self, r: usize) -> f64 {
        self.per_minute(self.rooms[r].idle_cost)
    }

    pub fn co_anes(&self, a: usize) -> f64 {
        self.per_minute(self.anesthesiologists[a].overtime_cost)
    }

    pub fn cg_anes(&self, a: usize) -> f64 {
        self.per_minute(self.anesthesiologists[a].idle_cost)
    }

    pub fn fixed_room(&self, r: usize) -> f64 {
        self.rooms[r].fixed_cost.to_f64()
    }

    pub fn fixed_anes(&self, a: usize) -> f64 {
        self.anesthesiologists[a].call_in_cost.to_f64()
    }

    pub fn h_reg(&self, a: usize) -> f64 {
        if self.anesthesiologists[a].is_regular {
            1.0
        } else {
            0.0
        }
    }

    /// Latest room horizon (T^end when all rooms share one).
    pub fn horizon(&self) -> f64 {
        self.rooms.iter().map(|r| r.horizon_end).fold(0.0, f64::max)
    }

    /// Rebuild both compatibility matrices from type labels.
    pub fn recompute_compat(&mut self) {
        self.compat_room = self
            .surgeries
            .iter()
            .map(|s| self.rooms.iter().map(|r| r.room_type == s.surgery_type).collect())
            .collect();
        self.compat_anes = self
            .surgeries
            .iter()
            .map(|s| {
                self.anesthesiologists
                    .iter()
                    .map(|a| a.covered_types.contains(&s.surgery_type))
                    .collect()
            })
            .collect();
    }

    /// Replace the duration model, e.g. to make the support degenerate.
    pub fn with_durations(mut self, dm: DurationModel) -> Self {
        self.durations = dm;
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serialises")
    }

    pub fn from_json(text: &str) -> Result<Self, InstanceError> {
        serde_json::from_str(text).map_err(|e| InstanceError::Invalid(e.to_string()))
    }
}

/// Feasible assignment index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeasibilityIndex {
    pub a_of: Vec<Vec<usize>>,
    pub r_of: Vec<Vec<usize>>,
    pub i_of_a: Vec<Vec<usize>>,
    pub i_of_r: Vec<Vec<usize>>,
    pub f_a: Vec<(usize, usize)>,
    pub f_r: Vec<(usize, usize)>,
}

impl FeasibilityIndex {
    pub fn shares_resource(&self, i: usize, j: usize) -> bool {
        self.a_of[i].iter().any(|a| self.a_of[j].contains(a))
            || self.r_of[i].iter().any(|r| self.r_of[j].contains(r))
    }

    /// Connected components of the surgery/resource compatibility graph,
    /// each given as its sorted surgery list.
    pub fn surgery_components(&self) -> Vec<Vec<usize>> {
        let n = self.a_of.len();
        let mut comp = vec![usize::MAX; n];
        let mut out = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut stack = vec![start];
            comp[start] = id;
            let mut members = vec![];
            while let Some(i) = stack.pop() {
                members.push(i);
                for j in 0..n {
                    if comp[j] == usize::MAX && self.shares_resource(i, j) {
                        comp[j] = id;
                        stack.push(j);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Component label per surgery.
    pub fn component_of(&self) -> Vec<usize> {
        let mut lab = vec![0; self.a_of.len()];
        for (c, members) in self.surgery_components().iter().enumerate() {
            for &i in members {
                lab[i] = c;
            }
        }
        lab
    }
}

pub fn derive_feasibility(inst: &Instance) -> Result<FeasibilityIndex, InstanceError> {
    let n = inst.n_surgeries();
    let mut idx = FeasibilityIndex {
        a_of: vec![vec![]; n],
        r_of: vec![vec![]; n],
        i_of_a: vec![vec![]; inst.n_anes()],
        i_of_r: vec![vec![]; inst.n_rooms()],
        f_a: vec![],
        f_r: vec![],
    };
    for i in 0..n {
        for a in 0..inst.n_anes() {
            if inst.compat_anes.get(i).and_then(|row| row.get(a)).copied().unwrap_or(false) {
                idx.a_of[i].push(a);
                idx.i_of_a[a].push(i);
                idx.f_a.push((i, a));
            }
        }
        for r in 0..inst.n_rooms() {
            if inst.compat_room.get(i).and_then(|row| row.get(r)).copied().unwrap_or(false) {
                idx.r_of[i].push(r);
                idx.i_of_r[r].push(i);
                idx.f_r.push((i, r));
            }
        }
        if idx.a_of[i].is_empty() {
            return Err(InstanceError::StructurallyInfeasible { surgery: i, resource: "anesthesiologist" });
        }
        if idx.r_of[i].is_empty() {
            return Err(InstanceError::StructurallyInfeasible { surgery: i, resource: "room" });
        }
    }
    Ok(idx)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub code: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn has(&self, code: &str) -> bool {
        self.findings.iter().any(|f| f.code == code)
    }

    fn push(&mut self, code: &'static str, detail: String) {
        self.findings.push(Finding { code, detail });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for x in &self.findings {
            writeln!(f, "{}: {}", x.code, x.detail)?;
        }
        Ok(())
    }
}

pub fn validate_instance(inst: &Instance) -> ValidationReport {
    let mut rep = ValidationReport::default();
    let n = inst.n_surgeries();
    if inst.rate_minutes == 0 {
        rep.push("rate-basis", "rate_minutes must be positive".into());
    }
    let mut seen = BTreeSet::new();
    for s in &inst.surgeries {
        if !seen.insert(s.id) {
            rep.push("duplicate-id", format!("surgery id {} repeated", s.id));
        }
        if s.waiting_cost.is_negative() {
            rep.push("negative-cost", format!("surgery {} waiting cost", s.id));
        }
    }
    let day_end = inst.horizon();
    for r in &inst.rooms {
        if r.horizon_end <= 0.0 || !r.horizon_end.is_finite() {
            rep.push("horizon", format!("room {} horizon_end {}", r.id, r.horizon_end));
        }
        for (what, c) in [("fixed", r.fixed_cost), ("overtime", r.overtime_cost), ("idle", r.idle_cost)] {
            if c.is_negative() {
                rep.push("negative-cost", format!("room {} {what} cost", r.id));
            }
        }
    }
    for a in &inst.anesthesiologists {
        if a.is_regular == a.is_on_call {
            rep.push("flag-exclusivity", format!("anesthesiologist {} regular={} on_call={}", a.id, a.is_regular, a.is_on_call));
        }
        if !(0.0 <= a.shift_start && a.shift_start < a.shift_end && a.shift_end <= day_end) {
            rep.push("shift-window", format!("anesthesiologist {} shift [{}, {}]", a.id, a.shift_start, a.shift_end));
        }
        for (what, c) in [("call-in", a.call_in_cost), ("overtime", a.overtime_cost), ("idle", a.idle_cost)] {
            if c.is_negative() {
                rep.push("negative-cost", format!("anesthesiologist {} {what} cost", a.id));
            }
        }
    }
    let dm = &inst.durations;
    if [dm.mean.len(), dm.std.len(), dm.lo.len(), dm.hi.len()].iter().any(|&l| l != n) {
        rep.push("duration-shape", format!("duration vectors must have length {n}"));
    } else {
        for i in 0..n {
            if !(dm.lo[i] > 0.0) {
                rep.push("duration-support", format!("surgery {i} lower bound {} not positive", dm.lo[i]));
            }
            if dm.lo[i] > dm.hi[i] {
                rep.push("duration-support", format!("surgery {i} lo {} > hi {}", dm.lo[i], dm.hi[i]));
            }
            if dm.mean[i] < dm.lo[i] || dm.mean[i] > dm.hi[i] {
                rep.push("mean-outside-support", format!("surgery {i} mean {} outside [{}, {}]", dm.mean[i], dm.lo[i], dm.hi[i]));
            }
            if dm.std[i] < 0.0 {
                rep.push("duration-std", format!("surgery {i} std {}", dm.std[i]));
            }
        }
    }
    let shape_ok = inst.compat_anes.len() == n
        && inst.compat_room.len() == n
        && inst.compat_anes.iter().all(|r| r.len() == inst.n_anes())
        && inst.compat_room.iter().all(|r| r.len() == inst.n_rooms());
    if !shape_ok {
        rep.push("compat-shape", "compatibility matrices have the wrong shape".into());
        return rep;
    }
    for (i, s) in inst.surgeries.iter().enumerate() {
        for (r, room) in inst.rooms.iter().enumerate() {
            if inst.compat_room[i][r] != (room.room_type == s.surgery_type) {
                rep.push("compat-room", format!("surgery {i} / room {r} inconsistent with types"));
            }
        }
        for (a, an) in inst.anesthesiologists.iter().enumerate() {
            if inst.compat_anes[i][a] != an.covered_types.contains(&s.surgery_type) {
                rep.push("compat-anes", format!("surgery {i} / anesthesiologist {a} inconsistent with covered types"));
            }
        }
        if !inst.compat_room[i].iter().any(|&b| b) {
            rep.push("no-room", format!("surgery {i} has no compatible room"));
        }
        if !inst.compat_anes[i].iter().any(|&b| b) {
            rep.push("no-anesthesiologist", format!("surgery {i} has no compatible anesthesiologist"));
        }
    }
    // Symmetry-breaking index conventions need each type to be contiguous.
    if !contiguous(inst.surgeries.iter().map(|s| s.surgery_type.as_str())) {
        rep.push("type-order", "surgeries of one type are not indexed contiguously".into());
    }
    if !contiguous(inst.rooms.iter().map(|r| r.room_type.as_str())) {
        rep.push("type-order", "rooms of one type are not indexed contiguously".into());
    }
    rep
}

pub(crate) fn contiguous<'a>(labels: impl Iterator<Item = &'a str>) -> bool {
    let mut done: BTreeSet<&str> = BTreeSet::new();
    let mut cur: Option<&str> = None;
    for l in labels {
        if cur != Some(l) {
            if done.contains(l) {
                return false;
            }
            if let Some(c) = cur {
                done.insert(c);
            }
            cur = Some(l);
        }
    }
    true
}

/// Per-type duration statistics for the benchmark catalog:
/// (type, mean, std, min, max).
pub const CATALOG_TYPES: [(&str, f64, f64, f64, f64); 6] = [
    ("CARD", 99.0, 53.0, 54.0, 143.0),
    ("ORTH", 142.0, 58.0, 87.0, 188.0),
    ("GYN", 78.0, 52.0, 31.0, 121.0),
    ("MED", 75.0, 42.0, 37.0, 111.0),
    ("GASTRO", 132.0, 76.0, 66.0, 194.0),
    ("URO", 72.0, 38.0, 44.0, 94.0),
];

/// Types covered by the shared anesthesiologist pool.
pub const POOLED_TYPES: [&str; 3] = ["MED", "GASTRO", "URO"];

struct Composition {
    /// (type, surgeries, rooms)
    types: &'static [(&'static str, usize, usize)],
    /// (type, regular, on-call) for specialists
    specialists: &'static [(&'static str, usize, usize)],
    pool: (usize, usize),
}

const COMPOSITIONS: [Composition; 6] = [
    Composition {
        types: &[("CARD", 3, 1), ("ORTH", 4, 2), ("MED", 5, 2), ("GASTRO", 3, 2)],
        specialists: &[("CARD", 1, 0), ("ORTH", 1, 0)],
        pool: (2, 1),
    },
    Composition {
        types: &[("CARD", 5, 2), ("ORTH", 6, 2), ("MED", 7, 2), ("GASTRO", 2, 2)],
        specialists: &[("CARD", 2, 1), ("ORTH", 2, 1)],
        pool: (2, 1),
    },
    Composition {
        types: &[("CARD", 7, 2), ("ORTH", 4, 1), ("GYN", 2, 1), ("MED", 4, 1), ("GASTRO", 3, 1), ("URO", 5, 2)],
        specialists: &[("CARD", 2, 1), ("ORTH", 2, 1), ("GYN", 1, 0)],
        pool: (2, 1),
    },
    Composition {
        types: &[("CARD", 6, 2), ("ORTH", 7, 2), ("GYN", 11, 2), ("MED", 3, 1), ("GASTRO", 7, 2), ("URO", 6, 2)],
        specialists: &[("CARD", 2, 1), ("ORTH", 2, 1), ("GYN", 2, 1)],
        pool: (6, 1),
    },
    Composition {
        types: &[("CARD", 8, 3), ("ORTH", 10, 4), ("GYN", 15, 5), ("MED", 4, 1), ("GASTRO", 10, 4), ("URO", 8, 3)],
        specialists: &[("CARD", 4, 0), ("ORTH", 4, 0), ("GYN", 6, 0)],
        pool: (10, 0),
    },
    Composition {
        types: &[("CARD", 12, 5), ("ORTH", 14, 6), ("GYN", 22, 8), ("MED", 4, 1), ("GASTRO", 14, 6), ("URO", 14, 6)],
        specialists: &[("CARD", 6, 0), ("ORTH", 7, 0), ("GYN", 11, 0)],
        pool: (16, 0),
    },
];

/// Default day length and regular shift, in minutes.
pub const DEFAULT_HORIZON: f64 = 480.0;

/// Build benchmark instance `id` (1..=6) under idle-cost structure 1, 2 or 3.
///
/// Catalog rates are per hour (`rate_minutes = 60`).
pub fn build_catalog_instance(id: u32, cost_structure: u32) -> Result<Instance, InstanceError> {
    if !(1..=6).contains(&id) {
        return Err(InstanceError::UnknownCatalog(id));
    }
    let (cg_r, cg_a) = match cost_structure {
        1 => (0, 0),
        2 => (300, 0),
        3 => (300, 100),
        other => return Err(InstanceError::UnknownCostStructure(other)),
    };
    let comp = &COMPOSITIONS[id as usize - 1];
    let stats = |t: &str| CATALOG_TYPES.iter().find(|x| x.0 == t).copied().expect("catalog type");
    let mut inst = Instance {
        name: format!("catalog-{id}-cost{cost_structure}"),
        rate_minutes: 60,
        surgeries: vec![],
        rooms: vec![],
        anesthesiologists: vec![],
        compat_anes: vec![],
        compat_room: vec![],
        durations: DurationModel { mean: vec![], std: vec![], lo: vec![], hi: vec![] },
    };
    for &(t, ns, _) in comp.types {
        let (_, m, sd, lo, hi) = stats(t);
        for _ in 0..ns {
            inst.surgeries.push(Surgery {
                id: inst.surgeries.len(),
                surgery_type: t.to_string(),
                subtype: None,
                waiting_cost: Money::from_units(200),
            });
            inst.durations.mean.push(m);
            inst.durations.std.push(sd);
            inst.durations.lo.push(lo);
            inst.durations.hi.push(hi);
        }
    }
    for &(t, _, nr) in comp.types {
        for _ in 0..nr {
            inst.rooms.push(OperatingRoom {
                id: inst.rooms.len(),
                room_type: t.to_string(),
                horizon_end: DEFAULT_HORIZON,
                fixed_cost: Money::from_units(900),
                overtime_cost: Money::from_units(450),
                idle_cost: Money::from_units(cg_r),
            });
        }
    }
    let pooled: Vec<String> = comp
        .types
        .iter()
        .map(|x| x.0)
        .filter(|t| POOLED_TYPES.contains(t))
        .map(String::from)
        .collect();
    let mut groups: Vec<(Vec<String>, usize, usize)> =
        comp.specialists.iter().map(|&(t, reg, call)| (vec![t.to_string()], reg, call)).collect();
    groups.push((pooled, comp.pool.0, comp.pool.1));
    for (covered, reg, call) in groups {
        for k in 0..reg + call {
            let regular = k < reg;
            inst.anesthesiologists.push(Anesthesiologist {
                id: inst.anesthesiologists.len(),
                shift_start: 0.0,
                shift_end: DEFAULT_HORIZON,
                is_regular: regular,
                is_on_call: !regular,
                call_in_cost: if regular { Money::ZERO } else { Money::from_units(1000) },
                overtime_cost: Money::from_units(150),
                idle_cost: Money::from_units(cg_a),
                covered_types: covered.clone(),
            });
        }
    }
    inst.recompute_compat();
    Ok(inst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn money_round_trip() {
        for s in ["0", "450", "7.5", "-3.25", "0.0001"] {
            let m: Money = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
        assert!("1.23456".parse::<Money>().is_err());
        assert!("abc".parse::<Money>().is_err());
        assert_eq!(Money::from_units(3) + "0.5".parse().unwrap(), "3.5".parse().unwrap());
    }

    #[test]
    fn catalog_one_counts() {
        let inst = build_catalog_instance(1, 1).unwrap();
        assert_eq!((inst.n_surgeries(), inst.n_rooms(), inst.n_anes()), (15, 7, 5));
        let card = inst.surgeries.iter().filter(|s| s.surgery_type == "CARD").count();
        let card_rooms = inst.rooms.iter().filter(|r| r.room_type == "CARD").count();
        let card_reg = inst
            .anesthesiologists
            .iter()
            .filter(|a| a.is_regular && a.covered_types == ["CARD"])
            .count();
        assert_eq!((card, card_rooms, card_reg), (3, 1, 1));
    }

    #[test]
    fn catalog_six_costs() {
        let inst = build_catalog_instance(6, 3).unwrap();
        assert_eq!((inst.n_surgeries(), inst.n_rooms(), inst.n_anes()), (80, 32, 40));
        assert!(inst.rooms.iter().all(|r| r.idle_cost == Money::from_units(300)));
        assert!(inst.anesthesiologists.iter().all(|a| a.idle_cost == Money::from_units(100)));
    }

    #[test]
    fn catalog_totals_all() {
        let totals = [(15, 7, 5), (20, 8, 9), (25, 8, 10), (40, 11, 16), (55, 20, 24), (80, 32, 40)];
        for (k, t) in totals.iter().enumerate() {
            let inst = build_catalog_instance(k as u32 + 1, 1).unwrap();
            assert_eq!((inst.n_surgeries(), inst.n_rooms(), inst.n_anes()), *t);
            assert!(validate_instance(&inst).is_ok(), "{}", validate_instance(&inst));
        }
    }

    #[test]
    fn catalog_rejects_unknown() {
        assert_eq!(build_catalog_instance(7, 1), Err(InstanceError::UnknownCatalog(7)));
        assert_eq!(build_catalog_instance(1, 4), Err(InstanceError::UnknownCostStructure(4)));
    }

    #[test]
    fn pool_surgeries_share_three_anesthesiologists() {
        let inst = build_catalog_instance(1, 1).unwrap();
        let idx = derive_feasibility(&inst).unwrap();
        let pooled: Vec<usize> = (0..15)
            .filter(|&i| ["MED", "GASTRO"].contains(&inst.surgeries[i].surgery_type.as_str()))
            .collect();
        let first = &idx.a_of[pooled[0]];
        assert_eq!(first.len(), 3);
        assert!(pooled.iter().all(|&i| &idx.a_of[i] == first));
    }

    #[test]
    fn validation_flags() {
        let mut inst = build_catalog_instance(2, 1).unwrap();
        assert!(validate_instance(&inst).is_ok());
        inst.anesthesiologists[0].is_on_call = true;
        inst.durations.mean[3] = 1000.0;
        let rep = validate_instance(&inst);
        assert!(rep.has("flag-exclusivity"));
        assert!(rep.has("mean-outside-support"));
    }

    #[test]
    fn empty_room_set_is_error() {
        let mut inst = build_catalog_instance(1, 1).unwrap();
        inst.compat_room[0] = vec![false; inst.n_rooms()];
        assert_eq!(
            derive_feasibility(&inst),
            Err(InstanceError::StructurallyInfeasible { surgery: 0, resource: "room" })
        );
    }

    #[test]
    fn json_round_trip() {
        let inst = build_catalog_instance(3, 2).unwrap();
        let back = Instance::from_json(&inst.to_json()).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn components_follow_pools() {
        let inst = build_catalog_instance(1, 1).unwrap();
        let comps = derive_feasibility(&inst).unwrap().surgery_components();
        let sizes: Vec<usize> = comps.iter().map(|c| c.len()).collect();
        assert_eq!(sizes, vec![3, 4, 8]);
    }
}
