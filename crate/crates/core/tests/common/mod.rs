//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use orasp::instance::{Anesthesiologist, DurationModel, Instance, Money, OperatingRoom, Surgery};
use orasp::milp_adapter::{solve, MilpModel, RowSense, SolveParams, SolveStatus};
use orasp::model_core::{evaluate_recourse, FirstStageSolution};
use orasp::scenario::ScenarioSet;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Cost rates per minute for a hand-built instance.
#[derive(Debug, Clone)]
pub struct Costs {
    pub wait: i64,
    pub room_fixed: i64,
    pub room_ot: i64,
    pub room_idle: i64,
    pub call_in: i64,
    pub anes_ot: i64,
    pub anes_idle: i64,
}

impl Default for Costs {
    fn default() -> Self {
        Costs { wait: 2, room_fixed: 300, room_ot: 6, room_idle: 1, call_in: 400, anes_ot: 3, anes_idle: 1 }
    }
}

/// One surgery type: (name, surgeries, rooms, [mean, std, lo, hi]).
pub type TypeSpec = (&'static str, usize, usize, [f64; 4]);

/// Anesthesiologist: (covered types, regular).
pub type AnesSpec = (Vec<&'static str>, bool);

pub fn build(types: &[TypeSpec], anes: &[AnesSpec], horizon: f64, c: &Costs) -> Instance {
    let mut inst = Instance {
        name: "desk".into(),
        rate_minutes: 1,
        surgeries: vec![],
        rooms: vec![],
        anesthesiologists: vec![],
        compat_anes: vec![],
        compat_room: vec![],
        durations: DurationModel { mean: vec![], std: vec![], lo: vec![], hi: vec![] },
    };
    for &(t, ns, _, [m, sd, lo, hi]) in types {
        for _ in 0..ns {
            inst.surgeries.push(Surgery {
                id: inst.surgeries.len(),
                surgery_type: t.into(),
                subtype: None,
                waiting_cost: Money::from_units(c.wait),
            });
            inst.durations.mean.push(m);
            inst.durations.std.push(sd);
            inst.durations.lo.push(lo);
            inst.durations.hi.push(hi);
        }
    }
    for &(t, _, nr, _) in types {
        for _ in 0..nr {
            inst.rooms.push(OperatingRoom {
                id: inst.rooms.len(),
                room_type: t.into(),
                horizon_end: horizon,
                fixed_cost: Money::from_units(c.room_fixed),
                overtime_cost: Money::from_units(c.room_ot),
                idle_cost: Money::from_units(c.room_idle),
            });
        }
    }
    for (covered, regular) in anes {
        inst.anesthesiologists.push(Anesthesiologist {
            id: inst.anesthesiologists.len(),
            shift_start: 0.0,
            shift_end: horizon,
            is_regular: *regular,
            is_on_call: !regular,
            call_in_cost: if *regular { Money::ZERO } else { Money::from_units(c.call_in) },
            overtime_cost: Money::from_units(c.anes_ot),
            idle_cost: Money::from_units(c.anes_idle),
            covered_types: covered.iter().map(|s| s.to_string()).collect(),
        });
    }
    inst.recompute_compat();
    inst
}

/// Five surgeries, one anesthesiologist, two rooms, with the schedule
/// 5-4-3-2-1 on the anesthesiologist, 5-4-3 in room 1 and 2-1 in room 2.
pub fn five_surgery_example() -> (Instance, FirstStageSolution, Vec<f64>) {
    let c = Costs { wait: 100, room_fixed: 0, room_ot: 450, room_idle: 20, call_in: 0, anes_ot: 150, anes_idle: 30 };
    let inst = build(&[("T", 5, 2, [150.0, 10.0, 100.0, 200.0])], &[(vec!["T"], true)], 480.0, &c);
    let room = [1, 1, 0, 0, 0];
    let anes = [0; 5];
    let order = [4, 3, 2, 1, 0];
    let sol = FirstStageSolution::from_order(&inst, &anes, &room, &order, vec![400.0, 300.0, 200.0, 100.0, 0.0]);
    (inst, sol, vec![150.0, 160.0, 170.0, 180.0, 190.0])
}

/// Small random instance: one or two types, two rooms, two
/// anesthesiologists (one possibly on call).
pub fn desk_instance(seed: u64, n: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = |rng: &mut ChaCha8Rng| {
        let m: f64 = rng.random_range(40.0..100.0);
        let lo = (m * rng.random_range(0.5..0.9)).round();
        let hi = (m * rng.random_range(1.1..1.6)).round();
        [m, 0.25 * m, lo, hi]
    };
    let c = Costs {
        wait: rng.random_range(1..4),
        room_fixed: rng.random_range(100..400),
        room_ot: rng.random_range(3..9),
        room_idle: rng.random_range(0..2),
        call_in: rng.random_range(100..400),
        anes_ot: rng.random_range(1..5),
        anes_idle: rng.random_range(0..2),
    };
    let horizon = [180.0, 240.0][rng.random_range(0..2)];
    let on_call = rng.random_bool(0.5);
    if n >= 3 && rng.random_bool(0.5) {
        let na = n / 2;
        let types: Vec<TypeSpec> = vec![("A", na, 1, dist(&mut rng)), ("B", n - na, 1, dist(&mut rng))];
        build(&types, &[(vec!["A", "B"], true), (vec!["A", "B"], !on_call)], horizon, &c)
    } else {
        let types: Vec<TypeSpec> = vec![("A", n, 2, dist(&mut rng))];
        build(&types, &[(vec!["A"], true), (vec!["A"], !on_call)], horizon, &c)
    }
}

/// Random feasible first stage: random compatible resources, random
/// global order, random start times.
pub fn random_first_stage(inst: &Instance, rng: &mut ChaCha8Rng) -> FirstStageSolution {
    let n = inst.n_surgeries();
    let anes: Vec<usize> = (0..n)
        .map(|i| {
            let ok: Vec<usize> = (0..inst.n_anes()).filter(|&a| inst.compat_anes[i][a]).collect();
            ok[rng.random_range(0..ok.len())]
        })
        .collect();
    let room: Vec<usize> = (0..n)
        .map(|i| {
            let ok: Vec<usize> = (0..inst.n_rooms()).filter(|&r| inst.compat_room[i][r]).collect();
            ok[rng.random_range(0..ok.len())]
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let s = (0..n).map(|_| rng.random_range(0.0..inst.horizon())).collect();
    FirstStageSolution::from_order(inst, &anes, &room, &order, s)
}

pub fn random_durations(inst: &Instance, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dm = &inst.durations;
    (0..inst.n_surgeries()).map(|i| rng.random_range(dm.lo[i]..=dm.hi[i])).collect()
}

pub fn random_scenarios(inst: &Instance, n: usize, seed: u64) -> ScenarioSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ScenarioSet::from_rows((0..n).map(|_| random_durations(inst, &mut rng)).collect())
}

/// Scenarios in which surgeries of one type share a duration, so that
/// same-type surgeries stay interchangeable.
pub fn exchangeable_scenarios(inst: &Instance, n: usize, seed: u64) -> ScenarioSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = (0..n)
        .map(|_| {
            let mut by_type: Vec<(String, f64)> = vec![];
            (0..inst.n_surgeries())
                .map(|i| {
                    let t = &inst.surgeries[i].surgery_type;
                    if let Some(x) = by_type.iter().find(|e| &e.0 == t) {
                        return x.1;
                    }
                    let d = rng.random_range(inst.durations.lo[i]..=inst.durations.hi[i]).round();
                    by_type.push((t.clone(), d));
                    d
                })
                .collect()
        })
        .collect();
    ScenarioSet::from_rows(rows)
}

/// Recourse cost by forward recursion: with everything priced
/// nonnegatively, starting each surgery as early as its predecessors
/// allow is optimal.
pub fn recourse_by_recursion(inst: &Instance, sol: &FirstStageSolution, d: &[f64]) -> f64 {
    let n = inst.n_surgeries();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&j| (0..n).filter(|&i| sol.u[i][j]).count());
    let mut q = vec![0.0; n];
    for &j in &order {
        q[j] = (0..n).filter(|&i| sol.u[i][j]).map(|i| q[i] + d[i]).fold(sol.s[j], f64::max);
    }
    let mut cost = 0.0;
    for i in 0..n {
        cost += inst.cw(i) * (q[i] - sol.s[i]);
    }
    for a in 0..inst.n_anes() {
        let an = &inst.anesthesiologists[a];
        let mine: Vec<usize> = (0..n).filter(|&i| sol.x[i][a]).collect();
        let ot = if an.is_regular {
            mine.iter().map(|&i| q[i] + d[i] - an.shift_end).fold(0.0, f64::max)
        } else {
            0.0
        };
        let load: f64 = mine.iter().map(|&i| d[i]).sum();
        let idle = ((an.shift_end - an.shift_start - load) * inst.h_reg(a) + ot).max(0.0);
        cost += inst.co_anes(a) * ot + inst.cg_anes(a) * idle;
    }
    for r in 0..inst.n_rooms() {
        let room = &inst.rooms[r];
        let mine: Vec<usize> = (0..n).filter(|&i| sol.z[i][r]).collect();
        let ot = mine.iter().map(|&i| q[i] + d[i] - room.horizon_end).fold(0.0, f64::max);
        let load: f64 = mine.iter().map(|&i| d[i]).sum();
        let open = if sol.v[r] { room.horizon_end } else { 0.0 };
        let idle = (open - load + ot).max(0.0);
        cost += inst.co_room(r) * ot + inst.cg_room(r) * idle;
    }
    cost
}

pub fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1.0)
}

pub fn vertices(inst: &Instance) -> Vec<Vec<f64>> {
    let dm = &inst.durations;
    let n = inst.n_surgeries();
    (0..1usize << n)
        .map(|mask| (0..n).map(|i| if mask >> i & 1 == 1 { dm.hi[i] } else { dm.lo[i] }).collect())
        .collect()
}

pub fn degenerate(mut inst: Instance) -> Instance {
    inst.durations.lo = inst.durations.mean.clone();
    inst.durations.hi = inst.durations.mean.clone();
    inst.durations.std = vec![0.0; inst.n_surgeries()];
    inst
}

/// Largest risk of Q over distributions on the box vertices with mean m:
/// maximise sum r_v Q_v with sum p = 1, sum p_v v = m, 0 <= r_v <= p_v / (1 - gamma),
/// sum r = 1 (gamma = 0 is the expectation).
pub fn vertex_distribution_value(inst: &Instance, sol: &FirstStageSolution, gamma: f64) -> f64 {
    let verts = vertices(inst);
    let qs: Vec<f64> = verts.iter().map(|v| evaluate_recourse(inst, sol, v).unwrap().cost).collect();
    let mut m = MilpModel::new();
    let p: Vec<_> = (0..verts.len()).map(|k| m.continuous(format!("p{k}"), 0.0, 1.0)).collect();
    let r: Vec<_> = (0..verts.len()).map(|k| m.continuous(format!("r{k}"), 0.0, f64::INFINITY)).collect();
    m.add_row("mass", p.iter().map(|&v| (v, 1.0)).collect(), RowSense::Eq, 1.0);
    m.add_row("tail", r.iter().map(|&v| (v, 1.0)).collect(), RowSense::Eq, 1.0);
    for i in 0..inst.n_surgeries() {
        let terms = p.iter().zip(&verts).map(|(&v, d)| (v, d[i])).collect();
        m.add_row(format!("mean{i}"), terms, RowSense::Eq, inst.durations.mean[i]);
    }
    for k in 0..verts.len() {
        m.add_row(format!("cap{k}"), vec![(r[k], 1.0 - gamma), (p[k], -1.0)], RowSense::Le, 0.0);
        m.add_obj(r[k], -qs[k]);
    }
    let res = solve(&m, &SolveParams::exact()).unwrap();
    assert_eq!(res.status, SolveStatus::OptimalWithinGap);
    -res.objective
}
