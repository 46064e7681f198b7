//! Structural invariants of the attention mixture, packs and environments.

use std::collections::{BTreeMap, HashSet, VecDeque};

use kgrl::agent::{ActorSpec, Agent};
use kgrl::config::ActorKind;
use kgrl::pack;
use kgrl_core::actor::{
    ablation_mask, ContinuousActor, DiscreteActor, GridActorSpec, GridKgrlActor, PointActorSpec, PointKgrlActor,
};
use kgrl_core::approx::{Graph, TensorBuf};
use kgrl_core::grid::{Cell, GridAction, GridConfig, GridObservation, GridState};
use kgrl_core::knowledge::{ActionSpace, KnowledgeMapping, KnowledgeSet};
use kgrl_core::math;
use kgrl_core::point::{PointConfig, PointState, PointVariant};
use kgrl_core::rng::seeded;
use rand::Rng;

use crate::{grid_knowledge, grid_states, point_knowledge, point_matrix, point_states, Check};

fn pmf(actor: &GridKgrlActor, obs: &[GridObservation]) -> (TensorBuf, TensorBuf, TensorBuf) {
    let k = actor.knowledge_outputs(obs).unwrap();
    let mut g = Graph::new();
    let f = actor.forward(&mut g, &GridObservation::encode_batch(obs), &k).unwrap();
    let att = f.attention.unwrap();
    (
        g.value(f.pmf).clone(),
        g.value(att.weights).clone(),
        g.value(att.raw).clone(),
    )
}

fn actor(seed: u64) -> GridKgrlActor {
    GridKgrlActor::new(GridActorSpec::default(), grid_knowledge(8), &mut seeded(seed)).unwrap()
}

fn normalization() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let obs = grid_states(32, seed);
        let (p, w, _) = pmf(&actor(seed), &obs);
        for r in 0..obs.len() {
            worst = worst.max((w.row_slice(r).iter().sum::<f64>() - 1.0).abs());
            worst = worst.max((p.row_slice(r).iter().sum::<f64>() - 1.0).abs());
        }
    }
    Check::at_most("weight and pmf row sums, |sum - 1|", worst, 1e-9)
}

fn permutation() -> Check {
    let mut worst: f64 = 0.0;
    let a = actor(1);
    let obs = grid_states(32, 1);
    let base = pmf(&a, &obs).0;
    for order in [[2, 0, 1], [1, 2, 0], [2, 1, 0], [0, 2, 1]] {
        worst = worst.max(pmf(&a.permuted(&order).unwrap(), &obs).0.max_abs_diff(&base));
    }
    let p = PointKgrlActor::new(PointActorSpec::default(), point_knowledge(4), &mut seeded(2)).unwrap();
    let obs = point_states(PointVariant::PickPlace, 32, 2);
    let mut rng = seeded(3);
    let actions = TensorBuf::matrix(32, 4, (0..128).map(|_| rng.random_range(-0.95..0.95)).collect());
    let lp = |a: &PointKgrlActor| {
        let k = a.knowledge_outputs(&obs, PointVariant::PickPlace).unwrap();
        let mut g = Graph::new();
        let n = a.log_prob(&mut g, &point_matrix(&obs), &k, &actions).unwrap();
        g.value(n).clone()
    };
    worst = worst.max(lp(&p.permuted(&[1, 0]).unwrap()).max_abs_diff(&lp(&p)));
    Check::at_most("distribution drift under knowledge reordering", worst, 1e-12)
}

fn query_shift() -> Check {
    let mut worst: f64 = 0.0;
    let mut rng = seeded(4);
    let obs = grid_states(16, 4);
    let (_, w, raw) = pmf(&actor(4), &obs);
    for r in 0..obs.len() {
        for _ in 0..20 {
            let c = rng.random_range(-50.0..50.0);
            let shifted: Vec<f64> = raw.row_slice(r).iter().map(|x| x + c).collect();
            for (a, b) in math::softmax(&shifted).iter().zip(w.row_slice(r)) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    Check::at_most("weights after shifting every score by one constant", worst, 1e-12)
}

fn brute_force_mixture() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let a = actor(10 + seed);
        let obs = grid_states(32, seed);
        let (p, w, _) = pmf(&a, &obs);
        let k = a.knowledge_outputs(&obs).unwrap();
        let inner = KnowledgeMapping::Learned(Box::new(a.snapshot_inner().unwrap()))
            .eval_grid(&obs)
            .unwrap();
        for r in 0..obs.len() {
            for act in 0..GridAction::COUNT {
                let mut sum = w.get(r, 0) * inner.get(r, act);
                for j in 0..3 {
                    sum += w.get(r, j + 1) * k.get(r, j * GridAction::COUNT + act);
                }
                worst = worst.max((sum - p.get(r, act)).abs());
            }
        }
    }
    Check::at_most("pmf vs sum over components of weight x component pmf", worst, 1e-12)
}

fn one_hot() -> Check {
    let mut worst: f64 = 0.0;
    let obs = grid_states(16, 5);
    for j in 1..4 {
        let mut a = actor(5);
        a.set_active(vec![j]).unwrap();
        let (p, _, _) = pmf(&a, &obs);
        let k = a.knowledge_outputs(&obs).unwrap();
        let n = GridAction::COUNT;
        for r in 0..obs.len() {
            for (x, y) in p.row_slice(r).iter().zip(&k.row_slice(r)[(j - 1) * n..j * n]) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Check::at_most("single-component mixture vs that component", worst, 0.0)
}

fn ablation() -> Check {
    let mut worst: f64 = 0.0;
    let obs = grid_states(16, 6);
    let full_actor = actor(6);
    let (_, full, _) = pmf(&full_actor, &obs);
    for (name, idx) in [("pickup_key", 1usize), ("open_door", 2), ("reach_goal", 3)] {
        let mut a = full_actor.clone();
        a.set_active(ablation_mask(a.knowledge(), &[name]).unwrap()).unwrap();
        let (_, reduced, _) = pmf(&a, &obs);
        let kept: Vec<usize> = (0..4).filter(|&i| i != idx).collect();
        for r in 0..obs.len() {
            for (j, &i) in kept.iter().enumerate() {
                let expect = full.get(r, i) / (1.0 - full.get(r, idx));
                worst = worst.max((reduced.get(r, j) - expect).abs());
            }
        }
    }
    Check::at_most("dropped-component weights vs w_i / (1 - w_dropped)", worst, 1e-12)
}

fn pack_round_trip() -> Check {
    let dir = tempfile::TempDir::new().unwrap();
    let mut worst: f64 = 0.0;
    let ks = KnowledgeSet::empty(ActionSpace::Grid7, 8);
    let grid = Agent::build(ActorKind::Kgrl, &ActorSpec::Grid(GridActorSpec::default()), ks, 7).unwrap();
    let entry = grid.inner_entry("grid_inner").unwrap();
    let path = pack::save_pack(dir.path(), &entry, &[0.3; 8], BTreeMap::new()).unwrap();
    let loaded = pack::load_pack(&path, 8).unwrap();
    let obs = grid_states(64, 7);
    worst = worst.max(
        entry
            .mapping
            .eval_grid(&obs)
            .unwrap()
            .max_abs_diff(&loaded.mapping.eval_grid(&obs).unwrap()),
    );
    let ks = KnowledgeSet::empty(ActionSpace::Cont4, 4);
    let point = Agent::build(ActorKind::Kgrl, &ActorSpec::Point(PointActorSpec::default()), ks, 8).unwrap();
    let entry = point.inner_entry("pick_inner").unwrap();
    let path = pack::save_pack(dir.path(), &entry, &[0.3; 4], BTreeMap::new()).unwrap();
    let loaded = pack::load_pack(&path, 4).unwrap();
    let obs = point_states(PointVariant::PickPlace, 64, 8);
    worst = worst.max(
        entry
            .mapping
            .eval_point(&obs, PointVariant::PickPlace)
            .unwrap()
            .max_abs_diff(&loaded.mapping.eval_point(&obs, PointVariant::PickPlace).unwrap()),
    );
    if pack::load_pack(&path, 8).is_ok() {
        return Check::fail("pack with d_k 4 loaded into d_k 8");
    }
    Check::at_most("mapping output drift after save and load", worst, 1e-6)
}

fn env_determinism() -> Check {
    let mut rng = seeded(9);
    for seed in 0..50u64 {
        let actions: Vec<usize> = (0..80).map(|_| rng.random_range(0..GridAction::COUNT)).collect();
        let config = GridConfig::preset("doorkey-5x5").unwrap();
        let run = || {
            let mut s = GridState::reset(&config, seed).unwrap();
            let mut trace = Vec::new();
            for &a in &actions {
                if s.done {
                    break;
                }
                let out = s.step(GridAction::from_index(a).unwrap()).unwrap();
                trace.push((s.observe(), out.reward.to_bits(), out.event));
            }
            trace
        };
        if run() != run() {
            return Check::fail(format!("grid seed {seed} diverged"));
        }
        let config = PointConfig::new(PointVariant::PickPlace);
        let run = || {
            let mut r = seeded(seed);
            let mut s = PointState::reset(&config, &mut r).unwrap();
            let mut trace = Vec::new();
            for _ in 0..config.max_steps {
                let out = s.step([0; 4].map(|_| r.random_range(-1.0..1.0))).unwrap();
                trace.push(s.observe());
                if out.done {
                    break;
                }
            }
            trace
        };
        if run() != run() {
            return Check::fail(format!("point seed {seed} diverged"));
        }
    }
    Check::pass("50 grid and 50 point episodes replay bit-identically")
}

fn reachable(s: &GridState, door_open: bool) -> HashSet<(usize, usize)> {
    let free = |x: usize, y: usize| match s.cell(x, y) {
        Cell::Empty | Cell::Goal => true,
        Cell::Door { .. } => door_open,
        _ => false,
    };
    let mut seen = HashSet::from([s.agent]);
    let mut queue = VecDeque::from([s.agent]);
    while let Some((x, y)) = queue.pop_front() {
        for (nx, ny) in [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)] {
            if free(nx, ny) && seen.insert((nx, ny)) {
                queue.push_back((nx, ny));
            }
        }
    }
    seen
}

fn solvability() -> Check {
    let config = GridConfig::preset("doorkey-5x5").unwrap();
    for seed in 0..500 {
        let s = GridState::reset(&config, seed).unwrap();
        let find = |pred: &dyn Fn(Cell) -> bool| s.cells().find(|&(_, c)| pred(c)).map(|(p, _)| p);
        let (Some(key), Some(door), Some(goal)) = (
            find(&|c| matches!(c, Cell::Key { .. })),
            find(&|c| matches!(c, Cell::Door { .. })),
            find(&|c| c == Cell::Goal),
        ) else {
            return Check::fail(format!("seed {seed} is missing a key, door or goal"));
        };
        let adjacent = |set: &HashSet<(usize, usize)>, (x, y): (usize, usize)| {
            [(x + 1, y), (x - 1, y), (x, y + 1), (x, y - 1)]
                .iter()
                .any(|n| set.contains(n))
        };
        let mut lifted = s.clone();
        lifted.set_cell(key.0, key.1, Cell::Empty);
        if !adjacent(&reachable(&s, false), key)
            || !adjacent(&reachable(&lifted, false), door)
            || !reachable(&lifted, true).contains(&goal)
        {
            return Check::fail(format!("seed {seed} is unsolvable:\n{}", s.render()));
        }
    }
    Check::pass("500 doorkey-5x5 layouts solvable by breadth-first search")
}

pub fn run() -> Vec<(&'static str, Check)> {
    vec![
        ("normalization", normalization()),
        ("permutation", permutation()),
        ("query shift", query_shift()),
        ("mixture vs brute force", brute_force_mixture()),
        ("one-hot reduction", one_hot()),
        ("ablation renormalization", ablation()),
        ("pack round trip", pack_round_trip()),
        ("env determinism", env_determinism()),
        ("doorkey solvability", solvability()),
    ]
}
