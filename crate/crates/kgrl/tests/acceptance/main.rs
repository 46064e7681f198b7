//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! `KGRL_ACCEPTANCE=C1,C3` limits the run to the listed criteria.
//! `KGRL_ACCEPTANCE_REUSE=1` keeps finished training runs from an earlier
//! invocation when their recorded config matches; by default every run
//! trains from scratch.

mod experiments;
mod numerics;
mod properties;

use std::process::ExitCode;
use std::time::Instant;

use kgrl_core::approx::TensorBuf;
use kgrl_core::grid::{GridAction, GridConfig, GridObservation, GridState};
use kgrl_core::knowledge::{ActionSpace, KnowledgeEntry, KnowledgeSet, ScriptedRule};
use kgrl_core::point::{PointConfig, PointObservation, PointState, PointVariant};
use kgrl_core::rng::seeded;
use rand::Rng;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Debug, Clone)]
pub struct Check {
    pub ok: bool,
    pub detail: String,
}

impl Check {
    pub fn pass(detail: impl Into<String>) -> Self {
        Self {
            ok: true,
            detail: detail.into(),
        }
    }

    pub fn fail(detail: impl Into<String>) -> Self {
        Self {
            ok: false,
            detail: detail.into(),
        }
    }

    pub fn at_most(label: &str, value: f64, limit: f64) -> Self {
        Self {
            ok: value <= limit,
            detail: format!("{label}: {value:.3e} (limit {limit:.0e})"),
        }
    }
}

pub fn grid_knowledge(d_k: usize) -> KnowledgeSet {
    let entries = vec![
        KnowledgeEntry::scripted("pickup_key", ScriptedRule::PickupKey),
        KnowledgeEntry::scripted("open_door", ScriptedRule::OpenDoor),
        KnowledgeEntry::scripted("reach_goal", ScriptedRule::ReachGoal),
    ];
    KnowledgeSet::new(ActionSpace::Grid7, d_k, entries).unwrap()
}

pub fn point_knowledge(d_k: usize) -> KnowledgeSet {
    let entries = vec![
        KnowledgeEntry::scripted("to_object", ScriptedRule::ToObject),
        KnowledgeEntry::scripted("to_goal", ScriptedRule::ToGoal),
    ];
    KnowledgeSet::new(ActionSpace::Cont4, d_k, entries).unwrap()
}

/// Doorkey states after a few random moves.
pub fn grid_states(n: usize, seed: u64) -> Vec<GridObservation> {
    let config = GridConfig::preset("doorkey-5x5").unwrap();
    let mut rng = seeded(seed);
    (0..n)
        .map(|i| {
            let mut s = GridState::reset(&config, seed * 1000 + i as u64).unwrap();
            for _ in 0..rng.random_range(0..12) {
                if s.done {
                    break;
                }
                s.step(GridAction::from_index(rng.random_range(0..GridAction::COUNT)).unwrap())
                    .unwrap();
            }
            s.observe()
        })
        .collect()
}

pub fn point_states(variant: PointVariant, n: usize, seed: u64) -> Vec<PointObservation> {
    let config = PointConfig::new(variant);
    let mut rng = seeded(seed);
    (0..n)
        .map(|_| {
            let mut s = PointState::reset(&config, &mut rng).unwrap();
            for _ in 0..rng.random_range(0..10) {
                if s.step([0; 4].map(|_| rng.random_range(-1.0..1.0))).unwrap().done {
                    break;
                }
            }
            s.observe()
        })
        .collect()
}

pub fn point_matrix(obs: &[PointObservation]) -> TensorBuf {
    TensorBuf::stack_rows(obs.iter().map(|o| o.0.as_slice()))
}

fn report(id: &str, title: &str, started: Instant, checks: &[(&str, Check)]) -> bool {
    let ok = checks.iter().all(|(_, c)| c.ok);
    println!(
        "[{}] {id} {title} ({:.0}s)",
        if ok { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    for (name, c) in checks {
        println!("       {} {name}: {}", if c.ok { "ok  " } else { "FAIL" }, c.detail);
    }
    ok
}

fn main() -> ExitCode {
    let selected: Option<Vec<String>> = std::env::var("KGRL_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').map(|x| x.trim().to_uppercase()).collect());
    let wanted = |id: &str| selected.as_ref().is_none_or(|s| s.iter().any(|x| x == id));
    let reuse = std::env::var("KGRL_ACCEPTANCE_REUSE").is_ok_and(|v| v == "1");
    let mut lab = experiments::Lab::new(reuse);
    let mut all_ok = true;

    type Criterion = fn(&mut experiments::Lab) -> Vec<(&'static str, Check)>;
    let criteria: [(&str, &str, Criterion); 8] = [
        ("C1", "property suite", |_| properties::run()),
        ("C2", "numerical suite", |_| numerics::run()),
        (
            "C3",
            "sample efficiency, DoorKey-5x5 and Unlock",
            experiments::sample_efficiency,
        ),
        ("C4", "zero-shot Empty to Empty-Random", experiments::zero_shot),
        ("C5", "knowledge ablation, reach and pick_place", experiments::ablation),
        ("C6", "reuse of an Unlock pack on DoorKey-5x5", experiments::reuse),
        ("C7", "redundant knowledge on Empty-5x5", experiments::redundancy),
        ("C8", "attention trace on DoorKey-5x5", experiments::trace),
    ];
    for (id, title, run) in criteria {
        if !wanted(id) {
            continue;
        }
        let started = Instant::now();
        let checks = run(&mut lab);
        all_ok &= report(id, title, started, &checks);
    }
    if wanted("C9") {
        println!("[N/A ] C9 full-length curves (Empty-16x16, DoorKey-8x8 3M steps, pick_place 1M steps, 100k/200k transfer checkpoints)");
        println!("       not run at desk scale; C3 and C5 assert the capped-budget orderings instead");
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
