use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use kgrl::agent::Agent;
use kgrl::config::{ActorKind, EnvSpec, EvalSchedule, ExperimentConfig, KnowledgeSource};
use kgrl::experiment;
use kgrl::pack;
use kgrl::record::{self, RunRecord, RUN_RECORD_SCHEMA};
use kgrl::Error;
use kgrl_core::actor::{GridActorSpec, PointActorSpec};
use kgrl_core::algo::{PpoConfig, SacConfig};
use kgrl_core::grid::{GridAction, GridConfig, GridState};
use kgrl_core::knowledge::{ActionSpace, KnowledgeSet};
use kgrl_core::math;
use kgrl_core::point::{PointConfig, PointState, PointVariant};
use kgrl_core::rng::seeded;
use rand::Rng;
use tempfile::TempDir;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn scripted(ids: &[&str]) -> Vec<KnowledgeSource> {
    ids.iter().map(|s| KnowledgeSource::Scripted(s.to_string())).collect()
}

fn tiny_grid(env: &str, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        EnvSpec::parse(env).unwrap(),
        ActorKind::Kgrl,
        scripted(&["pickup_key", "open_door", "reach_goal"]),
        512,
    );
    c.ppo = PpoConfig {
        n_envs: 4,
        n_steps: 32,
        minibatch: 64,
        epochs: 2,
        ..PpoConfig::default()
    };
    c.eval = EvalSchedule {
        every: 256,
        episodes: 4,
        seed: 99,
        greedy: true,
    };
    c.out_dir = out.to_path_buf();
    c
}

fn tiny_point(out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(
        EnvSpec::parse("pick_place").unwrap(),
        ActorKind::Kgrl,
        scripted(&["to_object", "to_goal"]),
        240,
    );
    c.point_actor = PointActorSpec {
        hidden: vec![16],
        key_hidden: vec![8],
        ..PointActorSpec::default()
    };
    c.sac = SacConfig {
        batch: 16,
        warmup_steps: 100,
        critic_hidden: vec![16],
        buffer_capacity: 1000,
        ..SacConfig::default()
    };
    c.eval = EvalSchedule {
        every: 120,
        episodes: 2,
        seed: 5,
        ..EvalSchedule::default()
    };
    c.log_every = 60;
    c.out_dir = out.to_path_buf();
    c
}

fn grid_obs(n: usize) -> Vec<kgrl_core::grid::GridObservation> {
    let config = GridConfig::preset("doorkey-5x5").unwrap();
    let mut rng = seeded(1);
    (0..n)
        .map(|i| {
            let mut s = GridState::reset(&config, i as u64).unwrap();
            for _ in 0..rng.random_range(0..10) {
                s.step(GridAction::from_index(rng.random_range(0..3)).unwrap()).unwrap();
            }
            s.observe()
        })
        .collect()
}

fn point_obs(n: usize) -> Vec<kgrl_core::point::PointObservation> {
    let config = PointConfig::new(PointVariant::PickPlace);
    let mut rng = seeded(2);
    (0..n)
        .map(|_| PointState::reset(&config, &mut rng).unwrap().observe())
        .collect()
}

#[test]
fn learned_packs_round_trip_within_float_precision() {
    let dir = TempDir::new().unwrap();
    let ks = KnowledgeSet::empty(ActionSpace::Grid7, 8);
    let agent = Agent::build(
        ActorKind::Kgrl,
        &kgrl::agent::ActorSpec::Grid(GridActorSpec::default()),
        ks,
        3,
    )
    .unwrap();
    let entry = agent.inner_entry("grid_inner").unwrap();
    let key: Vec<f64> = (0..8).map(|i| 0.1 * i as f64 - 0.35).collect();
    let mut meta = BTreeMap::new();
    meta.insert("source_env".to_string(), "doorkey-5x5".to_string());
    let path = pack::save_pack(dir.path(), &entry, &key, meta.clone()).unwrap();
    assert!(path.to_string_lossy().ends_with(".pack.json"));
    assert!(dir.path().join("grid_inner.kgrlpb").exists());

    let loaded = pack::load_pack(&path, 8).unwrap();
    assert_eq!(loaded.name, "grid_inner");
    let obs = grid_obs(32);
    let a = entry.mapping.eval_grid(&obs).unwrap();
    let b = loaded.mapping.eval_grid(&obs).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-6, "drift {}", a.max_abs_diff(&b));
    for (x, y) in key.iter().zip(loaded.key.as_ref().unwrap()) {
        assert!((x - y).abs() < 1e-6);
    }
    assert_eq!(pack::read_manifest(&path).unwrap().metadata, meta);

    match pack::load_pack(&path, 4) {
        Err(Error::Core(_)) => {}
        other => panic!("expected a key-width error, got {other:?}"),
    }
}

#[test]
fn continuous_packs_round_trip_within_float_precision() {
    let dir = TempDir::new().unwrap();
    let ks = KnowledgeSet::empty(ActionSpace::Cont4, 4);
    let agent = Agent::build(
        ActorKind::Kgrl,
        &kgrl::agent::ActorSpec::Point(PointActorSpec::default()),
        ks,
        4,
    )
    .unwrap();
    let entry = agent.inner_entry("pick_inner").unwrap();
    let path = pack::save_pack(dir.path(), &entry, &[0.5, -0.5, 0.25, 0.0], BTreeMap::new()).unwrap();
    let loaded = pack::load_pack(&path, 4).unwrap();
    let obs = point_obs(32);
    let a = entry.mapping.eval_point(&obs, PointVariant::PickPlace).unwrap();
    let b = loaded.mapping.eval_point(&obs, PointVariant::PickPlace).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-6);
}

#[test]
fn broken_packs_fail_with_a_path() {
    let dir = TempDir::new().unwrap();
    let p = dir.path().join("bad.pack.json");
    fs::write(
        &p,
        r#"{"format_version": 1, "name": "x", "kind": {"type": "scripted", "rule": "fly"}}"#,
    )
    .unwrap();
    match pack::read_manifest(&p) {
        Err(Error::Schema { path, message, .. }) => {
            assert!(path == "kind" && message.contains("fly"), "{path}: {message}")
        }
        other => panic!("{other:?}"),
    }
    let ks = KnowledgeSet::empty(ActionSpace::Grid7, 8);
    let agent = Agent::build(
        ActorKind::Kgrl,
        &kgrl::agent::ActorSpec::Grid(GridActorSpec::default()),
        ks,
        3,
    )
    .unwrap();
    let path = pack::save_pack(dir.path(), &agent.inner_entry("g").unwrap(), &[0.0; 8], BTreeMap::new()).unwrap();
    let blob = dir.path().join("g.kgrlpb");
    let bytes = fs::read(&blob).unwrap();
    fs::write(&blob, &bytes[..bytes.len() - 3]).unwrap();
    assert!(pack::load_pack(&path, 8).is_err());
}

fn strip_paths(mut r: RunRecord) -> RunRecord {
    r.checkpoint = Default::default();
    r.packs.clear();
    r.config.out_dir = Default::default();
    r
}

#[test]
fn training_is_reproducible_and_records_validate() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let ra = experiment::train(&tiny_grid("doorkey-5x5", a.path()), Path::new(".")).unwrap();
    let rb = experiment::train(&tiny_grid("doorkey-5x5", b.path()), Path::new(".")).unwrap();
    assert_eq!(strip_paths(ra[0].clone()), strip_paths(rb[0].clone()));
    let run = a.path().join("seed-0");
    assert_eq!(
        fs::read(run.join("actor.kgrlpb")).unwrap(),
        fs::read(b.path().join("seed-0/actor.kgrlpb")).unwrap()
    );

    let r = &ra[0];
    assert_eq!(r.env_steps, 512);
    assert_eq!(r.evals.iter().map(|e| e.step).collect::<Vec<_>>(), [256, 512]);
    assert_eq!(r.packs.len(), 4);
    for f in [
        "run.json",
        "curves.csv",
        "curves.svg",
        "log.jsonl",
        "actor.json",
        "actor.kgrlpb",
    ] {
        assert!(run.join(f).exists(), "{f}");
    }
    let schema: serde_json::Value = serde_json::from_str(RUN_RECORD_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("run.json")).unwrap()).unwrap();
    let errors: Vec<String> = validator.iter_errors(&doc).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{errors:?}");
    assert_eq!(RunRecord::read(&run.join("run.json")).unwrap(), *r);

    let mut broken = doc.clone();
    broken["evals"][0]["success_rate"] = serde_json::json!("high");
    assert!(!validator.is_valid(&broken));

    let curves = record::read_curves(&run.join("curves.csv")).unwrap();
    let header = fs::read_to_string(run.join("curves.csv")).unwrap();
    assert!(header.starts_with("seed,step,source,episodes,mean_return,min_return,success_rate\n"));
    assert_eq!(curves.iter().filter(|c| c.source == "eval").count(), 2);
    assert_eq!(fs::read_to_string(run.join("log.jsonl")).unwrap().lines().count(), 4);
}

#[test]
fn checkpoints_reload_and_evaluate_identically() {
    let dir = TempDir::new().unwrap();
    let c = tiny_grid("doorkey-5x5", dir.path());
    let r = experiment::train(&c, Path::new(".")).unwrap().remove(0);
    let (agent, env) = Agent::load(&r.checkpoint).unwrap();
    assert_eq!(env, c.env);
    let last = r.final_eval().unwrap();
    let again = agent
        .evaluate(&env, c.eval.episodes, c.eval.seed, c.eval.greedy)
        .unwrap();
    assert!((again.mean_return - last.mean_return).abs() < 1e-9);

    let report = experiment::evaluate(&r.checkpoint, None, 4, &["inner".to_string()], 1, false).unwrap();
    assert_eq!(report.dropped, ["inner"]);
    let repeat = experiment::evaluate(&r.checkpoint, None, 4, &["inner".to_string()], 1, false).unwrap();
    assert_eq!(report, repeat);

    // the digest covers every file the checkpoint reads
    let pack_path = &r.packs[0];
    let mut manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(pack_path).unwrap()).unwrap();
    manifest["metadata"]["note"] = serde_json::json!("edited");
    fs::write(pack_path, serde_json::to_string(&manifest).unwrap()).unwrap();
    let edited = experiment::evaluate(&r.checkpoint, None, 4, &["inner".to_string()], 1, false).unwrap();
    assert_ne!(edited.digest, report.digest);
    assert_eq!(edited.mean_return, report.mean_return);

    assert!(experiment::evaluate(&r.checkpoint, None, 4, &["nonexistent".to_string()], 1, false).is_err());
}

#[test]
fn traces_reproduce_softmax_weights() {
    let dir = TempDir::new().unwrap();
    let c = tiny_grid("doorkey-5x5", dir.path());
    let r = experiment::train(&c, Path::new(".")).unwrap().remove(0);
    let out = dir.path().join("trace");
    let t = experiment::trace(&r.checkpoint, None, 0, &out).unwrap();
    assert_eq!(t.components, ["inner", "pickup_key", "open_door", "reach_goal"]);
    let rows = record::read_trace(&out.join("trace.csv")).unwrap();
    assert!(fs::read_to_string(out.join("trace.csv"))
        .unwrap()
        .starts_with("step,component,raw,weight,chosen,action,reward,event\n"));
    assert_eq!(rows.len(), t.steps.len() * 4);
    for step in rows.chunks(4) {
        let raw: Vec<f64> = step.iter().map(|r| r.raw).collect();
        let w = math::softmax(&raw);
        for (row, expect) in step.iter().zip(&w) {
            assert!((row.weight - expect).abs() < 1e-9);
        }
        assert_eq!(step.iter().map(|r| r.chosen as usize).sum::<usize>(), 1);
        assert!(step.iter().all(|r| r.step == step[0].step));
    }
    assert!(out.join("trace.svg").exists());

    // traces also work with a component dropped: its weight row reads zero
    let (mut agent, _) = Agent::load(&r.checkpoint).unwrap();
    agent.ablate(&["open_door".to_string()]).unwrap();
    assert_eq!(agent.active(), [0, 1, 3]);
}

#[test]
fn composition_loads_packs_and_can_freeze_their_keys() {
    let dir = TempDir::new().unwrap();
    let first = experiment::train(&tiny_grid("unlock", &dir.path().join("unlock")), Path::new("."))
        .unwrap()
        .remove(0);
    let inner = first.packs.last().unwrap().clone();
    assert!(inner.to_string_lossy().ends_with("unlock_inner.pack.json"));
    let stored_key = pack::read_manifest(&inner).unwrap().key;

    let mut c = tiny_grid("doorkey-5x5", &dir.path().join("reuse"));
    c.freeze_keys = true;
    let knowledge = vec![
        experiment::knowledge_item(inner.to_str().unwrap()),
        experiment::knowledge_item("reach_goal"),
    ];
    let r = experiment::compose(&c, knowledge, Path::new(".")).unwrap().remove(0);
    let (agent, _) = Agent::load(&r.checkpoint).unwrap();
    assert_eq!(agent.component_names(), ["inner", "unlock_inner", "reach_goal"]);
    let reused = pack::read_manifest(&r.packs[0]).unwrap();
    assert_eq!(reused.key, stored_key);

    // a pack can be evaluated on its own as a knowledge-only actor
    let env = EnvSpec::parse("unlock").unwrap();
    let alone = experiment::evaluate(&inner, Some(&env), 3, &[], 2, false).unwrap();
    assert_eq!(alone.episodes, 3);
    assert!(experiment::evaluate(&inner, None, 3, &[], 2, false).is_err());
}

#[test]
fn continuous_runs_checkpoint_sweep_and_transfer() {
    let dir = TempDir::new().unwrap();
    let r = experiment::train(&tiny_point(dir.path()), Path::new("."))
        .unwrap()
        .remove(0);
    assert_eq!(r.env_steps, 240);
    assert_eq!(r.train.iter().map(|p| p.step).filter(|s| s % 60 != 0).count(), 0);
    let (agent, env) = Agent::load(&r.checkpoint).unwrap();
    let last = r.final_eval().unwrap();
    assert!((agent.evaluate(&env, 2, 5, false).unwrap().mean_return - last.mean_return).abs() < 1e-9);

    let rows = experiment::sweep(&r.checkpoint, &[0.1, 1.0], 2, 3, &dir.path().join("sweep")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(dir.path().join("sweep/sweep.csv").exists());

    let t = experiment::transfer(&r.checkpoint, &EnvSpec::parse("reach").unwrap(), 2, 3, false).unwrap();
    assert_eq!(t.env, "reach");
    assert!(experiment::transfer(&r.checkpoint, &EnvSpec::parse("empty-5x5").unwrap(), 2, 3, false).is_err());
}

#[test]
fn thresholds_stop_training_early() {
    let dir = TempDir::new().unwrap();
    let mut c = tiny_grid("empty-5x5", dir.path());
    c.knowledge = scripted(&["reach_goal"]);
    c.total_steps = 4096;
    c.threshold = Some(kgrl::config::Threshold::mean_return(-1.0, true));
    let r = experiment::train(&c, Path::new(".")).unwrap().remove(0);
    assert_eq!(r.threshold_step, Some(r.train[0].step));
    assert_eq!(r.env_steps, r.train[0].step);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            ExperimentConfig::load(&p).unwrap();
            n += 1;
        }
    }
    assert!(n >= 4);
}
