//! Training, evaluation, transfer, composition, tracing and sweeps.
//!
//! Every run writes into `<out_dir>/seed-<seed>/`: `run.json`, `curves.csv`,
//! `curves.svg`, `log.jsonl`, the actor checkpoint and `packs/`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kgrl_core::actor::{ContinuousActor, DiscreteActor, SampleMode, INNER};
use kgrl_core::algo::{evaluate_grid, evaluate_point, grid_trace, EpisodeStats, EvalSummary, PpoTrainer, SacTrainer};
use kgrl_core::grid::GridConfig;
use kgrl_core::knowledge::KnowledgeSet;
use kgrl_core::point::PointConfig;
use serde::{Deserialize, Serialize};

use crate::agent::{ActorSpec, Agent};
use crate::config::{ActorKind, EnvSpec, ExperimentConfig, KnowledgeSource, Metric};
use crate::plot::{line_chart, Series};
use crate::record::{self, curve_rows, git_describe, EvalPoint, JsonLines, RunRecord, WeightTrace};
use crate::{io_err, pack, usage, Error, Result};

/// Keeps trainer randomness apart from actor initialization for the same seed.
const TRAINER_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
/// Episodes whose visited states define a saved inner pack's key.
const KEY_EPISODES: usize = 10;

pub fn run_dir(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.out_dir.join(format!("seed-{seed}"))
}

/// Trains every configured seed in turn.
pub fn train(config: &ExperimentConfig, base: &Path) -> Result<Vec<RunRecord>> {
    config.validate()?;
    config.seeds.iter().map(|&s| train_seed(config, s, base)).collect()
}

fn actor_spec(config: &ExperimentConfig) -> ActorSpec {
    match config.env {
        EnvSpec::Grid(_) => ActorSpec::Grid(config.grid_actor.clone()),
        EnvSpec::Point(_) => ActorSpec::Point(config.point_actor.clone()),
    }
}

fn summarize(step: u64, episodes: &[EpisodeStats]) -> EvalPoint {
    let n = episodes.len();
    let returns: Vec<f64> = episodes.iter().map(|e| e.ret).collect();
    EvalPoint {
        step,
        episodes: n,
        mean_return: kgrl_core::math::mean(&returns),
        min_return: returns.iter().copied().fold(f64::INFINITY, f64::min),
        success_rate: episodes.iter().filter(|e| e.success).count() as f64 / n as f64,
    }
}

#[derive(Debug, Serialize)]
struct LogLine<'a, S: Serialize> {
    step: u64,
    episodes: usize,
    mean_return: Option<f64>,
    stats: Option<&'a S>,
    mean_weights: Option<&'a [f64]>,
}

/// Bookkeeping shared by the PPO and SAC loops.
struct Progress<'a> {
    config: &'a ExperimentConfig,
    train: Vec<EvalPoint>,
    evals: Vec<EvalPoint>,
    threshold_step: Option<u64>,
    next_eval: u64,
}

impl<'a> Progress<'a> {
    fn new(config: &'a ExperimentConfig) -> Self {
        Self {
            config,
            train: Vec::new(),
            evals: Vec::new(),
            threshold_step: None,
            next_eval: config.eval.every,
        }
    }

    fn train_row(&mut self, p: EvalPoint) {
        if let Some(t) = &self.config.threshold {
            let v = match t.metric {
                Metric::MeanReturn => p.mean_return,
                Metric::SuccessRate => p.success_rate,
            };
            if self.threshold_step.is_none() && v >= t.value {
                self.threshold_step = Some(p.step);
            }
        }
        self.train.push(p);
    }

    fn should_stop(&self) -> bool {
        matches!(&self.config.threshold, Some(t) if t.stop) && self.threshold_step.is_some()
    }

    fn eval_due(&mut self, step: u64) -> bool {
        if self.config.eval.every > 0 && step >= self.next_eval {
            while self.next_eval <= step {
                self.next_eval += self.config.eval.every;
            }
            return true;
        }
        false
    }

    fn eval_row(&mut self, step: u64, s: &EvalSummary) {
        self.evals.push(EvalPoint::new(step, s));
    }

    fn needs_final(&self, step: u64) -> bool {
        self.evals.last().is_none_or(|e| e.step != step)
    }
}

fn ppo_loop<'a, A: DiscreteActor>(
    actor: &mut A,
    config: &'a ExperimentConfig,
    grid: &GridConfig,
    seed: u64,
    log: &mut JsonLines,
) -> Result<(Progress<'a>, u64)> {
    let mut trainer = PpoTrainer::new(config.ppo.clone(), grid.clone(), seed ^ TRAINER_SALT)?;
    let mut prog = Progress::new(config);
    let eval = &config.eval;
    while trainer.env_steps() < config.total_steps {
        let it = trainer.iterate(actor)?;
        let step = it.env_steps;
        let mut mean_return = None;
        if !it.episodes.is_empty() {
            let p = summarize(step, &it.episodes);
            mean_return = Some(p.mean_return);
            prog.train_row(p);
        }
        log.write(&LogLine {
            step,
            episodes: it.episodes.len(),
            mean_return,
            stats: Some(&it.stats),
            mean_weights: Some(&it.trace.mean_weights),
        })?;
        if prog.should_stop() {
            break;
        }
        if prog.eval_due(step) {
            let s = evaluate_grid(actor, grid, eval.episodes, eval.seed, eval.greedy)?;
            prog.eval_row(step, &s);
        }
    }
    let step = trainer.env_steps();
    if prog.needs_final(step) {
        let s = evaluate_grid(actor, grid, eval.episodes, eval.seed, eval.greedy)?;
        prog.eval_row(step, &s);
    }
    Ok((prog, step))
}

fn sac_loop<'a, A: ContinuousActor>(
    actor: &mut A,
    config: &'a ExperimentConfig,
    point: &PointConfig,
    seed: u64,
    log: &mut JsonLines,
) -> Result<(Progress<'a>, u64)> {
    let mut trainer = SacTrainer::new(config.sac.clone(), *point, seed ^ TRAINER_SALT)?;
    let mut prog = Progress::new(config);
    let eval = &config.eval;
    let mut window = Vec::new();
    while trainer.env_steps() < config.total_steps {
        if let Some(e) = trainer.step(actor)? {
            window.push(e);
        }
        let step = trainer.env_steps();
        if step % config.log_every == 0 {
            let mut mean_return = None;
            if !window.is_empty() {
                let p = summarize(step, &window);
                mean_return = Some(p.mean_return);
                prog.train_row(p);
            }
            log.write(&LogLine {
                step,
                episodes: window.len(),
                mean_return,
                stats: trainer.last_stats(),
                mean_weights: None,
            })?;
            window.clear();
            if prog.should_stop() {
                break;
            }
        }
        if prog.eval_due(step) {
            let s = evaluate_point(actor, point, eval.episodes, eval.seed, SampleMode::Deterministic)?;
            prog.eval_row(step, &s);
        }
    }
    let step = trainer.env_steps();
    if prog.needs_final(step) {
        let s = evaluate_point(actor, point, eval.episodes, eval.seed, SampleMode::Deterministic)?;
        prog.eval_row(step, &s);
    }
    Ok((prog, step))
}

/// Builds the actor a config describes for `seed`, with pack keys frozen
/// when the config asks for it.
pub fn build_agent(config: &ExperimentConfig, seed: u64, base: &Path) -> Result<Agent> {
    let (ks, from_packs) = match config.actor {
        ActorKind::Kgrl => config.knowledge_set(base)?,
        ActorKind::Baseline => (KnowledgeSet::empty(config.env.space(), config.d_k()), Vec::new()),
    };
    let mut agent = Agent::build(config.actor, &actor_spec(config), ks, seed)?;
    if config.freeze_keys {
        agent.freeze_key_rows(&from_packs);
    }
    Ok(agent)
}

pub fn train_seed(config: &ExperimentConfig, seed: u64, base: &Path) -> Result<RunRecord> {
    let out = run_dir(config, seed);
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let mut agent = build_agent(config, seed, base)?;
    let mut log = JsonLines::create(&out.join("log.jsonl"))?;
    let (prog, steps) = match (&mut agent, &config.env) {
        (Agent::GridKgrl(a), EnvSpec::Grid(_)) => ppo_loop(a, config, &config.env.grid()?, seed, &mut log)?,
        (Agent::GridBaseline(a), EnvSpec::Grid(_)) => ppo_loop(a, config, &config.env.grid()?, seed, &mut log)?,
        (Agent::PointKgrl(a), EnvSpec::Point(p)) => sac_loop(a, config, p, seed, &mut log)?,
        (Agent::PointBaseline(a), EnvSpec::Point(p)) => sac_loop(a, config, p, seed, &mut log)?,
        _ => return Err(usage("actor and environment disagree on the action space")),
    };
    let git = git_describe();
    let mut metadata = BTreeMap::new();
    metadata.insert("source_env".to_string(), config.env.name());
    metadata.insert("seed".to_string(), seed.to_string());
    metadata.insert("env_steps".to_string(), steps.to_string());
    metadata.insert("git_describe".to_string(), git.clone());
    let key = agent.mean_inner_key(&config.env, KEY_EPISODES, config.eval.seed)?;
    let packs = agent.save(&out, &config.env, &key, &metadata)?;
    let record = RunRecord {
        config: config.clone(),
        seed,
        git_describe: git,
        env_steps: steps,
        train: prog.train,
        evals: prog.evals,
        threshold_step: prog.threshold_step,
        checkpoint: out.clone(),
        packs,
    };
    record.write(&out.join("run.json"))?;
    record::write_curves(&out.join("curves.csv"), &curve_rows(&record))?;
    let series = |name: &str, pts: &[EvalPoint]| Series {
        name: name.into(),
        points: pts.iter().map(|p| (p.step as f64, p.mean_return)).collect(),
    };
    let svg = line_chart(
        &format!("{} / {:?} / seed {seed}", config.env.name(), config.actor),
        "env steps",
        "mean return",
        &[series("train", &record.train), series("eval", &record.evals)],
    );
    let p = out.join("curves.svg");
    fs::write(&p, svg).map_err(io_err(&p))?;
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub source: PathBuf,
    pub env: String,
    pub dropped: Vec<String>,
    pub episodes: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub success_rate: f64,
    pub digest: String,
}

/// Loads a run checkpoint directory, or a single `.pack.json` wrapped as a
/// knowledge-only actor for `env`.
pub fn load_source(source: &Path, env: Option<&EnvSpec>) -> Result<(Agent, EnvSpec, Vec<PathBuf>)> {
    if source.is_dir() {
        let files = Agent::checkpoint_files(source)?;
        let (agent, trained_on) = Agent::load(source)?;
        return Ok((agent, env.cloned().unwrap_or(trained_on), files));
    }
    let env = env.ok_or_else(|| usage("evaluating a bare pack needs --env"))?.clone();
    let manifest = pack::read_manifest(source)?;
    let spec = match env {
        EnvSpec::Grid(_) => ActorSpec::Grid(kgrl_core::actor::GridActorSpec {
            d_k: manifest.d_k,
            ..Default::default()
        }),
        EnvSpec::Point(_) => ActorSpec::Point(kgrl_core::actor::PointActorSpec {
            d_k: manifest.d_k,
            ..Default::default()
        }),
    };
    let entry = pack::load_pack(source, manifest.d_k)?;
    let ks = KnowledgeSet::new(env.space(), manifest.d_k, vec![entry])?;
    let mut agent = Agent::build(ActorKind::Kgrl, &spec, ks, 0)?;
    agent.ablate(&[INNER.to_string()])?;
    Ok((agent, env, pack::pack_files(source)?))
}

/// Evaluates with `drop` removed from the mixture. Fails if any source file
/// changes while it runs.
pub fn evaluate(
    source: &Path,
    env: Option<&EnvSpec>,
    episodes: usize,
    drop: &[String],
    seed: u64,
    greedy: bool,
) -> Result<EvalReport> {
    let (mut agent, env, files) = load_source(source, env)?;
    let before = pack::digest(&files)?;
    agent.ablate(drop)?;
    let s = agent.evaluate(&env, episodes, seed, greedy)?;
    let after = pack::digest(&files)?;
    if before != after {
        return Err(Error::PackModified(source.display().to_string()));
    }
    Ok(EvalReport {
        source: source.to_path_buf(),
        env: env.name(),
        dropped: drop.to_vec(),
        episodes: s.episodes,
        mean_return: s.mean_return,
        min_return: s.min_return,
        success_rate: s.success_rate,
        digest: after,
    })
}

/// Zero-shot evaluation of a trained actor in another environment of the same
/// action space. Continuous observations already zero the object slots when
/// the target task has no object, which is the adapter the transfer needs.
pub fn transfer(source: &Path, target: &EnvSpec, episodes: usize, seed: u64, greedy: bool) -> Result<EvalReport> {
    let (_, trained_on) = Agent::load(source)?;
    if trained_on.space() != target.space() {
        return Err(usage(format!(
            "cannot transfer from `{}` to `{}`: action spaces differ",
            trained_on.name(),
            target.name()
        )));
    }
    evaluate(source, Some(target), episodes, &[], seed, greedy)
}

/// Parses a knowledge list item from the command line: paths ending in
/// `.pack.json` are packs, anything else a scripted rule id.
pub fn knowledge_item(s: &str) -> KnowledgeSource {
    if s.ends_with(pack::MANIFEST_SUFFIX) {
        KnowledgeSource::Pack {
            pack: PathBuf::from(s),
            name: None,
        }
    } else {
        KnowledgeSource::Scripted(s.to_string())
    }
}

/// Trains a KGRL actor on `knowledge`, in the given order, in place of the
/// config's knowledge list.
pub fn compose(config: &ExperimentConfig, knowledge: Vec<KnowledgeSource>, base: &Path) -> Result<Vec<RunRecord>> {
    let mut c = config.clone();
    c.actor = ActorKind::Kgrl;
    c.knowledge = knowledge;
    train(&c, base)
}

/// One greedy gridworld episode with per-step weights; writes `trace.csv`
/// and `trace.svg` into `out`.
pub fn trace(source: &Path, env: Option<&EnvSpec>, seed: u64, out: &Path) -> Result<WeightTrace> {
    let (agent, env, _) = load_source(source, env)?;
    let grid = env.grid()?;
    let (steps, _) = match &agent {
        Agent::GridKgrl(a) => grid_trace(a, &grid, seed, true)?,
        Agent::GridBaseline(a) => grid_trace(a, &grid, seed, true)?,
        _ => return Err(usage("traces are recorded for gridworld actors")),
    };
    let t = WeightTrace {
        components: agent.component_names(),
        steps,
    };
    fs::create_dir_all(out).map_err(io_err(out))?;
    record::write_trace(&out.join("trace.csv"), &t.rows())?;
    let series: Vec<Series> = t
        .components
        .iter()
        .enumerate()
        .map(|(i, name)| Series {
            name: name.clone(),
            points: t.steps.iter().map(|s| (s.step as f64, s.trace.raw[i])).collect(),
        })
        .collect();
    let svg = line_chart(&format!("attention on {}", env.name()), "step", "raw weight", &series);
    let p = out.join("trace.svg");
    fs::write(&p, svg).map_err(io_err(&p))?;
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scale: f64,
    pub episodes: usize,
    pub success_rate: f64,
    pub mean_return: f64,
}

/// Success across goal-range scales; writes `sweep.csv` and `sweep.svg` into `out`.
pub fn sweep(source: &Path, scales: &[f64], episodes: usize, seed: u64, out: &Path) -> Result<Vec<SweepRow>> {
    let (agent, env, files) = load_source(source, None)?;
    let before = pack::digest(&files)?;
    let base = env.point()?;
    let mut rows = Vec::new();
    for &scale in scales {
        let target = EnvSpec::Point(PointConfig {
            goal_range_scale: scale,
            ..base
        });
        let s = agent.evaluate(&target, episodes, seed, true)?;
        rows.push(SweepRow {
            scale,
            episodes,
            success_rate: s.success_rate,
            mean_return: s.mean_return,
        });
    }
    if pack::digest(&files)? != before {
        return Err(Error::PackModified(source.display().to_string()));
    }
    fs::create_dir_all(out).map_err(io_err(out))?;
    let p = out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&p)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(&p))?;
    let svg = line_chart(
        "success across goal ranges",
        "goal range scale",
        "success rate",
        &[Series {
            name: source.display().to_string(),
            points: rows.iter().map(|r| (r.scale, r.success_rate)).collect(),
        }],
    );
    let p = out.join("sweep.svg");
    fs::write(&p, svg).map_err(io_err(&p))?;
    Ok(rows)
}
