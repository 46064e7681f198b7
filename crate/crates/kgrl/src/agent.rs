//! One type over the four actor flavors, and full-actor checkpoints.
//!
//! A checkpoint directory holds `actor.json` (an [`ActorCheckpoint`]),
//! `actor.kgrlpb` with every actor parameter, and `packs/` with one knowledge
//! pack per knowledge entry (carrying its trained key) plus the inner-policy
//! pack `<env>_inner`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use kgrl_core::actor::{
    ablation_mask, ContinuousActor, DiscreteActor, GridActorSpec, GridBaselineActor, GridKgrlActor, PointActorSpec,
    PointBaselineActor, PointKgrlActor, SampleMode,
};
use kgrl_core::algo::{evaluate_grid, evaluate_point, EvalSummary};
use kgrl_core::approx::{Graph, ParameterStore, TensorBuf};
use kgrl_core::grid::{GridAction, GridObservation, GridState};
use kgrl_core::knowledge::{KnowledgeEntry, KnowledgeMapping, KnowledgeSet};
use kgrl_core::math;
use kgrl_core::point::PointState;
use kgrl_core::rng::seeded;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ActorKind, EnvSpec};
use crate::{blob, io_err, pack, usage, Result};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "actor.json";
const PARAMS_FILE: &str = "actor.kgrlpb";

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)]
pub enum Agent {
    GridKgrl(GridKgrlActor),
    GridBaseline(GridBaselineActor),
    PointKgrl(PointKgrlActor),
    PointBaseline(PointBaselineActor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActorSpec {
    Grid(GridActorSpec),
    Point(PointActorSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorCheckpoint {
    pub format_version: u32,
    pub kind: ActorKind,
    /// Environment the actor was trained on.
    pub env: EnvSpec,
    pub spec: ActorSpec,
    /// Knowledge pack manifests, relative to the checkpoint directory, in
    /// knowledge-set order.
    pub knowledge: Vec<PathBuf>,
    pub active: Vec<usize>,
    pub params: String,
}

impl Agent {
    pub fn build(kind: ActorKind, spec: &ActorSpec, knowledge: KnowledgeSet, seed: u64) -> Result<Self> {
        let rng = &mut seeded(seed);
        Ok(match (kind, spec) {
            (ActorKind::Kgrl, ActorSpec::Grid(s)) => Agent::GridKgrl(GridKgrlActor::new(s.clone(), knowledge, rng)?),
            (ActorKind::Baseline, ActorSpec::Grid(s)) => Agent::GridBaseline(GridBaselineActor::new(s.clone(), rng)?),
            (ActorKind::Kgrl, ActorSpec::Point(s)) => Agent::PointKgrl(PointKgrlActor::new(s.clone(), knowledge, rng)?),
            (ActorKind::Baseline, ActorSpec::Point(s)) => {
                Agent::PointBaseline(PointBaselineActor::new(s.clone(), rng)?)
            }
        })
    }

    pub fn kind(&self) -> ActorKind {
        match self {
            Agent::GridKgrl(_) | Agent::PointKgrl(_) => ActorKind::Kgrl,
            Agent::GridBaseline(_) | Agent::PointBaseline(_) => ActorKind::Baseline,
        }
    }

    pub fn spec(&self) -> ActorSpec {
        match self {
            Agent::GridKgrl(a) => ActorSpec::Grid(a.spec().clone()),
            Agent::GridBaseline(a) => ActorSpec::Grid(a.spec().clone()),
            Agent::PointKgrl(a) => ActorSpec::Point(a.spec().clone()),
            Agent::PointBaseline(a) => ActorSpec::Point(a.spec().clone()),
        }
    }

    pub fn store(&self) -> &ParameterStore {
        match self {
            Agent::GridKgrl(a) => DiscreteActor::store(a),
            Agent::GridBaseline(a) => DiscreteActor::store(a),
            Agent::PointKgrl(a) => ContinuousActor::store(a),
            Agent::PointBaseline(a) => ContinuousActor::store(a),
        }
    }

    fn store_mut(&mut self) -> &mut ParameterStore {
        match self {
            Agent::GridKgrl(a) => DiscreteActor::store_mut(a),
            Agent::GridBaseline(a) => DiscreteActor::store_mut(a),
            Agent::PointKgrl(a) => ContinuousActor::store_mut(a),
            Agent::PointBaseline(a) => ContinuousActor::store_mut(a),
        }
    }

    pub fn knowledge(&self) -> Option<&KnowledgeSet> {
        match self {
            Agent::GridKgrl(a) => Some(a.knowledge()),
            Agent::PointKgrl(a) => Some(a.knowledge()),
            _ => None,
        }
    }

    pub fn active(&self) -> Vec<usize> {
        match self {
            Agent::GridKgrl(a) => a.active().to_vec(),
            Agent::PointKgrl(a) => a.active().to_vec(),
            _ => vec![0],
        }
    }

    pub fn component_names(&self) -> Vec<String> {
        match self {
            Agent::GridKgrl(a) => DiscreteActor::component_names(a),
            Agent::GridBaseline(a) => DiscreteActor::component_names(a),
            Agent::PointKgrl(a) => ContinuousActor::component_names(a),
            Agent::PointBaseline(a) => ContinuousActor::component_names(a),
        }
    }

    /// Removes the named components (`inner` or knowledge names) from the mixture.
    pub fn ablate(&mut self, drop: &[String]) -> Result<()> {
        if drop.is_empty() {
            return Ok(());
        }
        let drop: Vec<&str> = drop.iter().map(String::as_str).collect();
        match self {
            Agent::GridKgrl(a) => {
                let active = ablation_mask(a.knowledge(), &drop)?;
                a.set_active(active)?;
            }
            Agent::PointKgrl(a) => {
                let active = ablation_mask(a.knowledge(), &drop)?;
                a.set_active(active)?;
            }
            _ => return Err(usage("baseline actors have nothing to drop")),
        }
        Ok(())
    }

    pub fn freeze_key_rows(&mut self, rows: &[usize]) {
        match self {
            Agent::GridKgrl(a) => a.freeze_key_rows(rows),
            Agent::PointKgrl(a) => a.freeze_key_rows(rows),
            _ => {}
        }
    }

    /// Gridworld actions are sampled, or argmax when `greedy`; continuous
    /// actions are the highest-weight component's squashed mean.
    pub fn evaluate(&self, env: &EnvSpec, episodes: usize, seed: u64, greedy: bool) -> Result<EvalSummary> {
        Ok(match (self, env) {
            (Agent::GridKgrl(a), EnvSpec::Grid(_)) => evaluate_grid(a, &env.grid()?, episodes, seed, greedy)?,
            (Agent::GridBaseline(a), EnvSpec::Grid(_)) => evaluate_grid(a, &env.grid()?, episodes, seed, greedy)?,
            (Agent::PointKgrl(a), EnvSpec::Point(c)) => {
                evaluate_point(a, c, episodes, seed, SampleMode::Deterministic)?
            }
            (Agent::PointBaseline(a), EnvSpec::Point(c)) => {
                evaluate_point(a, c, episodes, seed, SampleMode::Deterministic)?
            }
            _ => return Err(usage(format!("this actor cannot act in `{}`", env.name()))),
        })
    }

    /// Mean inner key `k_in` over the states of `episodes` greedy episodes;
    /// zeros for actors without keys.
    pub fn mean_inner_key(&self, env: &EnvSpec, episodes: usize, seed: u64) -> Result<Vec<f64>> {
        let keys = match self {
            Agent::GridKgrl(a) => {
                let obs = grid_states(a, env, episodes, seed)?;
                a.keys_and_queries(&GridObservation::encode_batch(&obs))?.0
            }
            Agent::PointKgrl(a) => {
                let obs = point_states(a, env, episodes, seed)?;
                a.keys_and_queries(&TensorBuf::stack_rows(obs.iter().map(|o| o.0.as_slice())))?
                    .0
            }
            Agent::GridBaseline(a) => return Ok(vec![0.0; a.spec().d_k]),
            Agent::PointBaseline(a) => return Ok(vec![0.0; a.spec().d_k]),
        };
        let n = keys.rows() as f64;
        Ok((0..keys.cols())
            .map(|c| (0..keys.rows()).map(|r| keys.get(r, c)).sum::<f64>() / n)
            .collect())
    }

    /// The inner policy as a reusable knowledge entry.
    pub fn inner_entry(&self, name: &str) -> Result<KnowledgeEntry> {
        let policy = match self {
            Agent::GridKgrl(a) => a.snapshot_inner()?,
            Agent::GridBaseline(a) => a.snapshot_inner()?,
            Agent::PointKgrl(a) => a.snapshot_inner()?,
            Agent::PointBaseline(a) => a.snapshot_inner()?,
        };
        Ok(KnowledgeEntry {
            name: name.to_string(),
            mapping: KnowledgeMapping::Learned(Box::new(policy)),
            key: None,
        })
    }

    fn key_row(&self, i: usize) -> Vec<f64> {
        match self {
            Agent::GridKgrl(a) => a.key_row(i),
            Agent::PointKgrl(a) => a.key_row(i),
            _ => Vec::new(),
        }
    }

    /// Writes the checkpoint and knowledge packs into `dir`; returns the
    /// pack manifest paths, inner pack last.
    pub fn save(
        &self,
        dir: &Path,
        env: &EnvSpec,
        inner_key: &[f64],
        metadata: &BTreeMap<String, String>,
    ) -> Result<Vec<PathBuf>> {
        let packs_dir = dir.join("packs");
        let mut packs = Vec::new();
        let mut knowledge = Vec::new();
        if let Some(ks) = self.knowledge() {
            for (i, e) in ks.entries().iter().enumerate() {
                let p = pack::save_pack(&packs_dir, e, &self.key_row(i), metadata.clone())?;
                knowledge.push(p.strip_prefix(dir).unwrap_or(&p).to_path_buf());
                packs.push(p);
            }
        }
        let inner = self.inner_entry(&format!("{}_inner", env.name()))?;
        packs.push(pack::save_pack(&packs_dir, &inner, inner_key, metadata.clone())?);

        let params = dir.join(PARAMS_FILE);
        fs::write(&params, blob::encode(&self.store().export_f32())).map_err(io_err(&params))?;
        let ck = ActorCheckpoint {
            format_version: CHECKPOINT_VERSION,
            kind: self.kind(),
            env: env.clone(),
            spec: self.spec(),
            knowledge,
            active: self.active(),
            params: PARAMS_FILE.into(),
        };
        let path = dir.join(CHECKPOINT_FILE);
        fs::write(&path, serde_json::to_string_pretty(&ck)?).map_err(io_err(&path))?;
        Ok(packs)
    }

    /// Every file a checkpoint in `dir` reads.
    pub fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>> {
        let ck = read_checkpoint(dir)?;
        let mut files = vec![dir.join(CHECKPOINT_FILE), dir.join(&ck.params)];
        for k in &ck.knowledge {
            files.extend(pack::pack_files(&dir.join(k))?);
        }
        Ok(files)
    }

    pub fn load(dir: &Path) -> Result<(Self, EnvSpec)> {
        let ck = read_checkpoint(dir)?;
        let d_k = match &ck.spec {
            ActorSpec::Grid(s) => s.d_k,
            ActorSpec::Point(s) => s.d_k,
        };
        let entries = ck
            .knowledge
            .iter()
            .map(|k| pack::load_pack(&dir.join(k), d_k))
            .collect::<Result<Vec<_>>>()?;
        let ks = KnowledgeSet::new(ck.env.space(), d_k, entries)?;
        let mut agent = Agent::build(ck.kind, &ck.spec, ks, 0)?;
        let p = dir.join(&ck.params);
        let stored = ParameterStore::from_f32(&blob::decode(&fs::read(&p).map_err(io_err(&p))?)?)?;
        agent.store_mut().copy_values_from(&stored)?;
        if agent.kind() == ActorKind::Kgrl {
            match &mut agent {
                Agent::GridKgrl(a) => a.set_active(ck.active.clone())?,
                Agent::PointKgrl(a) => a.set_active(ck.active.clone())?,
                _ => {}
            }
        }
        Ok((agent, ck.env))
    }
}

fn read_checkpoint(dir: &Path) -> Result<ActorCheckpoint> {
    let path = dir.join(CHECKPOINT_FILE);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let ck: ActorCheckpoint = serde_json::from_str(&text)?;
    if ck.format_version != CHECKPOINT_VERSION {
        return Err(usage(format!(
            "{}: checkpoint version {}, this build reads {CHECKPOINT_VERSION}",
            path.display(),
            ck.format_version
        )));
    }
    Ok(ck)
}

fn grid_states<A: DiscreteActor>(actor: &A, env: &EnvSpec, episodes: usize, seed: u64) -> Result<Vec<GridObservation>> {
    let config = env.grid()?;
    let mut rng = seeded(seed);
    let mut out = Vec::new();
    for _ in 0..episodes {
        let mut s = GridState::reset(&config, rng.random())?;
        while !s.done {
            let obs = s.observe();
            let k = actor.knowledge_outputs(std::slice::from_ref(&obs))?;
            let mut g = Graph::new();
            let f = actor.forward(&mut g, &GridObservation::encode_batch(std::slice::from_ref(&obs)), &k)?;
            let a = math::argmax(g.value(f.pmf).row_slice(0));
            out.push(obs);
            s.step(GridAction::from_index(a)?)?;
        }
    }
    Ok(out)
}

fn point_states<A: ContinuousActor>(
    actor: &A,
    env: &EnvSpec,
    episodes: usize,
    seed: u64,
) -> Result<Vec<kgrl_core::point::PointObservation>> {
    let config = env.point()?;
    let mut rng = seeded(seed);
    let mut out = Vec::new();
    for _ in 0..episodes {
        let mut s = PointState::reset(&config, &mut rng)?;
        while !s.done {
            let obs = s.observe();
            let k = actor.knowledge_outputs(&[obs], config.variant)?;
            let mut g = Graph::new();
            let f = actor.forward(
                &mut g,
                &TensorBuf::row(obs.0.to_vec()),
                &k,
                SampleMode::Deterministic,
                &mut rng,
            )?;
            let a = g.value(f.action);
            out.push(obs);
            s.step(std::array::from_fn(|d| a.get(0, d)))?;
        }
    }
    Ok(out)
}
