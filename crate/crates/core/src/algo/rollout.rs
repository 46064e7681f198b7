use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{trace_rows, TraceRecord};
use crate::actor::{sample_discrete, DiscreteActor};
use crate::approx::{Graph, TensorBuf};
use crate::grid::{GridAction, GridConfig, GridEvent, GridObservation, GridState};
use crate::rng::{seeded, RunRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeStats {
    #[serde(rename = "return")]
    pub ret: f64,
    pub length: usize,
    pub success: bool,
}

/// Independent gridworld instances stepped in lockstep. Finished episodes
/// restart at once with a fresh layout seed.
#[derive(Debug, Clone)]
pub struct GridEnvPool {
    config: GridConfig,
    envs: Vec<GridState>,
    returns: Vec<f64>,
    lengths: Vec<usize>,
    rng: RunRng,
}

impl GridEnvPool {
    pub fn new(config: GridConfig, n: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n == 0 {
            return Err(Error::config("environment pool needs at least one environment"));
        }
        let mut rng = seeded(seed);
        let envs = (0..n)
            .map(|_| GridState::reset(&config, rng.random()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            envs,
            returns: alloc::vec![0.0; n],
            lengths: alloc::vec![0; n],
            rng,
        })
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn envs(&self) -> &[GridState] {
        &self.envs
    }

    pub fn observations(&self) -> Vec<GridObservation> {
        self.envs.iter().map(GridState::observe).collect()
    }

    /// Steps environment `i`; returns the finished episode if it ended.
    fn step(&mut self, i: usize, action: GridAction) -> Result<(f64, bool, Option<GridEvent>, Option<EpisodeStats>)> {
        let out = self.envs[i].step(action)?;
        self.returns[i] += out.reward;
        self.lengths[i] += 1;
        let mut finished = None;
        if out.done {
            finished = Some(EpisodeStats {
                ret: self.returns[i],
                length: self.lengths[i],
                success: out.success,
            });
            self.envs[i] = GridState::reset(&self.config, self.rng.random())?;
            self.returns[i] = 0.0;
            self.lengths[i] = 0;
        }
        Ok((out.reward, out.done, out.event, finished))
    }
}

/// One on-policy batch, stored step-major: entry `t * n_envs + e` is step `t`
/// of environment `e`.
#[derive(Debug, Clone)]
pub struct GridRollout {
    pub n_envs: usize,
    pub n_steps: usize,
    pub obs: Vec<GridObservation>,
    /// Knowledge outputs recorded with each observation (`len x n*7`).
    pub knowledge: TensorBuf,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// The episode ended with this step.
    pub dones: Vec<bool>,
    pub events: Vec<Option<GridEvent>>,
    pub traces: Vec<TraceRecord>,
    /// Value estimates of the observations after the last step.
    pub last_values: Vec<f64>,
    pub episodes: Vec<EpisodeStats>,
}

impl GridRollout {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Runs `actor` for `n_steps` in every environment of `pool`, sampling
/// actions from the exact mixture.
pub fn collect_grid_rollout<A: DiscreteActor + ?Sized>(
    pool: &mut GridEnvPool,
    actor: &A,
    n_steps: usize,
    rng: &mut RunRng,
) -> Result<GridRollout> {
    let n = pool.len();
    let total = n * n_steps;
    let mut out = GridRollout {
        n_envs: n,
        n_steps,
        obs: Vec::with_capacity(total),
        knowledge: TensorBuf::zeros(&[0, 0]),
        actions: Vec::with_capacity(total),
        log_probs: Vec::with_capacity(total),
        rewards: Vec::with_capacity(total),
        values: Vec::with_capacity(total),
        dones: Vec::with_capacity(total),
        events: Vec::with_capacity(total),
        traces: Vec::with_capacity(total),
        last_values: Vec::new(),
        episodes: Vec::new(),
    };
    let mut knowledge = Vec::new();
    let mut k_cols = 0;
    for t in 0..n_steps {
        let obs = pool.observations();
        let k = actor.knowledge_outputs(&obs)?;
        k_cols = k.cols();
        let mut g = Graph::new();
        let f = actor.forward(&mut g, &GridObservation::encode_batch(&obs), &k)?;
        let pmf = g.value(f.pmf);
        let values = g.value(f.value);
        let traces = trace_rows(&g, f.attention.as_ref(), n, None);
        for (e, trace) in traces.into_iter().enumerate() {
            let (a, lp) = sample_discrete(pmf.row_slice(e), rng);
            if !lp.is_finite() {
                return Err(Error::NonFinite {
                    name: "rollout log-probability".into(),
                    detail: format!("env {e}, step {t}, pmf {:?}", pmf.row_slice(e)),
                });
            }
            let (reward, done, event, finished) = pool
                .step(e, GridAction::from_index(a)?)
                .map_err(|err| Error::usage(format!("env {e} at rollout step {t}: {err}")))?;
            out.actions.push(a);
            out.log_probs.push(lp);
            out.rewards.push(reward);
            out.values.push(values.get(e, 0));
            out.dones.push(done);
            out.events.push(event);
            out.traces.push(trace);
            out.episodes.extend(finished);
        }
        knowledge.extend_from_slice(k.data());
        out.obs.extend(obs);
    }
    out.knowledge = TensorBuf::matrix(total, k_cols, knowledge);
    let obs = pool.observations();
    let k = actor.knowledge_outputs(&obs)?;
    let mut g = Graph::new();
    let f = actor.forward(&mut g, &GridObservation::encode_batch(&obs), &k)?;
    out.last_values = g.value(f.value).data().to_vec();
    Ok(out)
}
