use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{trace_rows, TraceRecord};
use crate::actor::{sample_discrete, ContinuousActor, DiscreteActor, SampleMode};
use crate::approx::{Graph, TensorBuf};
use crate::grid::{GridAction, GridConfig, GridEvent, GridObservation, GridState};
use crate::math;
use crate::point::{PointConfig, PointState};
use crate::rng::seeded;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub mean_return: f64,
    pub min_return: f64,
    pub success_rate: f64,
    pub returns: Vec<f64>,
}

impl EvalSummary {
    fn of(returns: Vec<f64>, successes: usize) -> Self {
        let n = returns.len();
        Self {
            episodes: n,
            mean_return: math::mean(&returns),
            min_return: returns.iter().copied().fold(f64::INFINITY, f64::min),
            success_rate: successes as f64 / n as f64,
            returns,
        }
    }
}

/// Runs `episodes` gridworld episodes side by side, layouts seeded from
/// `seed`. `greedy` takes the most probable action instead of sampling.
pub fn evaluate_grid<A: DiscreteActor + ?Sized>(
    actor: &A,
    config: &GridConfig,
    episodes: usize,
    seed: u64,
    greedy: bool,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::usage("evaluation needs at least one episode"));
    }
    let mut rng = seeded(seed);
    let mut envs = (0..episodes)
        .map(|_| GridState::reset(config, rng.random()))
        .collect::<Result<Vec<_>>>()?;
    let mut returns = alloc::vec![0.0; episodes];
    let mut success = alloc::vec![false; episodes];
    loop {
        let live: Vec<usize> = (0..episodes).filter(|&i| !envs[i].done).collect();
        if live.is_empty() {
            break;
        }
        let obs: Vec<GridObservation> = live.iter().map(|&i| envs[i].observe()).collect();
        let k = actor.knowledge_outputs(&obs)?;
        let mut g = Graph::new();
        let f = actor.forward(&mut g, &GridObservation::encode_batch(&obs), &k)?;
        let pmf = g.value(f.pmf);
        for (r, &i) in live.iter().enumerate() {
            let a = if greedy {
                math::argmax(pmf.row_slice(r))
            } else {
                sample_discrete(pmf.row_slice(r), &mut rng).0
            };
            let out = envs[i].step(GridAction::from_index(a)?)?;
            returns[i] += out.reward;
            success[i] |= out.success;
        }
    }
    let successes = success.iter().filter(|&&s| s).count();
    Ok(EvalSummary::of(returns, successes))
}

/// Continuous-control evaluation, one episode at a time.
pub fn evaluate_point<A: ContinuousActor + ?Sized>(
    actor: &A,
    config: &PointConfig,
    episodes: usize,
    seed: u64,
    mode: SampleMode,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::usage("evaluation needs at least one episode"));
    }
    let mut rng = seeded(seed);
    let mut returns = Vec::with_capacity(episodes);
    let mut successes = 0;
    for _ in 0..episodes {
        let mut s = PointState::reset(config, &mut rng)?;
        let mut ret = 0.0;
        loop {
            let obs = s.observe();
            let k = actor.knowledge_outputs(&[obs], config.variant)?;
            let mut g = Graph::new();
            let f = actor.forward(&mut g, &TensorBuf::row(obs.0.to_vec()), &k, mode, &mut rng)?;
            let a = g.value(f.action);
            let out = s.step(core::array::from_fn(|d| a.get(0, d)))?;
            ret += out.reward;
            if out.done {
                successes += out.success as usize;
                break;
            }
        }
        returns.push(ret);
    }
    Ok(EvalSummary::of(returns, successes))
}

/// One step of a traced gridworld episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub action: usize,
    pub reward: f64,
    pub event: Option<GridEvent>,
    pub trace: TraceRecord,
}

/// A single episode with the attention of every step.
pub fn grid_trace<A: DiscreteActor + ?Sized>(
    actor: &A,
    config: &GridConfig,
    seed: u64,
    greedy: bool,
) -> Result<(Vec<TraceStep>, GridState)> {
    let mut rng = seeded(seed);
    let mut env = GridState::reset(config, rng.random())?;
    let start = env.clone();
    let mut steps = Vec::new();
    while !env.done {
        let obs = [env.observe()];
        let k = actor.knowledge_outputs(&obs)?;
        let mut g = Graph::new();
        let f = actor.forward(&mut g, &GridObservation::encode_batch(&obs), &k)?;
        let pmf = g.value(f.pmf).row_slice(0).to_vec();
        let a = if greedy {
            math::argmax(&pmf)
        } else {
            sample_discrete(&pmf, &mut rng).0
        };
        let trace = trace_rows(&g, f.attention.as_ref(), 1, None).remove(0);
        let out = env.step(GridAction::from_index(a)?)?;
        steps.push(TraceStep {
            step: steps.len(),
            action: a,
            reward: out.reward,
            event: out.event,
            trace,
        });
    }
    Ok((steps, start))
}
