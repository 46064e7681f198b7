//! Trainers. PPO drives any [`DiscreteActor`](crate::actor::DiscreteActor)
//! and SAC any [`ContinuousActor`](crate::actor::ContinuousActor), so the
//! baseline and knowledge-grounded actors train through identical code.

mod eval;
mod gae;
mod ppo;
mod replay;
mod rollout;
mod sac;

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::actor::{full_weights, AttentionNodes};
use crate::approx::Graph;
use crate::math;

pub use eval::{evaluate_grid, evaluate_point, grid_trace, EvalSummary, TraceStep};
pub use gae::{gae, normalize};
pub use ppo::{ppo_update, PpoConfig, PpoIteration, PpoStats, PpoTrainer};
pub use replay::{her_relabel, ReplayBuffer, Transition};
pub use rollout::{collect_grid_rollout, EpisodeStats, GridEnvPool, GridRollout};
pub use sac::{
    actor_step, critic_step, sac_update, soft_targets, Critics, SacConfig, SacLearner, SacStats, SacTrainer,
};

/// Attention for one step: raw dot products, normalized weights (zero for
/// dropped components) and the component that acted or dominated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub raw: Vec<f64>,
    pub weights: Vec<f64>,
    pub chosen: usize,
}

impl TraceRecord {
    /// The trace of an actor without attention: one component with weight 1.
    pub fn single() -> Self {
        Self {
            raw: vec![0.0],
            weights: vec![1.0],
            chosen: 0,
        }
    }
}

/// Per-row trace records; `chosen` defaults to the highest-weight component.
pub(crate) fn trace_rows(
    g: &Graph,
    attention: Option<&AttentionNodes>,
    rows: usize,
    chosen: Option<&[usize]>,
) -> Vec<TraceRecord> {
    let Some(att) = attention else {
        return vec![TraceRecord::single(); rows];
    };
    let raw = g.value(att.raw);
    let n = raw.cols();
    let weights = full_weights(g.value(att.weights), &att.active, n);
    weights
        .into_iter()
        .enumerate()
        .map(|(r, w)| TraceRecord {
            raw: raw.row_slice(r).to_vec(),
            chosen: chosen.map_or_else(|| math::argmax(&w), |c| c[r]),
            weights: w,
        })
        .collect()
}

/// Mean normalized weight and dominant-component share per component.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub mean_weights: Vec<f64>,
    pub dominant_share: Vec<f64>,
}

impl TraceSummary {
    pub fn of(traces: &[TraceRecord]) -> Self {
        let Some(first) = traces.first() else {
            return Self::default();
        };
        let n = first.weights.len();
        let mut mean_weights = vec![0.0; n];
        let mut dominant_share = vec![0.0; n];
        for t in traces {
            for (m, w) in mean_weights.iter_mut().zip(&t.weights) {
                *m += w;
            }
            dominant_share[t.chosen] += 1.0;
        }
        let k = traces.len() as f64;
        mean_weights.iter_mut().for_each(|m| *m /= k);
        dominant_share.iter_mut().for_each(|m| *m /= k);
        Self {
            mean_weights,
            dominant_share,
        }
    }
}
