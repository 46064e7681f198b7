//! The knowledge-grounded actor and a plain baseline actor.
//!
//! A query vector `u` attends over the inner key `k_in` (both state
//! dependent) and one learned key per knowledge mapping. Softmax of the dot
//! products weights a mixture of the inner policy and the knowledge
//! policies. Discrete actions sample the mixture exactly; continuous actions
//! pick a component with straight-through Gumbel-softmax and report the
//! mixture density of the action taken.

mod grid;
pub mod nets;
mod point;

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{Graph, NodeId, ParameterStore, TensorBuf};
use crate::grid::GridObservation;
use crate::knowledge::KnowledgeSet;
use crate::math;
use crate::point::{PointObservation, PointVariant};
use crate::rng::RunRng;
use crate::{Error, Result};

pub use grid::{GridActorSpec, GridBaselineActor, GridKgrlActor};
pub use point::{
    squashed_log_density, squashed_mixture, PointActorSpec, PointBaselineActor, PointKgrlActor, SquashedMixture,
    ACTION_LIMIT,
};

/// Name of the inner-policy component in traces and ablation lists.
pub const INNER: &str = "inner";

/// Graph nodes describing the attention of one forward pass.
#[derive(Debug, Clone)]
pub struct AttentionNodes {
    /// `batch x (n + 1)` dot products, inner first, in knowledge-set order.
    pub raw: NodeId,
    /// `batch x active.len()` softmax over the surviving components.
    pub weights: NodeId,
    /// Component indices (0 = inner) that take part in the mixture.
    pub active: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct DiscreteForward {
    /// `batch x 7` mixture probabilities.
    pub pmf: NodeId,
    /// `batch x 1` state value.
    pub value: NodeId,
    pub attention: Option<AttentionNodes>,
}

/// What a PPO-style trainer needs from a discrete actor.
pub trait DiscreteActor {
    fn store(&self) -> &ParameterStore;
    fn store_mut(&mut self) -> &mut ParameterStore;
    /// `inner` followed by the knowledge names.
    fn component_names(&self) -> Vec<String>;
    /// Knowledge outputs for a batch (`batch x n*7`); empty for actors without knowledge.
    fn knowledge_outputs(&self, obs: &[GridObservation]) -> Result<TensorBuf>;
    /// Records the policy and value for encoded observations on `g`.
    fn forward(&self, g: &mut Graph, obs: &TensorBuf, knowledge: &TensorBuf) -> Result<DiscreteForward>;
    /// Hook run after gradients are accumulated, before the optimizer step.
    fn mask_gradients(&mut self) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Stochastic,
    /// Highest-weight component, its location squashed.
    Deterministic,
}

#[derive(Debug, Clone)]
pub struct ContinuousForward {
    /// `batch x 4` squashed action.
    pub action: NodeId,
    /// `batch x 1` mixture log-density of `action`.
    pub log_prob: NodeId,
    pub attention: Option<AttentionNodes>,
    /// Selected component per row (0 = inner).
    pub chosen: Vec<usize>,
}

/// What a SAC-style trainer needs from a continuous actor.
pub trait ContinuousActor {
    fn store(&self) -> &ParameterStore;
    fn store_mut(&mut self) -> &mut ParameterStore;
    fn component_names(&self) -> Vec<String>;
    /// Knowledge outputs for a batch (`batch x n*8`); empty for actors without knowledge.
    fn knowledge_outputs(&self, obs: &[PointObservation], variant: PointVariant) -> Result<TensorBuf>;
    fn forward(
        &self,
        g: &mut Graph,
        obs: &TensorBuf,
        knowledge: &TensorBuf,
        mode: SampleMode,
        rng: &mut RunRng,
    ) -> Result<ContinuousForward>;
    /// `batch x 1` mixture log-density of given actions in `[-1, 1]^4`.
    fn log_prob(&self, g: &mut Graph, obs: &TensorBuf, knowledge: &TensorBuf, actions: &TensorBuf) -> Result<NodeId>;
    fn mask_gradients(&mut self) {}
}

/// Raw and normalized attention for one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Dot-product attention of `u` over `[k_in, keys...]`, softmax-normalized.
pub fn attention_weights(u: &[f64], k_in: &[f64], keys: &[Vec<f64>]) -> Result<AttentionWeights> {
    let dot = |k: &[f64]| -> Result<f64> {
        if k.len() != u.len() {
            return Err(Error::shape(alloc::format!(
                "key of dimension {} against query of dimension {}",
                k.len(),
                u.len()
            )));
        }
        Ok(u.iter().zip(k).map(|(a, b)| a * b).sum())
    };
    let mut raw = vec![dot(k_in)?];
    for k in keys {
        raw.push(dot(k)?);
    }
    let normalized = math::softmax(&raw);
    Ok(AttentionWeights { raw, normalized })
}

/// Softmax over `active` components only; dropped components get weight 0.
pub fn renormalize(raw: &[f64], active: &[usize]) -> Vec<f64> {
    let sub: Vec<f64> = active.iter().map(|&i| raw[i]).collect();
    let w = math::softmax(&sub);
    let mut out = vec![0.0; raw.len()];
    for (&i, wi) in active.iter().zip(w) {
        out[i] = wi;
    }
    out
}

/// `sum_j w_j * p_j` over component distributions.
pub fn mixture_pmf(weights: &[f64], components: &[&[f64]]) -> Result<Vec<f64>> {
    if weights.len() != components.len() || components.is_empty() {
        return Err(Error::shape("one weight per mixture component required"));
    }
    let k = components[0].len();
    let mut out = vec![0.0; k];
    for (w, c) in weights.iter().zip(components) {
        if c.len() != k {
            return Err(Error::shape("mixture components have different supports"));
        }
        for (o, p) in out.iter_mut().zip(c.iter()) {
            *o += w * p;
        }
    }
    Ok(out)
}

/// Exact categorical draw; returns the action and its log-probability.
pub fn sample_discrete<R: Rng + ?Sized>(pmf: &[f64], rng: &mut R) -> (usize, f64) {
    let total: f64 = pmf.iter().sum();
    let mut x = rng.random::<f64>() * total;
    let mut pick = pmf.len() - 1;
    for (i, &p) in pmf.iter().enumerate() {
        if x < p {
            pick = i;
            break;
        }
        x -= p;
    }
    // never land on a zero-mass tail through rounding
    while pmf[pick] <= 0.0 && pick > 0 {
        pick -= 1;
    }
    (pick, math::ln(pmf[pick] / total))
}

/// Exact entropy of a pmf.
pub fn entropy(pmf: &[f64]) -> f64 {
    -pmf.iter().filter(|&&p| p > 0.0).map(|&p| p * math::ln(p)).sum::<f64>()
}

/// Active-component mask after dropping `names` (`inner` or knowledge names).
pub fn ablation_mask(knowledge: &KnowledgeSet, drop: &[&str]) -> Result<Vec<usize>> {
    for d in drop {
        if *d != INNER && knowledge.index_of(d).is_none() {
            return Err(Error::usage(alloc::format!("cannot drop unknown component `{d}`")));
        }
    }
    let mut active = Vec::new();
    if !drop.contains(&INNER) {
        active.push(0);
    }
    for (i, name) in knowledge.names().into_iter().enumerate() {
        if !drop.contains(&name) {
            active.push(i + 1);
        }
    }
    if active.is_empty() {
        return Err(Error::usage("ablation would drop every mixture component"));
    }
    Ok(active)
}

pub(crate) fn check_active(active: &[usize], components: usize) -> Result<()> {
    if active.is_empty() {
        return Err(Error::usage("at least one mixture component must stay active"));
    }
    if active.windows(2).any(|w| w[0] >= w[1]) || active.iter().any(|&i| i >= components) {
        return Err(Error::usage(alloc::format!(
            "active components {active:?} must be increasing indices below {components}"
        )));
    }
    Ok(())
}

pub(crate) fn component_names(knowledge: &KnowledgeSet) -> Vec<String> {
    core::iter::once(INNER.to_string())
        .chain(knowledge.names().into_iter().map(ToString::to_string))
        .collect()
}

/// Row `i` of the result is row `order[i]` of `table`.
pub(crate) fn permute_rows(table: &mut TensorBuf, order: &[usize]) {
    let d = table.cols();
    let old = table.data().to_vec();
    let dst = table.data_mut();
    for (new_row, &old_row) in order.iter().enumerate() {
        dst[new_row * d..(new_row + 1) * d].copy_from_slice(&old[old_row * d..(old_row + 1) * d]);
    }
}

/// Active component indices after knowledge entry `order[i]` moves to slot `i`.
pub(crate) fn permute_active(active: &[usize], order: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = active
        .iter()
        .map(|&i| {
            if i == 0 {
                0
            } else {
                1 + order.iter().position(|&o| o == i - 1).unwrap_or(0)
            }
        })
        .collect();
    out.sort_unstable();
    out
}

/// `batch x (n + 1)` raw attention: `[u . k_in, u . k_1, ..., u . k_n]`.
pub(crate) fn raw_attention(g: &mut Graph, u: NodeId, k_in: NodeId, keys: Option<NodeId>) -> Result<NodeId> {
    let prod = g.mul(u, k_in)?;
    let own = g.sum_rows(prod);
    match keys {
        Some(k) => {
            let ext = g.matmul(u, k, true)?;
            g.concat_cols(&[own, ext])
        }
        None => Ok(own),
    }
}

/// Picks the `active` columns of `raw`.
pub(crate) fn select_columns(g: &mut Graph, raw: NodeId, active: &[usize]) -> Result<NodeId> {
    if active.len() == g.value(raw).cols() {
        return Ok(raw);
    }
    let parts = active
        .iter()
        .map(|&i| g.slice_cols(raw, i, 1))
        .collect::<Result<Vec<_>>>()?;
    g.concat_cols(&parts)
}

/// Constant columns for the active knowledge components (index `j >= 1` maps
/// to block `j - 1` of `width` columns).
pub(crate) fn knowledge_blocks(knowledge: &TensorBuf, active: &[usize], width: usize) -> TensorBuf {
    let rows = knowledge.rows();
    let blocks: Vec<usize> = active.iter().filter(|&&i| i > 0).map(|&i| i - 1).collect();
    let mut out = Vec::with_capacity(rows * blocks.len() * width);
    for r in 0..rows {
        let row = knowledge.row_slice(r);
        for &b in &blocks {
            out.extend_from_slice(&row[b * width..(b + 1) * width]);
        }
    }
    TensorBuf::matrix(rows, blocks.len() * width, out)
}

/// Normalized weights padded back to `n + 1` columns, zero for dropped components.
pub fn full_weights(weights: &TensorBuf, active: &[usize], components: usize) -> Vec<Vec<f64>> {
    (0..weights.rows())
        .map(|r| {
            let mut w = vec![0.0; components];
            for (j, &i) in active.iter().enumerate() {
                w[i] = weights.get(r, j);
            }
            w
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn attention_arithmetic() {
        let w = attention_weights(
            &[1.0, 0.0, 0.0, 0.0],
            &[1.0, 0.0, 0.0, 0.0],
            &[vec![0.0, 1.0, 0.0, 0.0]],
        )
        .unwrap();
        assert_eq!(w.raw, [1.0, 0.0]);
        assert!((w.normalized[0] - 0.7310585786300049).abs() < 1e-12);
        assert!((w.normalized[1] - 0.2689414213699951).abs() < 1e-12);
        let z = attention_weights(&[0.0; 3], &[1.0, 2.0, 3.0], &[vec![4.0; 3], vec![-1.0; 3]]).unwrap();
        for x in z.normalized {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(attention_weights(&[0.0; 3], &[0.0; 2], &[]).is_err());
    }

    #[test]
    fn discrete_mixture_examples() {
        let p_in = [0.8, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0];
        let p_g = [0.2, 0.8, 0.0, 0.0, 0.0, 0.0, 0.0];
        let m = mixture_pmf(&[0.5, 0.5], &[&p_in, &p_g]).unwrap();
        assert_eq!(m, [0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(mixture_pmf(&[0.0, 1.0], &[&p_in, &p_g]).unwrap(), p_g);
    }

    #[test]
    fn one_hot_pmf_samples_its_action() {
        let mut rng = seeded(0);
        let mut p = [0.0; 7];
        p[4] = 1.0;
        for _ in 0..100 {
            assert_eq!(sample_discrete(&p, &mut rng), (4, 0.0));
        }
    }

    #[test]
    fn categorical_samples_pass_chi_square() {
        let pmf = [0.3, 0.25, 0.2, 0.1, 0.08, 0.05, 0.02];
        let mut rng = seeded(1);
        let n = 100_000;
        let mut counts = [0usize; 7];
        for _ in 0..n {
            let (a, lp) = sample_discrete(&pmf, &mut rng);
            assert!((lp - pmf[a].ln()).abs() < 1e-12);
            counts[a] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(pmf)
            .map(|(&c, p)| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        // 0.999 quantile of chi-square with 6 degrees of freedom
        assert!(chi2 < 22.458, "chi2 = {chi2}");
    }

    #[test]
    fn dropping_a_component_rescales_survivors() {
        let raw = [0.3, -1.2, 2.0, 0.7];
        let full = math::softmax(&raw);
        let kept = renormalize(&raw, &[0, 1, 3]);
        for i in [0, 1, 3] {
            assert!((kept[i] - full[i] / (1.0 - full[2])).abs() < 1e-12);
        }
        assert_eq!(kept[2], 0.0);
    }

    #[test]
    fn shifting_all_scores_leaves_weights_unchanged() {
        let raw = [0.3, -1.2, 2.0, 0.7];
        let base = math::softmax(&raw);
        for c in [-50.0, -1.0, 3.5, 100.0] {
            let shifted: Vec<f64> = raw.iter().map(|r| r + c).collect();
            for (a, b) in math::softmax(&shifted).iter().zip(&base) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
