use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nets::{InnerNetSpec, PointInnerNet};
use super::{
    check_active, component_names, permute_active, permute_rows, raw_attention, select_columns, AttentionNodes,
    ContinuousActor, ContinuousForward, SampleMode,
};
use crate::approx::{Activation, EmbeddingTable, Graph, Mlp, MlpSpec, NodeId, ParameterStore, TensorBuf};
use crate::knowledge::{ActionSpace, KnowledgeSet, LearnedPolicy};
use crate::math::{self, HALF_LN_2PI, LN_2};
use crate::point::{PointObservation, PointVariant, POINT_ACTION_DIM, POINT_OBS_DIM};
use crate::rng::{gumbel, standard_normal, RunRng};
use crate::{Error, Result};

const A: usize = POINT_ACTION_DIM;
/// Stored actions are clamped here before inverting tanh.
pub const ACTION_LIMIT: f64 = 1.0 - 1e-6;

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_key_hidden() -> Vec<usize> {
    vec![32]
}

fn default_d_k() -> usize {
    4
}

fn default_temperature() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointActorSpec {
    /// Hidden relu widths of the inner policy network.
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Hidden relu widths of the inner-key and query networks.
    #[serde(default = "default_key_hidden")]
    pub key_hidden: Vec<usize>,
    #[serde(default = "default_d_k")]
    pub d_k: usize,
    /// Gumbel-softmax temperature for component selection.
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl Default for PointActorSpec {
    fn default() -> Self {
        Self {
            hidden: default_hidden(),
            key_hidden: default_key_hidden(),
            d_k: default_d_k(),
            temperature: default_temperature(),
        }
    }
}

fn relu_mlp(input: usize, hidden: &[usize], output: usize) -> MlpSpec {
    let h: Vec<_> = hidden.iter().map(|&w| (w, Activation::Relu)).collect();
    MlpSpec::new(input, &h, output)
}

impl PointActorSpec {
    fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::config(alloc::format!(
                "Gumbel-softmax temperature must be positive, got {}",
                self.temperature
            )));
        }
        if self.d_k == 0 {
            return Err(Error::config("d_k must be at least 1"));
        }
        Ok(())
    }

    pub fn inner(&self) -> MlpSpec {
        relu_mlp(POINT_OBS_DIM, &self.hidden, 2 * A)
    }

    fn head(&self) -> MlpSpec {
        relu_mlp(POINT_OBS_DIM, &self.key_hidden, self.d_k)
    }
}

/// Nodes of a squashed Gaussian mixture sample.
#[derive(Debug, Clone)]
pub struct SquashedMixture {
    /// `batch x 4` pre-squash sample.
    pub pre: NodeId,
    /// `batch x 4` action in `[-1, 1]`.
    pub action: NodeId,
    /// `batch x 1` log-density of `action` under the whole mixture.
    pub log_prob: NodeId,
    /// Selected component per row, as a column of `loc`.
    pub chosen: Vec<usize>,
}

/// Samples from `sum_j w_j * tanh_# N(loc_j, exp(log_scale_j))`.
///
/// `logits` (`batch x m`) give the weights; `None` means a single component.
/// `loc` and `log_scale` hold the `m` components side by side (`batch x 4m`).
/// The component is drawn by straight-through Gumbel-softmax at
/// `temperature`, so the forward value uses exactly one component while
/// gradients reach the logits through the relaxed weights. Every component
/// shares the tanh squash, so the density is the Gaussian mixture density of
/// the pre-squash sample minus one log-Jacobian.
#[allow(clippy::too_many_arguments)]
pub fn squashed_mixture(
    g: &mut Graph,
    logits: Option<NodeId>,
    loc: NodeId,
    log_scale: NodeId,
    temperature: f64,
    mode: SampleMode,
    rng: &mut RunRng,
) -> Result<SquashedMixture> {
    if !(temperature > 0.0) {
        return Err(Error::config(alloc::format!(
            "Gumbel-softmax temperature must be positive, got {temperature}"
        )));
    }
    let rows = g.value(loc).rows();
    let m = g.value(loc).cols() / A;
    if g.value(loc).cols() != m * A || g.value(log_scale).cols() != m * A || m == 0 {
        return Err(Error::shape("component parameters must be 4 columns per component"));
    }
    if let Some(l) = logits {
        if g.value(l).cols() != m || g.value(l).rows() != rows {
            return Err(Error::shape(alloc::format!(
                "{} logits for {m} components",
                g.value(l).cols()
            )));
        }
    } else if m != 1 {
        return Err(Error::shape("several components need logits"));
    }

    // component selection
    let mut chosen = vec![0usize; rows];
    let select = match logits {
        None => None,
        Some(l) => {
            let lv = g.value(l).clone();
            let mut hard = vec![0.0; rows * m];
            match mode {
                SampleMode::Stochastic => {
                    let noise: Vec<f64> = (0..rows * m).map(|_| gumbel(rng)).collect();
                    for r in 0..rows {
                        let perturbed: Vec<f64> = (0..m).map(|j| lv.get(r, j) + noise[r * m + j]).collect();
                        chosen[r] = math::argmax(&perturbed);
                        hard[r * m + chosen[r]] = 1.0;
                    }
                    let gn = g.constant(TensorBuf::matrix(rows, m, noise));
                    let p = g.add(l, gn)?;
                    let p = g.scale(p, 1.0 / temperature);
                    let soft = g.softmax_rows(p);
                    Some(g.straight_through(soft, TensorBuf::matrix(rows, m, hard))?)
                }
                SampleMode::Deterministic => {
                    for r in 0..rows {
                        chosen[r] = math::argmax(lv.row_slice(r));
                        hard[r * m + chosen[r]] = 1.0;
                    }
                    Some(g.constant(TensorBuf::matrix(rows, m, hard)))
                }
            }
        }
    };

    // reparameterized pre-squash samples of every component, sharing the noise
    let eps: Vec<f64> = match mode {
        SampleMode::Stochastic => (0..rows * A).map(|_| standard_normal(rng)).collect(),
        SampleMode::Deterministic => vec![0.0; rows * A],
    };
    let tiled: Vec<f64> = (0..rows)
        .flat_map(|r| (0..m).flat_map(move |_| r * A..(r + 1) * A))
        .map(|i| eps[i])
        .collect();
    let en = g.constant(TensorBuf::matrix(rows, m * A, tiled));
    let std = g.exp(log_scale);
    let noise = g.mul(std, en)?;
    let samples = g.add(loc, noise)?;
    let pre = match select {
        Some(y) => g.mix_rows(y, samples, A)?,
        None => samples,
    };
    let action = g.tanh(pre);

    let log_prob = squashed_log_density(g, logits, loc, log_scale, pre)?;
    Ok(SquashedMixture {
        pre,
        action,
        log_prob,
        chosen,
    })
}

/// Log-density of `tanh(pre)` under the squashed mixture (`batch x 1`).
///
/// Shapes follow [`squashed_mixture`]; `pre` is `batch x 4`.
pub fn squashed_log_density(
    g: &mut Graph,
    logits: Option<NodeId>,
    loc: NodeId,
    log_scale: NodeId,
    pre: NodeId,
) -> Result<NodeId> {
    let m = g.value(loc).cols() / A;
    if m == 0 || g.value(pre).cols() != A {
        return Err(Error::shape("squashed mixture needs 4-column samples and components"));
    }
    let pre_tiled = if m == 1 { pre } else { g.concat_cols(&vec![pre; m])? };
    let diff = g.sub(pre_tiled, loc)?;
    let neg_ls = g.neg(log_scale);
    let inv_std = g.exp(neg_ls);
    let z = g.mul(diff, inv_std)?;
    let z2 = g.square(z);
    let half = g.scale(z2, -0.5);
    let t = g.sub(half, log_scale)?;
    let elem = g.add_scalar(t, -HALF_LN_2PI);
    let comp_lp = if m == 1 {
        g.sum_rows(elem)
    } else {
        let mut blocks = vec![0.0; m * A * m];
        for j in 0..m {
            for d in 0..A {
                blocks[(j * A + d) * m + j] = 1.0;
            }
        }
        let bn = g.constant(TensorBuf::matrix(m * A, m, blocks));
        g.matmul(elem, bn, false)?
    };
    let mixture_lp = match logits {
        Some(l) => {
            let lw = g.log_softmax_rows(l);
            let joint = g.add(lw, comp_lp)?;
            g.logsumexp_rows(joint)
        }
        None => comp_lp,
    };
    // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
    let m2 = g.scale(pre, -2.0);
    let sp = g.softplus(m2);
    let s = g.add(pre, sp)?;
    let inner = g.neg(s);
    let inner = g.add_scalar(inner, LN_2);
    let jac = g.scale(inner, 2.0);
    let jac = g.sum_rows(jac);
    g.sub(mixture_lp, jac)
}

/// Pre-squash location and log-scale columns of the active knowledge components.
fn knowledge_params(knowledge: &TensorBuf, active: &[usize]) -> (TensorBuf, TensorBuf) {
    let rows = knowledge.rows();
    let blocks: Vec<usize> = active.iter().filter(|&&i| i > 0).map(|&i| i - 1).collect();
    let (mut loc, mut ls) = (Vec::new(), Vec::new());
    for r in 0..rows {
        let row = knowledge.row_slice(r);
        for &b in &blocks {
            loc.extend_from_slice(&row[b * 2 * A..b * 2 * A + A]);
            ls.extend_from_slice(&row[b * 2 * A + A..(b + 1) * 2 * A]);
        }
    }
    let cols = blocks.len() * A;
    (TensorBuf::matrix(rows, cols, loc), TensorBuf::matrix(rows, cols, ls))
}

/// Inverts the squash of stored actions, keeping them off the boundary.
fn presquash(g: &mut Graph, actions: &TensorBuf) -> Result<NodeId> {
    if actions.cols() != A {
        return Err(Error::shape(alloc::format!(
            "actions need {A} columns, got {}",
            actions.cols()
        )));
    }
    let mut pre = actions.clone();
    for x in pre.data_mut() {
        *x = math::atanh(x.clamp(-ACTION_LIMIT, ACTION_LIMIT));
    }
    Ok(g.constant(pre))
}

fn obs_input(g: &mut Graph, obs: &TensorBuf) -> Result<NodeId> {
    if obs.cols() != POINT_OBS_DIM {
        return Err(Error::shape(alloc::format!(
            "point actor expects {POINT_OBS_DIM} observation columns, got {}",
            obs.cols()
        )));
    }
    Ok(g.constant(obs.clone()))
}

/// Separate inner-policy, inner-key and query networks over the flat observation.
#[derive(Debug, Clone)]
pub struct PointKgrlActor {
    spec: PointActorSpec,
    store: ParameterStore,
    inner: PointInnerNet,
    key: Mlp,
    query: Mlp,
    keys: Option<EmbeddingTable>,
    knowledge: KnowledgeSet,
    active: Vec<usize>,
    frozen_key_rows: Vec<bool>,
}

impl PointKgrlActor {
    pub fn new<R: Rng + ?Sized>(spec: PointActorSpec, knowledge: KnowledgeSet, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if knowledge.space() != ActionSpace::Cont4 {
            return Err(Error::Layout("point actor needs continuous knowledge".into()));
        }
        if knowledge.d_k() != spec.d_k {
            return Err(Error::Layout(alloc::format!(
                "knowledge set uses d_k = {}, actor d_k = {}",
                knowledge.d_k(),
                spec.d_k
            )));
        }
        let mut store = ParameterStore::new();
        let inner = PointInnerNet::init(&spec.inner(), &mut store, rng)?;
        let key = Mlp::init(&spec.head(), &mut store, "key", rng)?;
        let query = Mlp::init(&spec.head(), &mut store, "query", rng)?;
        let keys = if knowledge.is_empty() {
            None
        } else {
            Some(EmbeddingTable::init(
                &mut store,
                "kg.keys",
                spec.d_k,
                &knowledge.preset_keys(),
                rng,
            )?)
        };
        let n = knowledge.len();
        Ok(Self {
            spec,
            store,
            inner,
            key,
            query,
            keys,
            knowledge,
            active: (0..=n).collect(),
            frozen_key_rows: vec![false; n],
        })
    }

    pub fn spec(&self) -> &PointActorSpec {
        &self.spec
    }

    pub fn knowledge(&self) -> &KnowledgeSet {
        &self.knowledge
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    pub fn set_active(&mut self, active: Vec<usize>) -> Result<()> {
        check_active(&active, self.knowledge.len() + 1)?;
        self.active = active;
        Ok(())
    }

    pub fn freeze_key_rows(&mut self, rows: &[usize]) {
        for &r in rows {
            self.frozen_key_rows[r] = true;
        }
    }

    pub fn key_row(&self, i: usize) -> Vec<f64> {
        self.keys.as_ref().map(|k| k.row(&self.store, i)).unwrap_or_default()
    }

    pub fn inner_spec(&self) -> InnerNetSpec {
        InnerNetSpec::Point { mlp: self.spec.inner() }
    }

    pub fn snapshot_inner(&self) -> Result<LearnedPolicy> {
        LearnedPolicy::snapshot(&self.inner_spec(), &self.store)
    }

    /// The same actor with knowledge entries and key rows reordered by `order`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        out.knowledge = self.knowledge.permuted(order)?;
        if let Some(keys) = &self.keys {
            permute_rows(out.store.value_mut(keys.id), order);
        }
        out.frozen_key_rows = order.iter().map(|&i| self.frozen_key_rows[i]).collect();
        out.active = permute_active(&self.active, order);
        Ok(out)
    }

    pub fn keys_and_queries(&self, obs: &TensorBuf) -> Result<(TensorBuf, TensorBuf)> {
        let mut g = Graph::new();
        let x = obs_input(&mut g, obs)?;
        let k = self.key.forward(&mut g, &self.store, x, false)?;
        let u = self.query.forward(&mut g, &self.store, x, false)?;
        Ok((g.value(k).clone(), g.value(u).clone()))
    }

    /// Raw attention, active scores and the stacked component parameters.
    fn components(
        &self,
        g: &mut Graph,
        obs: &TensorBuf,
        knowledge: &TensorBuf,
    ) -> Result<(NodeId, NodeId, NodeId, NodeId)> {
        let n = self.knowledge.len();
        if knowledge.rows() != obs.rows() || knowledge.cols() != n * 2 * A {
            return Err(Error::shape(alloc::format!(
                "knowledge outputs {}x{} for {} observations and {n} mappings",
                knowledge.rows(),
                knowledge.cols(),
                obs.rows()
            )));
        }
        let x = obs_input(g, obs)?;
        let s = &self.store;
        let k_in = self.key.forward(g, s, x, true)?;
        let u = self.query.forward(g, s, x, true)?;
        let keys = self.keys.as_ref().map(|k| g.param(s, k.id));
        let raw = raw_attention(g, u, k_in, keys)?;
        let scores = select_columns(g, raw, &self.active)?;
        let (mut locs, mut lss) = (Vec::new(), Vec::new());
        if self.active[0] == 0 {
            let (l, ls) = self.inner.forward(g, s, x, true)?;
            locs.push(l);
            lss.push(ls);
        }
        if self.active.iter().any(|&i| i > 0) {
            let (l, ls) = knowledge_params(knowledge, &self.active);
            locs.push(g.constant(l));
            lss.push(g.constant(ls));
        }
        let loc = if locs.len() == 1 {
            locs[0]
        } else {
            g.concat_cols(&locs)?
        };
        let log_scale = if lss.len() == 1 { lss[0] } else { g.concat_cols(&lss)? };
        Ok((raw, scores, loc, log_scale))
    }
}

impl ContinuousActor for PointKgrlActor {
    fn store(&self) -> &ParameterStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn component_names(&self) -> Vec<String> {
        component_names(&self.knowledge)
    }

    fn knowledge_outputs(&self, obs: &[PointObservation], variant: PointVariant) -> Result<TensorBuf> {
        self.knowledge.eval_point(obs, variant)
    }

    fn forward(
        &self,
        g: &mut Graph,
        obs: &TensorBuf,
        knowledge: &TensorBuf,
        mode: SampleMode,
        rng: &mut RunRng,
    ) -> Result<ContinuousForward> {
        let (raw, scores, loc, log_scale) = self.components(g, obs, knowledge)?;
        let mix = squashed_mixture(g, Some(scores), loc, log_scale, self.spec.temperature, mode, rng)?;
        let weights = g.softmax_rows(scores);
        Ok(ContinuousForward {
            action: mix.action,
            log_prob: mix.log_prob,
            chosen: mix.chosen.iter().map(|&j| self.active[j]).collect(),
            attention: Some(AttentionNodes {
                raw,
                weights,
                active: self.active.clone(),
            }),
        })
    }

    fn log_prob(&self, g: &mut Graph, obs: &TensorBuf, knowledge: &TensorBuf, actions: &TensorBuf) -> Result<NodeId> {
        let (_, scores, loc, log_scale) = self.components(g, obs, knowledge)?;
        let pre = presquash(g, actions)?;
        squashed_log_density(g, Some(scores), loc, log_scale, pre)
    }

    fn mask_gradients(&mut self) {
        if let Some(keys) = &self.keys {
            let d = self.spec.d_k;
            let grad = &mut self.store.get_mut(keys.id).grad;
            for (r, &frozen) in self.frozen_key_rows.iter().enumerate() {
                if frozen {
                    grad[r * d..(r + 1) * d].fill(0.0);
                }
            }
        }
    }
}

/// A plain squashed-Gaussian policy with the same inner network.
#[derive(Debug, Clone)]
pub struct PointBaselineActor {
    spec: PointActorSpec,
    store: ParameterStore,
    inner: PointInnerNet,
}

impl PointBaselineActor {
    pub fn new<R: Rng + ?Sized>(spec: PointActorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut store = ParameterStore::new();
        let inner = PointInnerNet::init(&spec.inner(), &mut store, rng)?;
        Ok(Self { spec, store, inner })
    }

    pub fn spec(&self) -> &PointActorSpec {
        &self.spec
    }

    pub fn inner_spec(&self) -> InnerNetSpec {
        InnerNetSpec::Point { mlp: self.spec.inner() }
    }

    pub fn snapshot_inner(&self) -> Result<LearnedPolicy> {
        LearnedPolicy::snapshot(&self.inner_spec(), &self.store)
    }
}

impl ContinuousActor for PointBaselineActor {
    fn store(&self) -> &ParameterStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn component_names(&self) -> Vec<String> {
        vec![super::INNER.into()]
    }

    fn knowledge_outputs(&self, obs: &[PointObservation], _variant: PointVariant) -> Result<TensorBuf> {
        Ok(TensorBuf::zeros(&[obs.len(), 0]))
    }

    fn forward(
        &self,
        g: &mut Graph,
        obs: &TensorBuf,
        _knowledge: &TensorBuf,
        mode: SampleMode,
        rng: &mut RunRng,
    ) -> Result<ContinuousForward> {
        let x = obs_input(g, obs)?;
        let (loc, ls) = self.inner.forward(g, &self.store, x, true)?;
        let mix = squashed_mixture(g, None, loc, ls, self.spec.temperature, mode, rng)?;
        Ok(ContinuousForward {
            action: mix.action,
            log_prob: mix.log_prob,
            chosen: mix.chosen,
            attention: None,
        })
    }

    fn log_prob(&self, g: &mut Graph, obs: &TensorBuf, _knowledge: &TensorBuf, actions: &TensorBuf) -> Result<NodeId> {
        let x = obs_input(g, obs)?;
        let (loc, ls) = self.inner.forward(g, &self.store, x, true)?;
        let pre = presquash(g, actions)?;
        squashed_log_density(g, None, loc, ls, pre)
    }
}
