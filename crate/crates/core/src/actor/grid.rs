use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nets::{default_grid_encoder, GridInnerNet, InnerNetSpec};
use super::{
    check_active, component_names, knowledge_blocks, permute_active, permute_rows, raw_attention, select_columns,
    AttentionNodes, DiscreteActor, DiscreteForward,
};
use crate::approx::{
    Activation, ConvEncoderSpec, EmbeddingTable, Graph, Mlp, MlpSpec, NodeId, ParameterStore, TensorBuf,
};
use crate::grid::{GridAction, GridObservation, GRID_OBS_DIM};
use crate::knowledge::{ActionSpace, KnowledgeSet, LearnedPolicy};
use crate::{Error, Result};

fn default_d_k() -> usize {
    8
}

fn default_critic_hidden() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridActorSpec {
    #[serde(default = "default_grid_encoder")]
    pub encoder: ConvEncoderSpec,
    #[serde(default = "default_d_k")]
    pub d_k: usize,
    #[serde(default = "default_critic_hidden")]
    pub critic_hidden: usize,
}

impl Default for GridActorSpec {
    fn default() -> Self {
        Self {
            encoder: default_grid_encoder(),
            d_k: default_d_k(),
            critic_hidden: default_critic_hidden(),
        }
    }
}

impl GridActorSpec {
    fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.encoder.input_dim() != GRID_OBS_DIM {
            return Err(Error::config(alloc::format!(
                "grid encoder takes {} inputs, observations have {GRID_OBS_DIM}",
                self.encoder.input_dim()
            )));
        }
        if self.d_k == 0 || self.critic_hidden == 0 {
            return Err(Error::config("d_k and critic_hidden must be at least 1"));
        }
        Ok(())
    }

    fn critic(&self) -> MlpSpec {
        MlpSpec::new(self.encoder.head_width, &[(self.critic_hidden, Activation::Tanh)], 1)
    }

    fn head(&self) -> MlpSpec {
        MlpSpec::new(self.encoder.head_width, &[], self.d_k)
    }
}

fn encoded_input(g: &mut Graph, obs: &TensorBuf) -> Result<NodeId> {
    if obs.cols() != GRID_OBS_DIM {
        return Err(Error::shape(alloc::format!(
            "grid actor expects {GRID_OBS_DIM} observation columns, got {}",
            obs.cols()
        )));
    }
    Ok(g.constant(obs.clone()))
}

/// Inner policy, inner key and query share the convolutional trunk; the
/// critic head reads the same trunk features.
#[derive(Debug, Clone)]
pub struct GridKgrlActor {
    spec: GridActorSpec,
    store: ParameterStore,
    inner: GridInnerNet,
    key: Mlp,
    query: Mlp,
    critic: Mlp,
    keys: Option<EmbeddingTable>,
    knowledge: KnowledgeSet,
    active: Vec<usize>,
    frozen_key_rows: Vec<bool>,
}

impl GridKgrlActor {
    pub fn new<R: Rng + ?Sized>(spec: GridActorSpec, knowledge: KnowledgeSet, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        if knowledge.space() != ActionSpace::Grid7 {
            return Err(Error::Layout("grid actor needs grid knowledge".into()));
        }
        if knowledge.d_k() != spec.d_k {
            return Err(Error::Layout(alloc::format!(
                "knowledge set uses d_k = {}, actor d_k = {}",
                knowledge.d_k(),
                spec.d_k
            )));
        }
        let mut store = ParameterStore::new();
        let inner = GridInnerNet::init(&spec.encoder, &mut store, rng)?;
        let key = Mlp::init(&spec.head(), &mut store, "key", rng)?;
        let query = Mlp::init(&spec.head(), &mut store, "query", rng)?;
        let critic = Mlp::init(&spec.critic(), &mut store, "critic", rng)?;
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
            critic,
            keys,
            knowledge,
            active: (0..=n).collect(),
            frozen_key_rows: alloc::vec![false; n],
        })
    }

    pub fn spec(&self) -> &GridActorSpec {
        &self.spec
    }

    pub fn knowledge(&self) -> &KnowledgeSet {
        &self.knowledge
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Restricts the mixture to `active` components (0 = inner); the others'
    /// scores are left out of the softmax.
    pub fn set_active(&mut self, active: Vec<usize>) -> Result<()> {
        check_active(&active, self.knowledge.len() + 1)?;
        self.active = active;
        Ok(())
    }

    /// Keeps the given knowledge-key rows at their current values during training.
    pub fn freeze_key_rows(&mut self, rows: &[usize]) {
        for &r in rows {
            self.frozen_key_rows[r] = true;
        }
    }

    pub fn key_row(&self, i: usize) -> Vec<f64> {
        self.keys.as_ref().map(|k| k.row(&self.store, i)).unwrap_or_default()
    }

    pub fn inner_spec(&self) -> InnerNetSpec {
        InnerNetSpec::Grid {
            encoder: self.spec.encoder.clone(),
        }
    }

    /// Frozen copy of the inner policy, usable as knowledge elsewhere.
    pub fn snapshot_inner(&self) -> Result<LearnedPolicy> {
        LearnedPolicy::snapshot(&self.inner_spec(), &self.store)
    }

    /// `(k_in, u)` for a batch of encoded observations.
    pub fn keys_and_queries(&self, obs: &TensorBuf) -> Result<(TensorBuf, TensorBuf)> {
        let mut g = Graph::new();
        let x = encoded_input(&mut g, obs)?;
        let h = self.inner.trunk(&mut g, &self.store, x, false)?;
        let k = self.key.forward(&mut g, &self.store, h, false)?;
        let u = self.query.forward(&mut g, &self.store, h, false)?;
        Ok((g.value(k).clone(), g.value(u).clone()))
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
}

impl DiscreteActor for GridKgrlActor {
    fn store(&self) -> &ParameterStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn component_names(&self) -> Vec<String> {
        component_names(&self.knowledge)
    }

    fn knowledge_outputs(&self, obs: &[GridObservation]) -> Result<TensorBuf> {
        self.knowledge.eval_grid(obs)
    }

    fn forward(&self, g: &mut Graph, obs: &TensorBuf, knowledge: &TensorBuf) -> Result<DiscreteForward> {
        let n = self.knowledge.len();
        if knowledge.rows() != obs.rows() || knowledge.cols() != n * GridAction::COUNT {
            return Err(Error::shape(alloc::format!(
                "knowledge outputs {}x{} for {} observations and {n} mappings",
                knowledge.rows(),
                knowledge.cols(),
                obs.rows()
            )));
        }
        let x = encoded_input(g, obs)?;
        let s = &self.store;
        let h = self.inner.trunk(g, s, x, true)?;
        let k_in = self.key.forward(g, s, h, true)?;
        let u = self.query.forward(g, s, h, true)?;
        let keys = self.keys.as_ref().map(|k| g.param(s, k.id));
        let raw = raw_attention(g, u, k_in, keys)?;
        let scores = select_columns(g, raw, &self.active)?;
        let weights = g.softmax_rows(scores);
        let mut parts = Vec::new();
        if self.active[0] == 0 {
            let logits = self.inner.logits(g, s, h, true)?;
            parts.push(g.softmax_rows(logits));
        }
        if self.active.iter().any(|&i| i > 0) {
            parts.push(g.constant(knowledge_blocks(knowledge, &self.active, GridAction::COUNT)));
        }
        let comps = if parts.len() == 1 {
            parts[0]
        } else {
            g.concat_cols(&parts)?
        };
        let pmf = g.mix_rows(weights, comps, GridAction::COUNT)?;
        let value = self.critic.forward(g, s, h, true)?;
        Ok(DiscreteForward {
            pmf,
            value,
            attention: Some(AttentionNodes {
                raw,
                weights,
                active: self.active.clone(),
            }),
        })
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

/// The same trunk, policy head and critic with no keys, query or knowledge.
#[derive(Debug, Clone)]
pub struct GridBaselineActor {
    spec: GridActorSpec,
    store: ParameterStore,
    inner: GridInnerNet,
    critic: Mlp,
}

impl GridBaselineActor {
    pub fn new<R: Rng + ?Sized>(spec: GridActorSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut store = ParameterStore::new();
        let inner = GridInnerNet::init(&spec.encoder, &mut store, rng)?;
        let critic = Mlp::init(&spec.critic(), &mut store, "critic", rng)?;
        Ok(Self {
            spec,
            store,
            inner,
            critic,
        })
    }

    pub fn spec(&self) -> &GridActorSpec {
        &self.spec
    }

    pub fn inner_spec(&self) -> InnerNetSpec {
        InnerNetSpec::Grid {
            encoder: self.spec.encoder.clone(),
        }
    }

    pub fn snapshot_inner(&self) -> Result<LearnedPolicy> {
        LearnedPolicy::snapshot(&self.inner_spec(), &self.store)
    }
}

impl DiscreteActor for GridBaselineActor {
    fn store(&self) -> &ParameterStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    fn component_names(&self) -> Vec<String> {
        alloc::vec![super::INNER.into()]
    }

    fn knowledge_outputs(&self, obs: &[GridObservation]) -> Result<TensorBuf> {
        Ok(TensorBuf::zeros(&[obs.len(), 0]))
    }

    fn forward(&self, g: &mut Graph, obs: &TensorBuf, _knowledge: &TensorBuf) -> Result<DiscreteForward> {
        let x = encoded_input(g, obs)?;
        let h = self.inner.trunk(g, &self.store, x, true)?;
        let logits = self.inner.logits(g, &self.store, h, true)?;
        let pmf = g.softmax_rows(logits);
        let value = self.critic.forward(g, &self.store, h, true)?;
        Ok(DiscreteForward {
            pmf,
            value,
            attention: None,
        })
    }
}
