//! External knowledge: mappings from observations to action distributions,
//! grouped into an ordered [`KnowledgeSet`] with one key per mapping.
//!
//! A mapping is either a scripted rule or a frozen snapshot of a learned
//! inner policy. Their outputs never carry gradients.

pub mod grid_rules;
mod pack;
pub mod point_rules;

use alloc::boxed::Box;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::actor::nets::{InnerNet, InnerNetSpec};
use crate::approx::{ParameterStore, TensorBuf};
use crate::grid::{GridAction, GridObservation, GRID_OBS_DIM, GRID_OBS_LAYOUT};
use crate::point::{PointObservation, PointVariant, POINT_ACTION_DIM, POINT_OBS_DIM, POINT_OBS_LAYOUT};
use crate::{Error, Result};

pub use pack::{BlobEntries, PackKind, PackManifest, PACK_FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    /// The seven gridworld actions.
    Grid7,
    /// End-effector displacement plus grip.
    Cont4,
}

impl ActionSpace {
    pub fn obs_layout(self) -> &'static str {
        match self {
            ActionSpace::Grid7 => GRID_OBS_LAYOUT,
            ActionSpace::Cont4 => POINT_OBS_LAYOUT,
        }
    }

    /// Columns one component occupies in a knowledge output row: a pmf for
    /// the grid, location and log-scale for the continuous space.
    pub fn component_width(self) -> usize {
        match self {
            ActionSpace::Grid7 => GridAction::COUNT,
            ActionSpace::Cont4 => 2 * POINT_ACTION_DIM,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedRule {
    /// Go to a visible key and pick it up.
    PickupKey,
    /// Go to a visible door and open it.
    OpenDoor,
    /// Go to a visible goal.
    ReachGoal,
    /// With the object in hand, move it to the goal with the gripper closed.
    ToGoal,
    /// Move to the object with the gripper open.
    ToObject,
}

impl ScriptedRule {
    pub const ALL: [ScriptedRule; 5] = [
        ScriptedRule::PickupKey,
        ScriptedRule::OpenDoor,
        ScriptedRule::ReachGoal,
        ScriptedRule::ToGoal,
        ScriptedRule::ToObject,
    ];

    pub fn id(self) -> &'static str {
        match self {
            ScriptedRule::PickupKey => "pickup_key",
            ScriptedRule::OpenDoor => "open_door",
            ScriptedRule::ReachGoal => "reach_goal",
            ScriptedRule::ToGoal => "to_goal",
            ScriptedRule::ToObject => "to_object",
        }
    }

    pub fn parse(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|r| r.id() == id)
            .ok_or_else(|| Error::config(alloc::format!("unknown scripted rule `{id}`")))
    }

    pub fn space(self) -> ActionSpace {
        match self {
            ScriptedRule::PickupKey | ScriptedRule::OpenDoor | ScriptedRule::ReachGoal => ActionSpace::Grid7,
            ScriptedRule::ToGoal | ScriptedRule::ToObject => ActionSpace::Cont4,
        }
    }
}

/// Frozen inner policy: network description plus its own parameter store.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    spec: InnerNetSpec,
    net: InnerNet,
    params: ParameterStore,
}

impl LearnedPolicy {
    /// Copies the inner-policy parameters out of `store` (which may hold more).
    pub fn snapshot(spec: &InnerNetSpec, store: &ParameterStore) -> Result<Self> {
        Self::new(spec.clone(), store.subset(&InnerNet::prefixes(spec)))
    }

    pub fn new(spec: InnerNetSpec, params: ParameterStore) -> Result<Self> {
        let net = InnerNet::bind(&spec, &params)?;
        Ok(Self { spec, net, params })
    }

    pub fn spec(&self) -> &InnerNetSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParameterStore {
        &self.params
    }

    pub fn space(&self) -> ActionSpace {
        match self.spec {
            InnerNetSpec::Grid { .. } => ActionSpace::Grid7,
            InnerNetSpec::Point { .. } => ActionSpace::Cont4,
        }
    }
}

#[derive(Debug, Clone)]
pub enum KnowledgeMapping {
    Scripted(ScriptedRule),
    Learned(Box<LearnedPolicy>),
}

impl KnowledgeMapping {
    pub fn space(&self) -> ActionSpace {
        match self {
            KnowledgeMapping::Scripted(r) => r.space(),
            KnowledgeMapping::Learned(p) => p.space(),
        }
    }

    /// `batch x 7` action probabilities.
    pub fn eval_grid(&self, obs: &[GridObservation]) -> Result<TensorBuf> {
        let mut out = Vec::with_capacity(obs.len() * GridAction::COUNT);
        match self {
            KnowledgeMapping::Scripted(rule) => {
                let f = match rule {
                    ScriptedRule::PickupKey => grid_rules::pickup_key,
                    ScriptedRule::OpenDoor => grid_rules::open_door,
                    ScriptedRule::ReachGoal => grid_rules::reach_goal,
                    _ => return Err(self.space_error(ActionSpace::Grid7)),
                };
                for o in obs {
                    out.extend_from_slice(&f(o));
                }
            }
            KnowledgeMapping::Learned(p) => {
                let InnerNet::Grid(net) = &p.net else {
                    return Err(self.space_error(ActionSpace::Grid7));
                };
                for o in obs {
                    out.extend(o.encode());
                }
                return net.pmf(&p.params, &TensorBuf::matrix(obs.len(), GRID_OBS_DIM, out));
            }
        }
        Ok(TensorBuf::matrix(obs.len(), GridAction::COUNT, out))
    }

    /// `batch x 8`: pre-squash location then log-scale.
    pub fn eval_point(&self, obs: &[PointObservation], variant: PointVariant) -> Result<TensorBuf> {
        let mut out = Vec::with_capacity(obs.len() * 2 * POINT_ACTION_DIM);
        match self {
            KnowledgeMapping::Scripted(rule) => {
                let eps = point_rules::epsilon(variant);
                let f = match rule {
                    ScriptedRule::ToGoal => point_rules::to_goal_mean,
                    ScriptedRule::ToObject => point_rules::to_object_mean,
                    _ => return Err(self.space_error(ActionSpace::Cont4)),
                };
                for o in obs {
                    let (loc, ls) = point_rules::squash_params(f(o, eps));
                    out.extend_from_slice(&loc);
                    out.extend_from_slice(&ls);
                }
            }
            KnowledgeMapping::Learned(p) => {
                let InnerNet::Point(net) = &p.net else {
                    return Err(self.space_error(ActionSpace::Cont4));
                };
                for o in obs {
                    out.extend_from_slice(&o.0);
                }
                return net.eval(&p.params, &TensorBuf::matrix(obs.len(), POINT_OBS_DIM, out));
            }
        }
        Ok(TensorBuf::matrix(obs.len(), 2 * POINT_ACTION_DIM, out))
    }

    fn space_error(&self, wanted: ActionSpace) -> Error {
        Error::Layout(alloc::format!(
            "{:?} knowledge evaluated in the {wanted:?} action space",
            self.space()
        ))
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeEntry {
    pub name: String,
    pub mapping: KnowledgeMapping,
    /// Initial key; `None` draws a fresh one when the actor is built.
    pub key: Option<Vec<f64>>,
}

impl KnowledgeEntry {
    pub fn scripted(name: &str, rule: ScriptedRule) -> Self {
        Self {
            name: name.to_string(),
            mapping: KnowledgeMapping::Scripted(rule),
            key: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeSet {
    space: ActionSpace,
    d_k: usize,
    entries: Vec<KnowledgeEntry>,
}

impl KnowledgeSet {
    pub fn new(space: ActionSpace, d_k: usize, entries: Vec<KnowledgeEntry>) -> Result<Self> {
        if d_k == 0 {
            return Err(Error::config("d_k must be at least 1"));
        }
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.name == e.name) {
                return Err(Error::config(alloc::format!("duplicate knowledge name `{}`", e.name)));
            }
            if e.mapping.space() != space {
                return Err(Error::Layout(alloc::format!(
                    "knowledge `{}` acts in {:?}, the set in {space:?}",
                    e.name,
                    e.mapping.space()
                )));
            }
            if let Some(k) = &e.key {
                if k.len() != d_k {
                    return Err(Error::Layout(alloc::format!(
                        "knowledge `{}` has a {}-dimensional key, the set uses d_k = {d_k}",
                        e.name,
                        k.len()
                    )));
                }
            }
        }
        Ok(Self { space, d_k, entries })
    }

    pub fn empty(space: ActionSpace, d_k: usize) -> Self {
        Self {
            space,
            d_k,
            entries: Vec::new(),
        }
    }

    pub fn space(&self) -> ActionSpace {
        self.space
    }

    pub fn d_k(&self) -> usize {
        self.d_k
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.name.as_str()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn preset_keys(&self) -> Vec<Option<Vec<f64>>> {
        self.entries.iter().map(|e| e.key.clone()).collect()
    }

    /// The same entries in `order` (a permutation of indices).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let mut seen = alloc::vec![false; self.len()];
        if order.len() != self.len()
            || order
                .iter()
                .any(|&i| i >= self.len() || core::mem::replace(&mut seen[i], true))
        {
            return Err(Error::usage("knowledge order is not a permutation"));
        }
        Ok(Self {
            space: self.space,
            d_k: self.d_k,
            entries: order.iter().map(|&i| self.entries[i].clone()).collect(),
        })
    }

    /// `batch x (n * 7)`, component blocks in set order.
    pub fn eval_grid(&self, obs: &[GridObservation]) -> Result<TensorBuf> {
        let outs = self
            .entries
            .iter()
            .map(|e| e.mapping.eval_grid(obs))
            .collect::<Result<Vec<_>>>()?;
        Ok(interleave(obs.len(), &outs))
    }

    /// `batch x (n * 8)`, component blocks in set order.
    pub fn eval_point(&self, obs: &[PointObservation], variant: PointVariant) -> Result<TensorBuf> {
        let outs = self
            .entries
            .iter()
            .map(|e| e.mapping.eval_point(obs, variant))
            .collect::<Result<Vec<_>>>()?;
        Ok(interleave(obs.len(), &outs))
    }
}

fn interleave(rows: usize, parts: &[TensorBuf]) -> TensorBuf {
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            out.extend_from_slice(p.row_slice(r));
        }
    }
    TensorBuf::matrix(rows, cols, out)
}
