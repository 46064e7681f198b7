//! JSON experiment configuration.

use std::fs;
use std::path::{Path, PathBuf};

use kgrl_core::actor::{GridActorSpec, PointActorSpec};
use kgrl_core::algo::{PpoConfig, SacConfig};
use kgrl_core::grid::GridConfig;
use kgrl_core::knowledge::{ActionSpace, KnowledgeEntry, KnowledgeSet, ScriptedRule};
use kgrl_core::point::{PointConfig, PointVariant};
use serde::{Deserialize, Serialize};

use crate::{io_err, pack, usage, Error, Result};

/// `{"grid": "doorkey-5x5"}` or `{"point": {"variant": "reach", ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    Grid(String),
    Point(PointConfig),
}

impl EnvSpec {
    /// Parses the CLI shorthand: a grid preset name, `reach` or `pick_place`.
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "reach" => Ok(EnvSpec::Point(PointConfig::new(PointVariant::Reach))),
            "pick_place" => Ok(EnvSpec::Point(PointConfig::new(PointVariant::PickPlace))),
            _ => {
                GridConfig::preset(name)?;
                Ok(EnvSpec::Grid(name.to_string()))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            EnvSpec::Grid(n) => n.clone(),
            EnvSpec::Point(c) => match c.variant {
                PointVariant::Reach => "reach".into(),
                PointVariant::PickPlace => "pick_place".into(),
            },
        }
    }

    pub fn space(&self) -> ActionSpace {
        match self {
            EnvSpec::Grid(_) => ActionSpace::Grid7,
            EnvSpec::Point(_) => ActionSpace::Cont4,
        }
    }

    pub fn grid(&self) -> Result<GridConfig> {
        match self {
            EnvSpec::Grid(n) => Ok(GridConfig::preset(n)?),
            EnvSpec::Point(_) => Err(usage(format!("`{}` is not a gridworld", self.name()))),
        }
    }

    pub fn point(&self) -> Result<PointConfig> {
        match self {
            EnvSpec::Point(c) => {
                c.validate()?;
                Ok(*c)
            }
            EnvSpec::Grid(n) => Err(usage(format!("`{n}` is not a continuous environment"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActorKind {
    Baseline,
    Kgrl,
}

/// A scripted rule id such as `"reach_goal"`, or `{"pack": "path/x.pack.json"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KnowledgeSource {
    Scripted(String),
    Pack {
        pack: PathBuf,
        /// Overrides the name stored in the pack.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
}

impl KnowledgeSource {
    /// Resolves the source; pack paths are taken relative to `base`.
    pub fn load(&self, base: &Path, d_k: usize) -> Result<(KnowledgeEntry, bool)> {
        match self {
            KnowledgeSource::Scripted(id) => Ok((KnowledgeEntry::scripted(id, ScriptedRule::parse(id)?), false)),
            KnowledgeSource::Pack { pack, name } => {
                let mut e = pack::load_pack(&base.join(pack), d_k)?;
                if let Some(n) = name {
                    e.name = n.clone();
                }
                Ok((e, true))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSchedule {
    /// Env steps between evaluations, 0 for none; the final evaluation always runs.
    pub every: u64,
    pub episodes: usize,
    /// Evaluation episodes draw their layouts and goals from this seed,
    /// disjoint from the training streams.
    pub seed: u64,
    /// Gridworld actions by argmax instead of sampling from the policy.
    /// Continuous evaluation always acts with the top component's mean.
    pub greedy: bool,
}

impl Default for EvalSchedule {
    fn default() -> Self {
        Self {
            every: 20_000,
            episodes: 100,
            seed: 1_000_003,
            greedy: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    MeanReturn,
    SuccessRate,
}

/// Records the first training-curve row whose `metric` reaches `value`,
/// optionally ending training there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    #[serde(default)]
    pub metric: Metric,
    pub value: f64,
    #[serde(default)]
    pub stop: bool,
}

impl Threshold {
    pub fn mean_return(value: f64, stop: bool) -> Self {
        Self {
            metric: Metric::MeanReturn,
            value,
            stop,
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("runs/default")
}

fn default_log_every() -> u64 {
    2_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub actor: ActorKind,
    #[serde(default)]
    pub knowledge: Vec<KnowledgeSource>,
    #[serde(default)]
    pub grid_actor: GridActorSpec,
    #[serde(default)]
    pub point_actor: PointActorSpec,
    #[serde(default)]
    pub ppo: PpoConfig,
    #[serde(default)]
    pub sac: SacConfig,
    pub seeds: Vec<u64>,
    pub total_steps: u64,
    #[serde(default)]
    pub eval: EvalSchedule,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Threshold>,
    /// Keep keys loaded from packs fixed during training.
    #[serde(default)]
    pub freeze_keys: bool,
    /// Training-curve row spacing for SAC runs; PPO writes one row per iteration.
    #[serde(default = "default_log_every")]
    pub log_every: u64,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn new(env: EnvSpec, actor: ActorKind, knowledge: Vec<KnowledgeSource>, total_steps: u64) -> Self {
        Self {
            env,
            actor,
            knowledge,
            grid_actor: GridActorSpec::default(),
            point_actor: PointActorSpec::default(),
            ppo: PpoConfig::default(),
            sac: SacConfig::default(),
            seeds: vec![0],
            total_steps,
            eval: EvalSchedule::default(),
            threshold: None,
            freeze_keys: false,
            log_every: default_log_every(),
            out_dir: default_out(),
        }
    }

    /// Parses `text`; errors name the offending field path.
    pub fn from_json(text: &str, file: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| Error::Schema {
            file: file.to_string(),
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate().map_err(|e| match e {
            Error::Usage(message) | Error::Core(kgrl_core::Error::Config(message)) => Error::Schema {
                file: file.to_string(),
                path: "(config)".into(),
                message,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(usage("seeds must not be empty"));
        }
        if self.total_steps == 0 {
            return Err(usage("total_steps must be at least 1"));
        }
        if self.eval.episodes == 0 {
            return Err(usage("eval.episodes must be at least 1"));
        }
        if self.log_every == 0 {
            return Err(usage("log_every must be at least 1"));
        }
        if self.actor == ActorKind::Baseline && !self.knowledge.is_empty() {
            return Err(usage("a baseline actor takes no knowledge"));
        }
        match &self.env {
            EnvSpec::Grid(_) => {
                self.env.grid()?.validate()?;
                self.ppo.validate()?;
            }
            EnvSpec::Point(_) => {
                self.env.point()?;
                self.sac.validate()?;
            }
        }
        for k in &self.knowledge {
            if let KnowledgeSource::Scripted(id) = k {
                let rule = ScriptedRule::parse(id)?;
                if rule.space() != self.env.space() {
                    return Err(usage(format!(
                        "knowledge `{id}` acts in {:?} but `{}` needs {:?}",
                        rule.space(),
                        self.env.name(),
                        self.env.space()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn d_k(&self) -> usize {
        match self.env {
            EnvSpec::Grid(_) => self.grid_actor.d_k,
            EnvSpec::Point(_) => self.point_actor.d_k,
        }
    }

    /// Builds the knowledge set; `base` anchors relative pack paths. The
    /// second value lists the entries that came from packs.
    pub fn knowledge_set(&self, base: &Path) -> Result<(KnowledgeSet, Vec<usize>)> {
        let mut entries = Vec::new();
        let mut from_packs = Vec::new();
        for (i, src) in self.knowledge.iter().enumerate() {
            let (e, packed) = src.load(base, self.d_k())?;
            if packed {
                from_packs.push(i);
            }
            entries.push(e);
        }
        Ok((KnowledgeSet::new(self.env.space(), self.d_k(), entries)?, from_packs))
    }
}
