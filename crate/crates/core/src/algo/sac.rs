use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::replay::{her_relabel, ReplayBuffer, Transition};
use super::rollout::EpisodeStats;
use crate::actor::{ContinuousActor, SampleMode};
use crate::approx::{Activation, Adam, Graph, Mlp, MlpSpec, NodeId, ParameterStore, TensorBuf};
use crate::math;
use crate::point::{PointConfig, PointObservation, PointState, PointVariant, POINT_ACTION_DIM, POINT_OBS_DIM};
use crate::rng::{seeded, RunRng};
use crate::{Error, Result};

fn default_hidden() -> Vec<usize> {
    vec![256, 256]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub batch: usize,
    pub gamma: f64,
    /// Target-network smoothing coefficient.
    pub tau: f64,
    /// Entropy target; `None` means `-dim(action)`.
    pub target_entropy: Option<f64>,
    pub init_alpha: f64,
    /// Pins the entropy temperature instead of tuning it.
    pub fixed_alpha: Option<f64>,
    pub critic_hidden: Vec<usize>,
    pub buffer_capacity: usize,
    /// Relabeled copies per stored transition.
    pub her_k: usize,
    /// Uniformly random actions before the actor takes over.
    pub warmup_steps: u64,
    pub updates_per_step: usize,
    /// Clip value targets to the range reachable with rewards in `[-1, 0]`.
    pub clip_targets: bool,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            alpha_lr: 1e-3,
            batch: 256,
            gamma: 0.95,
            tau: 0.005,
            target_entropy: None,
            init_alpha: 0.1,
            fixed_alpha: None,
            critic_hidden: default_hidden(),
            buffer_capacity: 1_000_000,
            her_k: 4,
            warmup_steps: 1000,
            updates_per_step: 1,
            clip_targets: true,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(format!("sac: {msg}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch == 0 || self.buffer_capacity == 0 {
            return bad("batch and buffer_capacity must be at least 1");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.alpha_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if !(self.init_alpha > 0.0) {
            return bad("init_alpha must be positive");
        }
        if matches!(self.fixed_alpha, Some(a) if !(a >= 0.0)) {
            return bad("fixed_alpha must be non-negative");
        }
        Ok(())
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy.unwrap_or(-(POINT_ACTION_DIM as f64))
    }
}

/// Twin soft Q-networks `q1.*`, `q2.*` over `[obs, action]` and their targets.
#[derive(Debug, Clone)]
pub struct Critics {
    pub store: ParameterStore,
    pub target: ParameterStore,
    q1: Mlp,
    q2: Mlp,
}

impl Critics {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Result<Self> {
        let h: Vec<_> = hidden.iter().map(|&w| (w, Activation::Relu)).collect();
        let spec = MlpSpec::new(POINT_OBS_DIM + POINT_ACTION_DIM, &h, 1);
        let mut store = ParameterStore::new();
        let q1 = Mlp::init(&spec, &mut store, "q1", rng)?;
        let q2 = Mlp::init(&spec, &mut store, "q2", rng)?;
        let target = store.clone();
        Ok(Self { store, target, q1, q2 })
    }

    /// Both Q-values for `batch x (obs + action)` inputs.
    fn q(&self, g: &mut Graph, x: NodeId, store: &ParameterStore, trainable: bool) -> Result<(NodeId, NodeId)> {
        Ok((
            self.q1.forward(g, store, x, trainable)?,
            self.q2.forward(g, store, x, trainable)?,
        ))
    }

    /// Elementwise minimum of the twin Q-values, gradients detached from the critics.
    pub fn min_q(&self, g: &mut Graph, obs: NodeId, action: NodeId, target: bool) -> Result<NodeId> {
        let x = g.concat_cols(&[obs, action])?;
        let store = if target { &self.target } else { &self.store };
        let (a, b) = self.q(g, x, store, false)?;
        g.min(a, b)
    }
}

/// Critics, entropy temperature and optimizer settings of one SAC run.
#[derive(Debug, Clone)]
pub struct SacLearner {
    pub config: SacConfig,
    pub critics: Critics,
    /// Single parameter `log_alpha`.
    pub temperature: ParameterStore,
    updates: u64,
}

impl SacLearner {
    pub fn new<R: Rng + ?Sized>(config: SacConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let critics = Critics::new(&config.critic_hidden, rng)?;
        let mut temperature = ParameterStore::new();
        temperature.insert("log_alpha", TensorBuf::scalar(math::ln(config.init_alpha)))?;
        Ok(Self {
            config,
            critics,
            temperature,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        match self.config.fixed_alpha {
            Some(a) => a,
            None => math::exp(self.temperature.by_name("log_alpha").map(|t| t.item()).unwrap_or(0.0)),
        }
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SacStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    /// `-mean log pi(a|s)` of fresh actions.
    pub entropy: f64,
    pub mean_q: f64,
}

fn obs_matrix(obs: &[PointObservation]) -> TensorBuf {
    TensorBuf::stack_rows(obs.iter().map(|o| o.0.as_slice()))
}

fn finite(name: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            name: name.into(),
            detail: format!("{x}"),
        })
    }
}

/// Soft Bellman targets `r + gamma (min Q'(s', a') - alpha log pi(a'|s'))`
/// with `a'` drawn from the current actor.
pub fn soft_targets<A: ContinuousActor + ?Sized>(
    actor: &A,
    learner: &SacLearner,
    batch: &[Transition],
    variant: PointVariant,
    rng: &mut RunRng,
) -> Result<TensorBuf> {
    let cfg = &learner.config;
    let next: Vec<PointObservation> = batch.iter().map(|t| t.next_obs).collect();
    let xn = obs_matrix(&next);
    let kn = actor.knowledge_outputs(&next, variant)?;
    let alpha = learner.alpha();
    let mut g = Graph::new();
    let f = actor.forward(&mut g, &xn, &kn, SampleMode::Stochastic, rng)?;
    let o = g.constant(xn);
    let q = learner.critics.min_q(&mut g, o, f.action, true)?;
    let (q, lp) = (g.value(q), g.value(f.log_prob));
    let (lo, hi) = if cfg.clip_targets {
        (-1.0 / (1.0 - cfg.gamma), 0.0)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    let y = (0..batch.len())
        .map(|i| (batch[i].reward + cfg.gamma * (q.get(i, 0) - alpha * lp.get(i, 0))).clamp(lo, hi))
        .collect();
    Ok(TensorBuf::matrix(batch.len(), 1, y))
}

/// Regresses both critics toward `targets`; returns the loss before the step
/// and the mean first Q-value.
pub fn critic_step(learner: &mut SacLearner, batch: &[Transition], targets: &TensorBuf) -> Result<(f64, f64)> {
    let b = batch.len();
    let obs: Vec<PointObservation> = batch.iter().map(|t| t.obs).collect();
    let actions = TensorBuf::matrix(b, POINT_ACTION_DIM, batch.iter().flat_map(|t| t.action).collect());
    let mut g = Graph::new();
    let o = g.constant(obs_matrix(&obs));
    let a = g.constant(actions);
    let inp = g.concat_cols(&[o, a])?;
    let (q1, q2) = learner.critics.q(&mut g, inp, &learner.critics.store, true)?;
    let yn = g.constant(targets.clone());
    let d1 = g.sub(q1, yn)?;
    let d1 = g.square(d1);
    let l1 = g.mean(d1);
    let d2 = g.sub(q2, yn)?;
    let d2 = g.square(d2);
    let l2 = g.mean(d2);
    let l = g.add(l1, l2)?;
    let loss = g.scale(l, 0.5);
    finite("critic loss", g.scalar(loss))?;
    let grads = g.backward(loss)?;
    learner.critics.store.accumulate(&grads)?;
    Adam::default().step(&mut learner.critics.store, learner.config.critic_lr)?;
    Ok((g.scalar(loss), math::mean(g.value(q1).data())))
}

/// Moves the actor down `alpha log pi(a|s) - min Q(s, a)` through the
/// reparameterized sample; returns the loss before the step and the sampled
/// log-densities.
pub fn actor_step<A: ContinuousActor + ?Sized>(
    actor: &mut A,
    learner: &SacLearner,
    obs: &[PointObservation],
    variant: PointVariant,
    rng: &mut RunRng,
) -> Result<(f64, Vec<f64>)> {
    let x = obs_matrix(obs);
    let k = actor.knowledge_outputs(obs, variant)?;
    let mut g = Graph::new();
    let f = actor.forward(&mut g, &x, &k, SampleMode::Stochastic, rng)?;
    let o = g.constant(x);
    let q = learner.critics.min_q(&mut g, o, f.action, false)?;
    let ent = g.scale(f.log_prob, learner.alpha());
    let d = g.sub(ent, q)?;
    let loss = g.mean(d);
    finite("actor loss", g.scalar(loss))?;
    let grads = g.backward(loss)?;
    actor.store_mut().accumulate(&grads)?;
    actor.mask_gradients();
    Adam::default().step(actor.store_mut(), learner.config.actor_lr)?;
    Ok((g.scalar(loss), g.value(f.log_prob).data().to_vec()))
}

/// One soft actor-critic step on `batch`: critic regression toward the soft
/// Bellman target, actor descent on `alpha log pi - min Q`, temperature
/// adjustment toward the entropy target and Polyak averaging of the targets.
pub fn sac_update<A: ContinuousActor + ?Sized>(
    actor: &mut A,
    learner: &mut SacLearner,
    batch: &[Transition],
    variant: PointVariant,
    rng: &mut RunRng,
) -> Result<SacStats> {
    let y = soft_targets(actor, learner, batch, variant, rng)?;
    let (critic_loss, mean_q) = critic_step(learner, batch, &y)?;
    let obs: Vec<PointObservation> = batch.iter().map(|t| t.obs).collect();
    let (actor_loss, log_probs) = actor_step(actor, learner, &obs, variant, rng)?;

    let mean_lp = math::mean(&log_probs);
    if learner.config.fixed_alpha.is_none() {
        let id = learner.temperature.id("log_alpha")?;
        // d/d log_alpha of -log_alpha * (log pi + target)
        learner.temperature.get_mut(id).grad[0] = -(mean_lp + learner.config.target_entropy());
        Adam::default().step(&mut learner.temperature, learner.config.alpha_lr)?;
    }

    let tau = learner.config.tau;
    learner.critics.target.polyak_from(&learner.critics.store, tau)?;
    learner.updates += 1;
    Ok(SacStats {
        critic_loss,
        actor_loss,
        alpha: learner.alpha(),
        entropy: -mean_lp,
        mean_q,
    })
}

/// One environment, its replay buffer and the learner of a SAC+HER run.
#[derive(Debug, Clone)]
pub struct SacTrainer {
    env_config: PointConfig,
    env: PointState,
    episode: Vec<Transition>,
    episode_return: f64,
    pub learner: SacLearner,
    pub buffer: ReplayBuffer,
    rng: RunRng,
    env_steps: u64,
    last_stats: Option<SacStats>,
}

impl SacTrainer {
    pub fn new(config: SacConfig, env_config: PointConfig, seed: u64) -> Result<Self> {
        env_config.validate()?;
        let mut rng = seeded(seed);
        let learner = SacLearner::new(config.clone(), &mut rng)?;
        let env = PointState::reset(&env_config, &mut rng)?;
        Ok(Self {
            env_config,
            env,
            episode: Vec::new(),
            episode_return: 0.0,
            learner,
            buffer: ReplayBuffer::new(config.buffer_capacity)?,
            rng,
            env_steps: 0,
            last_stats: None,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn last_stats(&self) -> Option<&SacStats> {
        self.last_stats.as_ref()
    }

    /// One environment step followed by the configured number of updates.
    /// Returns the episode that finished with this step, if any.
    pub fn step<A: ContinuousActor + ?Sized>(&mut self, actor: &mut A) -> Result<Option<EpisodeStats>> {
        let variant = self.env_config.variant;
        let obs = self.env.observe();
        let action = if self.env_steps < self.learner.config.warmup_steps {
            [0; POINT_ACTION_DIM].map(|_| self.rng.random_range(-1.0..1.0))
        } else {
            let k = actor.knowledge_outputs(&[obs], variant)?;
            let mut g = Graph::new();
            let f = actor.forward(&mut g, &obs_matrix(&[obs]), &k, SampleMode::Stochastic, &mut self.rng)?;
            let a = g.value(f.action);
            core::array::from_fn(|d| a.get(0, d))
        };
        let out = self
            .env
            .step(action)
            .map_err(|e| Error::usage(format!("point env at step {}: {e}", self.env_steps)))?;
        self.env_steps += 1;
        self.episode_return += out.reward;
        self.episode.push(Transition {
            obs,
            action,
            reward: out.reward,
            next_obs: self.env.observe(),
        });
        let mut finished = None;
        if out.done {
            let k = self.learner.config.her_k;
            for t in her_relabel(&self.episode, variant, k, &mut self.rng) {
                self.buffer.push(&t);
            }
            finished = Some(EpisodeStats {
                ret: self.episode_return,
                length: self.episode.len(),
                success: out.success,
            });
            self.episode.clear();
            self.episode_return = 0.0;
            self.env = PointState::reset(&self.env_config, &mut self.rng)?;
        }
        let cfg = &self.learner.config;
        if self.env_steps >= cfg.warmup_steps && self.buffer.len() >= cfg.batch {
            for _ in 0..cfg.updates_per_step {
                let batch = self.buffer.sample(self.learner.config.batch, &mut self.rng)?;
                self.last_stats = Some(sac_update(actor, &mut self.learner, &batch, variant, &mut self.rng)?);
            }
        }
        Ok(finished)
    }
}
