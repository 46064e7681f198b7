use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::gae::{gae, normalize};
use super::rollout::{collect_grid_rollout, EpisodeStats, GridEnvPool, GridRollout};
use super::TraceSummary;
use crate::actor::DiscreteActor;
use crate::approx::{clip_grad_norm, Adam, AdamConfig, Graph, TensorBuf};
use crate::grid::{GridConfig, GridObservation};
use crate::math;
use crate::rng::{seeded, RunRng};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub n_envs: usize,
    /// Steps per environment per update.
    pub n_steps: usize,
    pub epochs: usize,
    pub minibatch: usize,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    pub adam_eps: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            n_envs: 16,
            n_steps: 128,
            epochs: 4,
            minibatch: 256,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            lr: 1e-3,
            entropy_coef: 0.01,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            adam_eps: 1e-8,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::config(format!("ppo: {msg}")));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad("lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0) {
            return bad("clip must be positive");
        }
        if self.n_envs == 0 || self.n_steps == 0 || self.epochs == 0 || self.minibatch == 0 {
            return bad("n_envs, n_steps, epochs and minibatch must be at least 1");
        }
        if !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("lr and max_grad_norm must be positive");
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.n_envs * self.n_steps
    }
}

/// Averages over the minibatches of one update.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub grad_norm: f64,
    /// Gradient norm of the knowledge-key table before clipping (0 without keys).
    pub key_grad_norm: f64,
}

/// Clipped-surrogate update over a collected batch.
pub fn ppo_update<A: DiscreteActor + ?Sized>(
    actor: &mut A,
    rollout: &GridRollout,
    config: &PpoConfig,
    rng: &mut RunRng,
) -> Result<PpoStats> {
    config.validate()?;
    let (mut adv, returns) = gae(
        &rollout.rewards,
        &rollout.values,
        &rollout.dones,
        &rollout.last_values,
        rollout.n_envs,
        config.gamma,
        config.lambda,
    );
    normalize(&mut adv);
    let adam = Adam::new(AdamConfig {
        eps: config.adam_eps,
        ..AdamConfig::default()
    });
    let key_id = actor.store().id("kg.keys").ok();
    let mut order: Vec<usize> = (0..rollout.len()).collect();
    let mut stats = PpoStats::default();
    let mut batches = 0.0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for idx in order.chunks(config.minibatch) {
            let b = idx.len();
            let obs: Vec<GridObservation> = idx.iter().map(|&i| rollout.obs[i].clone()).collect();
            let kc = rollout.knowledge.cols();
            let mut k = Vec::with_capacity(b * kc);
            for &i in idx {
                k.extend_from_slice(rollout.knowledge.row_slice(i));
            }
            let column = |f: &dyn Fn(usize) -> f64| TensorBuf::matrix(b, 1, idx.iter().map(|&i| f(i)).collect());
            let actions: Vec<usize> = idx.iter().map(|&i| rollout.actions[i]).collect();

            let mut g = Graph::new();
            let f = actor.forward(
                &mut g,
                &GridObservation::encode_batch(&obs),
                &TensorBuf::matrix(b, kc, k),
            )?;
            let p = g.gather(f.pmf, &actions)?;
            let logp = g.log(p);
            let old = g.constant(column(&|i| rollout.log_probs[i]));
            let a = g.constant(column(&|i| adv[i]));
            let diff = g.sub(logp, old)?;
            let ratio = g.exp(diff);
            let s1 = g.mul(ratio, a)?;
            let clipped = g.clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
            let s2 = g.mul(clipped, a)?;
            let surr = g.min(s1, s2)?;
            let surr = g.mean(surr);
            let policy_loss = g.neg(surr);

            let v_old = g.constant(column(&|i| rollout.values[i]));
            let ret = g.constant(column(&|i| returns[i]));
            let dv = g.sub(f.value, v_old)?;
            let dv = g.clamp(dv, -config.clip, config.clip);
            let v_clip = g.add(v_old, dv)?;
            let e1 = g.sub(f.value, ret)?;
            let e1 = g.square(e1);
            let e2 = g.sub(v_clip, ret)?;
            let e2 = g.square(e2);
            let vl = g.max(e1, e2)?;
            let value_loss = g.mean(vl);

            let safe = g.clamp(f.pmf, 1e-12, 1.0);
            let logs = g.log(safe);
            let plogp = g.mul(f.pmf, logs)?;
            let h = g.sum_rows(plogp);
            let h = g.mean(h);
            let entropy = g.neg(h);

            let vterm = g.scale(value_loss, config.value_coef);
            let eterm = g.scale(entropy, -config.entropy_coef);
            let loss = g.add(policy_loss, vterm)?;
            let loss = g.add(loss, eterm)?;
            let lv = g.scalar(loss);
            if !lv.is_finite() {
                return Err(Error::NonFinite {
                    name: "ppo loss".into(),
                    detail: format!(
                        "policy {}, value {}, entropy {} on a minibatch of {b}",
                        g.scalar(policy_loss),
                        g.scalar(value_loss),
                        g.scalar(entropy)
                    ),
                });
            }

            let grads = g.backward(loss)?;
            let store = actor.store_mut();
            store.accumulate(&grads)?;
            actor.mask_gradients();
            if let Some(id) = key_id {
                stats.key_grad_norm += math::norm(&actor.store().get(id).grad);
            }
            stats.grad_norm += clip_grad_norm(actor.store_mut(), config.max_grad_norm);
            adam.step(actor.store_mut(), config.lr)?;

            let lp = g.value(logp);
            let mut kl = 0.0;
            let mut clipped_n = 0.0;
            for (j, &i) in idx.iter().enumerate() {
                let d = lp.get(j, 0) - rollout.log_probs[i];
                kl += -d;
                if (math::exp(d) - 1.0).abs() > config.clip {
                    clipped_n += 1.0;
                }
            }
            stats.policy_loss += g.scalar(policy_loss);
            stats.value_loss += g.scalar(value_loss);
            stats.entropy += g.scalar(entropy);
            stats.approx_kl += kl / b as f64;
            stats.clip_fraction += clipped_n / b as f64;
            batches += 1.0;
        }
    }
    for x in [
        &mut stats.policy_loss,
        &mut stats.value_loss,
        &mut stats.entropy,
        &mut stats.approx_kl,
        &mut stats.clip_fraction,
        &mut stats.grad_norm,
        &mut stats.key_grad_norm,
    ] {
        *x /= batches;
    }
    Ok(stats)
}

/// Result of one collect-and-update cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpoIteration {
    /// Environment steps taken so far, including this cycle.
    pub env_steps: u64,
    pub episodes: Vec<EpisodeStats>,
    pub stats: PpoStats,
    pub trace: TraceSummary,
}

/// Owns the environment pool and randomness of one PPO run.
#[derive(Debug, Clone)]
pub struct PpoTrainer {
    config: PpoConfig,
    pool: GridEnvPool,
    rng: RunRng,
    env_steps: u64,
}

impl PpoTrainer {
    pub fn new(config: PpoConfig, env: GridConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(seed);
        let pool = GridEnvPool::new(env, config.n_envs, rand::Rng::random(&mut rng))?;
        Ok(Self {
            config,
            pool,
            rng,
            env_steps: 0,
        })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.config
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn iterate<A: DiscreteActor + ?Sized>(&mut self, actor: &mut A) -> Result<PpoIteration> {
        let rollout = collect_grid_rollout(&mut self.pool, actor, self.config.n_steps, &mut self.rng)?;
        self.env_steps += rollout.len() as u64;
        let stats = ppo_update(actor, &rollout, &self.config, &mut self.rng)?;
        Ok(PpoIteration {
            env_steps: self.env_steps,
            trace: TraceSummary::of(&rollout.traces),
            episodes: rollout.episodes,
            stats,
        })
    }
}
