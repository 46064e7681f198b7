use alloc::vec::Vec;

use rand::Rng;

use crate::point::{goal_reward, PointObservation, PointVariant, POINT_ACTION_DIM, POINT_OBS_DIM};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub obs: PointObservation,
    pub action: [f64; POINT_ACTION_DIM],
    pub reward: f64,
    pub next_obs: PointObservation,
}

const RECORD: usize = 2 * POINT_OBS_DIM + POINT_ACTION_DIM + 1;

/// Fixed-capacity ring of transitions, stored as `f32`.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<f32>,
    len: usize,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("replay capacity must be at least 1"));
        }
        Ok(Self {
            capacity,
            data: Vec::new(),
            len: 0,
            head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Appends, overwriting the oldest entry once full.
    pub fn push(&mut self, t: &Transition) {
        let record = t
            .obs
            .0
            .iter()
            .chain(&t.action)
            .chain(core::iter::once(&t.reward))
            .chain(&t.next_obs.0)
            .map(|&x| x as f32);
        if self.len < self.capacity {
            self.data.extend(record);
            self.len += 1;
        } else {
            let slot = &mut self.data[self.head * RECORD..(self.head + 1) * RECORD];
            for (d, x) in slot.iter_mut().zip(record) {
                *d = x;
            }
        }
        self.head = (self.head + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> Transition {
        let r = &self.data[i * RECORD..(i + 1) * RECORD];
        let mut obs = [0.0; POINT_OBS_DIM];
        let mut next = [0.0; POINT_OBS_DIM];
        let mut action = [0.0; POINT_ACTION_DIM];
        for (o, &x) in obs.iter_mut().zip(r) {
            *o = x as f64;
        }
        for (o, &x) in action.iter_mut().zip(&r[POINT_OBS_DIM..]) {
            *o = x as f64;
        }
        let reward = r[POINT_OBS_DIM + POINT_ACTION_DIM] as f64;
        for (o, &x) in next.iter_mut().zip(&r[POINT_OBS_DIM + POINT_ACTION_DIM + 1..]) {
            *o = x as f64;
        }
        Transition {
            obs: PointObservation(obs),
            action,
            reward,
            next_obs: PointObservation(next),
        }
    }

    /// Indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<usize> {
        (0..batch).map(|_| rng.random_range(0..self.len)).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.len < batch || batch == 0 {
            return Err(Error::usage(alloc::format!(
                "cannot draw {batch} transitions from a buffer holding {}",
                self.len
            )));
        }
        Ok(self
            .sample_indices(batch, rng)
            .into_iter()
            .map(|i| self.get(i))
            .collect())
    }
}

/// The episode's transitions followed by `k` copies of each, relabeled with
/// goals achieved later in the same episode ("future" strategy). Rewards of
/// the copies come from the environment's goal predicate.
pub fn her_relabel<R: Rng + ?Sized>(
    episode: &[Transition],
    variant: PointVariant,
    k: usize,
    rng: &mut R,
) -> Vec<Transition> {
    let mut out = episode.to_vec();
    for (t, tr) in episode.iter().enumerate() {
        for _ in 0..k {
            let j = rng.random_range(t..episode.len());
            let goal = episode[j].next_obs.achieved(variant);
            out.push(Transition {
                obs: tr.obs.with_goal(goal),
                action: tr.action,
                reward: goal_reward(tr.next_obs.achieved(variant), goal),
                next_obs: tr.next_obs.with_goal(goal),
            });
        }
    }
    out
}
