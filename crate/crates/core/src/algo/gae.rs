use alloc::vec;
use alloc::vec::Vec;

use crate::math;

/// Generalized advantage estimates and value targets for a step-major batch
/// of `n_envs` environments. `dones[i]` cuts bootstrapping after step `i`;
/// `last_values` bootstrap the final step of each environment.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_values: &[f64],
    n_envs: usize,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let len = rewards.len();
    let steps = len / n_envs;
    let mut adv = vec![0.0; len];
    for e in 0..n_envs {
        let mut next_adv = 0.0;
        let mut next_value = last_values[e];
        for t in (0..steps).rev() {
            let i = t * n_envs + e;
            let live = if dones[i] { 0.0 } else { 1.0 };
            let delta = rewards[i] + gamma * next_value * live - values[i];
            next_adv = delta + gamma * lambda * live * next_adv;
            adv[i] = next_adv;
            next_value = values[i];
        }
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts and scales to mean 0, standard deviation 1 (population form).
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let mean = math::mean(xs);
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / xs.len() as f64;
    let std = math::sqrt(var) + 1e-8;
    for x in xs {
        *x = (*x - mean) / std;
    }
}
