use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{Graph, NodeId, ParameterStore};
use crate::rng::seeded;
use crate::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Relu inputs closer than this to zero count as sitting on a kink.
    pub kink_margin: f64,
    /// How many times a kinked point is perturbed before giving up.
    pub max_retries: usize,
    /// Uniform jitter magnitude applied to all parameters on a retry.
    pub jitter: f64,
    /// Entries are compared against at least this fraction of the largest
    /// analytic gradient magnitude, below which central differences are
    /// dominated by rounding in the loss.
    pub scale_floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            kink_margin: 1e-4,
            max_retries: 8,
            jitter: 1e-2,
            scale_floor: 1e-6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `max |analytic - numeric| / max(|analytic|, |numeric|, floor)` over all entries.
    pub max_rel_error: f64,
    pub worst_param: String,
    /// Analytic and numeric derivative at the worst entry.
    pub worst_pair: (f64, f64),
    /// Whether the original point sat on a relu kink.
    pub kink_flagged: bool,
    /// Number of perturbations applied before a smooth point was found.
    pub retries: usize,
    /// Whether the final point still sat on a kink (error is then unreliable).
    pub still_kinked: bool,
}

fn eval(
    store: &ParameterStore,
    loss_fn: &impl Fn(&mut Graph, &ParameterStore) -> Result<NodeId>,
) -> Result<(Graph, NodeId)> {
    let mut g = Graph::new();
    let l = loss_fn(&mut g, store)?;
    Ok((g, l))
}

/// Compares reverse-mode gradients of `loss_fn` against central finite
/// differences for every trainable entry of `store`.
///
/// When the loss graph sits on a relu kink the check is flagged, all
/// parameters are jittered and the check repeats, so the returned error
/// reflects a differentiable point. `store` is left at the final point.
pub fn gradient_check(
    store: &mut ParameterStore,
    config: GradCheckConfig,
    loss_fn: impl Fn(&mut Graph, &ParameterStore) -> Result<NodeId>,
) -> Result<GradCheckReport> {
    let mut rng = seeded(config.seed);
    let mut kink_flagged = false;
    let mut retries = 0;
    let (graph, loss) = loop {
        let (g, l) = eval(store, &loss_fn)?;
        if g.relu_margin() >= config.kink_margin || retries >= config.max_retries {
            break (g, l);
        }
        kink_flagged = true;
        retries += 1;
        for p in store.iter_mut() {
            for x in p.value.data_mut() {
                *x += rng.random_range(-config.jitter..config.jitter);
            }
        }
    };
    let still_kinked = graph.relu_margin() < config.kink_margin;
    let grads = graph.backward(loss)?;
    let mut analytic: Vec<(super::ParamId, Vec<f64>)> = Vec::new();
    for (_, id, g) in grads.param_grads() {
        analytic.push((id, g.to_vec()));
    }
    let ids: Vec<_> = store.iter().filter(|(_, p)| !p.frozen).map(|(id, _)| id).collect();
    let largest = analytic
        .iter()
        .flat_map(|(_, g)| g.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = (config.scale_floor * largest).max(1e-8);
    let mut worst = (0.0, String::new(), (0.0, 0.0));
    for id in ids {
        let an = analytic
            .iter()
            .find(|(a, _)| *a == id)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| alloc::vec![0.0; store.value(id).len()]);
        for i in 0..an.len() {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + config.step;
            let (g, l) = eval(store, &loss_fn)?;
            let fp = g.scalar(l);
            store.value_mut(id).data_mut()[i] = orig - config.step;
            let (g, l) = eval(store, &loss_fn)?;
            let fm = g.scalar(l);
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * config.step);
            let denom = an[i].abs().max(numeric.abs()).max(floor);
            let err = (an[i] - numeric).abs() / denom;
            if err > worst.0 || !err.is_finite() {
                worst = (err, store.get(id).name.clone(), (an[i], numeric));
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_param: worst.1,
        worst_pair: worst.2,
        kink_flagged,
        retries,
        still_kinked,
    })
}
