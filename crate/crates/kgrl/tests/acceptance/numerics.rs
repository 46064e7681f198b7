//! Gradient, sampling and density checks against independent oracles.

use kgrl_core::actor::{
    squashed_log_density, squashed_mixture, ContinuousActor, DiscreteActor, GridActorSpec, GridKgrlActor,
    PointActorSpec, PointKgrlActor, SampleMode,
};
use kgrl_core::approx::{
    gradient_check, Activation, ConvEncoderSpec, ConvLayerSpec, GradCheckConfig, Graph, ParameterStore, TensorBuf,
};
use kgrl_core::grid::{GridAction, GridObservation, GRID_CHANNELS, VIEW};
use kgrl_core::math;
use kgrl_core::point::PointVariant;
use kgrl_core::rng::seeded;
use rand::Rng;

use crate::{grid_knowledge, grid_states, point_knowledge, point_matrix, point_states, Check};

const INSTANCES: u64 = 20;

fn small_grid_spec() -> GridActorSpec {
    let conv = |filters| ConvLayerSpec {
        filters,
        kernel: 2,
        stride: 1,
    };
    GridActorSpec {
        encoder: ConvEncoderSpec {
            in_h: VIEW,
            in_w: VIEW,
            in_channels: GRID_CHANNELS,
            extra_inputs: 1,
            layers: vec![conv(2), conv(2), conv(2)],
            head_width: 6,
            head_activation: Activation::Tanh,
        },
        d_k: 3,
        critic_hidden: 4,
    }
}

fn small_point_spec() -> PointActorSpec {
    PointActorSpec {
        hidden: vec![8],
        key_hidden: vec![5],
        d_k: 3,
        temperature: 1.0,
    }
}

fn discrete_gradients() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = seeded(1000 + seed);
        let actor = GridKgrlActor::new(small_grid_spec(), grid_knowledge(3), &mut rng).unwrap();
        let obs = grid_states(3, 1000 + seed);
        let x = GridObservation::encode_batch(&obs);
        let k = actor.knowledge_outputs(&obs).unwrap();
        let actions: Vec<usize> = (0..obs.len()).map(|_| rng.random_range(0..GridAction::COUNT)).collect();
        let mut store = actor.store().clone();
        let config = GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        };
        let report = gradient_check(&mut store, config, |g, s: &ParameterStore| {
            let mut a = actor.clone();
            *a.store_mut() = s.clone();
            let f = a.forward(g, &x, &k)?;
            let p = g.gather(f.pmf, &actions)?;
            let lp = g.log(p);
            Ok(g.sum(lp))
        })
        .unwrap();
        if report.still_kinked {
            return Check::fail(format!("instance {seed} sits on a kink"));
        }
        worst = worst.max(report.max_rel_error);
    }
    Check::at_most("discrete log-prob, worst relative error over 20 instances", worst, 1e-4)
}

fn continuous_gradients() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = seeded(2000 + seed);
        let actor = PointKgrlActor::new(small_point_spec(), point_knowledge(3), &mut rng).unwrap();
        let obs = point_states(PointVariant::PickPlace, 3, 2000 + seed);
        let x = point_matrix(&obs);
        let k = actor.knowledge_outputs(&obs, PointVariant::PickPlace).unwrap();
        let mut actions = TensorBuf::matrix(3, 4, (0..12).map(|_| rng.random_range(-0.95..0.95)).collect());
        // one row at a scripted location so the knowledge components carry mass
        for d in 0..4 {
            actions.data_mut()[d] = math::tanh(k.get(0, d)) * 0.999;
        }
        let mut store = actor.store().clone();
        let config = GradCheckConfig {
            seed,
            ..GradCheckConfig::default()
        };
        let report = gradient_check(&mut store, config, |g, s: &ParameterStore| {
            let mut a = actor.clone();
            *a.store_mut() = s.clone();
            let lp = a.log_prob(g, &x, &k, &actions)?;
            Ok(g.sum(lp))
        })
        .unwrap();
        if report.still_kinked {
            return Check::fail(format!("instance {seed} sits on a kink"));
        }
        worst = worst.max(report.max_rel_error);
    }
    Check::at_most(
        "continuous log-prob, worst relative error over 20 instances",
        worst,
        1e-4,
    )
}

fn gumbel_frequencies() -> Check {
    let n = 100_000;
    let logits = [0.3, -1.2, 1.1, 0.0];
    let weights = math::softmax(&logits);
    let mut g = Graph::new();
    let l = g.constant(TensorBuf::matrix(n, 4, (0..n).flat_map(|_| logits).collect()));
    let loc = g.constant(TensorBuf::zeros(&[n, 16]));
    let ls = g.constant(TensorBuf::zeros(&[n, 16]));
    let mix = squashed_mixture(&mut g, Some(l), loc, ls, 1.0, SampleMode::Stochastic, &mut seeded(17)).unwrap();
    let mut counts = [0usize; 4];
    for &c in &mix.chosen {
        counts[c] += 1;
    }
    let mut worst: f64 = 0.0;
    for j in 0..4 {
        let freq = counts[j] as f64 / n as f64;
        let sigma = (weights[j] * (1.0 - weights[j]) / n as f64).sqrt();
        worst = worst.max((freq - weights[j]).abs() / sigma);
    }
    Check::at_most("component frequency deviation in sigmas at 100k draws", worst, 3.0)
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn quadrature() -> Check {
    // components differ only in the first coordinate; the rest share one
    // Gaussian whose squashed density is known in closed form
    let w_logits = [0.4, -0.3, 1.0];
    let mu = [-0.8, 0.2, 1.1];
    let log_sigma = [-0.5f64, 0.3, -1.2];
    let (shared_mu, shared_ls) = (0.1, -0.7f64);
    let weights = math::softmax(&w_logits);
    let gauss = |u: f64, m: f64, ls: f64| {
        let s = ls.exp();
        (-0.5 * ((u - m) / s).powi(2)).exp() / (s * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mixture_u = |u: f64| (0..3).map(|j| weights[j] * gauss(u, mu[j], log_sigma[j])).sum::<f64>();
    let points: [f64; 9] = [-0.97, -0.6, -0.3, -0.1, 0.0, 0.35, 0.6, 0.8, 0.99];
    let rest: [f64; 3] = [0.2, -0.4, 0.05];
    let rows = points.len();
    let (mut loc, mut ls, mut pre) = (Vec::new(), Vec::new(), Vec::new());
    for &a in &points {
        for j in 0..3 {
            loc.extend([mu[j], shared_mu, shared_mu, shared_mu]);
            ls.extend([log_sigma[j], shared_ls, shared_ls, shared_ls]);
        }
        pre.push(a.atanh());
        pre.extend(rest.map(f64::atanh));
    }
    let mut g = Graph::new();
    let l = g.constant(TensorBuf::matrix(rows, 3, (0..rows).flat_map(|_| w_logits).collect()));
    let loc = g.constant(TensorBuf::matrix(rows, 12, loc));
    let ls = g.constant(TensorBuf::matrix(rows, 12, ls));
    let pre = g.constant(TensorBuf::matrix(rows, 4, pre));
    let lp = squashed_log_density(&mut g, Some(l), loc, ls, pre).unwrap();
    let rest_density: f64 = rest
        .iter()
        .map(|&b: &f64| gauss(b.atanh(), shared_mu, shared_ls) / (1.0 - b * b))
        .product();
    let h = 1e-4;
    let mut worst: f64 = 0.0;
    for (r, &a) in points.iter().enumerate() {
        let mass = simpson(mixture_u, (a - h).atanh(), (a + h).atanh(), 200);
        let oracle = (mass / (2.0 * h) * rest_density).ln();
        worst = worst.max((g.value(lp).get(r, 0) - oracle).abs());
    }
    Check::at_most("squashed mixture log-density vs 1-D quadrature", worst, 1e-4)
}

pub fn run() -> Vec<(&'static str, Check)> {
    vec![
        ("discrete gradients", discrete_gradients()),
        ("continuous gradients", continuous_gradients()),
        ("gumbel frequencies", gumbel_frequencies()),
        ("quadrature", quadrature()),
    ]
}
