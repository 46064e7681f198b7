//! Scripted end-effector knowledge: carry the object to the goal, move to the object.
//!
//! Both rules are proportional controllers emitting a squashed Gaussian with
//! a fixed spread.

use crate::math;
use crate::point::{distance, PointObservation, PointVariant, GRASP_DISTANCE, POINT_ACTION_DIM};

pub const CONTROL_GAIN: f64 = 5.0;
/// Pre-squash standard deviation of every scripted component.
pub const SCRIPTED_SIGMA: f64 = 0.05;
/// Scripted means are pulled inside `(-1, 1)` before inverting the squash.
pub const MEAN_LIMIT: f64 = 0.999;

/// Grasp radius the rules condition on: always "holding" for reach.
pub fn epsilon(variant: PointVariant) -> f64 {
    match variant {
        PointVariant::Reach => f64::INFINITY,
        PointVariant::PickPlace => GRASP_DISTANCE,
    }
}

fn toward(from: [f64; 3], to: [f64; 3]) -> [f64; 3] {
    core::array::from_fn(|i| (CONTROL_GAIN * (to[i] - from[i])).clamp(-1.0, 1.0))
}

/// Action-space mean of the carry-to-goal rule.
pub fn to_goal_mean(obs: &PointObservation, eps: f64) -> [f64; POINT_ACTION_DIM] {
    let (ee, obj) = (obs.ee(), obs.object());
    let d = if distance(ee, obj) < eps {
        toward(ee, obs.goal())
    } else {
        [0.0; 3]
    };
    [d[0], d[1], d[2], -1.0]
}

/// Action-space mean of the move-to-object rule.
pub fn to_object_mean(obs: &PointObservation, eps: f64) -> [f64; POINT_ACTION_DIM] {
    let (ee, obj) = (obs.ee(), obs.object());
    if distance(ee, obj) >= eps {
        let d = toward(ee, obj);
        [d[0], d[1], d[2], 1.0]
    } else {
        [0.0; 4]
    }
}

/// Pre-squash location and log-scale for an action-space mean.
pub fn squash_params(mean: [f64; POINT_ACTION_DIM]) -> ([f64; POINT_ACTION_DIM], [f64; POINT_ACTION_DIM]) {
    let loc = core::array::from_fn(|i| math::atanh(mean[i].clamp(-MEAN_LIMIT, MEAN_LIMIT)));
    (loc, [math::ln(SCRIPTED_SIGMA); POINT_ACTION_DIM])
}
