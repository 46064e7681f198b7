//! Kinematic end-effector environment with a reach task and a pick-and-place
//! task, sparse `-1 / 0` rewards and a goal-range scale.
//!
//! Units are meters; one step moves the end effector by at most
//! [`ACTION_GAIN`] per axis.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const ACTION_GAIN: f64 = 0.05;
pub const SUCCESS_DISTANCE: f64 = 0.05;
pub const GRASP_DISTANCE: f64 = 0.03;
pub const MAX_GAP: f64 = 0.1;
/// Half-width of the goal box (and of the object's table region) at scale 1.
pub const BASE_GOAL_HALF_WIDTH: f64 = 0.15;
/// Highest in-air goal above the table at scale 1.
pub const BASE_GOAL_HEIGHT: f64 = 0.3;
pub const POINT_OBS_DIM: usize = 25;
pub const POINT_ACTION_DIM: usize = 4;
pub const POINT_OBS_LAYOUT: &str = "point-25-v1";

/// Slot offsets inside a [`PointObservation`].
pub mod slots {
    pub const EE_POS: usize = 0;
    pub const EE_VEL: usize = 3;
    pub const FINGER_POS: usize = 6;
    pub const FINGER_VEL: usize = 8;
    pub const OBJ_POS: usize = 10;
    pub const OBJ_ROT: usize = 13;
    pub const OBJ_VEL: usize = 16;
    pub const OBJ_REL: usize = 19;
    pub const GOAL: usize = 22;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointVariant {
    Reach,
    PickPlace,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workspace {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Default for Workspace {
    fn default() -> Self {
        Self {
            lo: [-0.3, -0.3, 0.0],
            hi: [0.3, 0.3, 0.4],
        }
    }
}

impl Workspace {
    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
            0.5 * (self.lo[2] + self.hi[2]),
        ]
    }

    pub fn clip(&self, p: [f64; 3]) -> [f64; 3] {
        core::array::from_fn(|i| p[i].clamp(self.lo[i], self.hi[i]))
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.lo[i] && p[i] <= self.hi[i])
    }
}

fn default_scale() -> f64 {
    1.0
}

fn default_max_steps() -> usize {
    50
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointConfig {
    pub variant: PointVariant,
    #[serde(default = "default_scale")]
    pub goal_range_scale: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default)]
    pub workspace: Workspace,
}

impl PointConfig {
    pub fn new(variant: PointVariant) -> Self {
        Self {
            variant,
            goal_range_scale: 1.0,
            max_steps: default_max_steps(),
            workspace: Workspace::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.goal_range_scale > 0.0 && self.goal_range_scale <= 1.0) {
            return Err(Error::config(alloc::format!(
                "goal_range_scale must lie in (0, 1], got {}",
                self.goal_range_scale
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::config("max_steps must be at least 1"));
        }
        let w = &self.workspace;
        let reach = BASE_GOAL_HALF_WIDTH;
        let c = w.center();
        let fits = (0..3).all(|i| w.lo[i] < w.hi[i])
            && w.lo[2] == 0.0
            && (0..2).all(|i| c[i] - reach >= w.lo[i] && c[i] + reach <= w.hi[i])
            && c[2] - reach >= w.lo[2]
            && c[2] + reach <= w.hi[2]
            && BASE_GOAL_HEIGHT <= w.hi[2];
        if !fits {
            return Err(Error::config(
                "workspace must sit on the table plane z = 0 and contain the goal boxes",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointState {
    pub variant: PointVariant,
    pub workspace: Workspace,
    pub max_steps: usize,
    pub p_ee: [f64; 3],
    pub v_ee: [f64; 3],
    pub gripper_gap: f64,
    pub v_gap: f64,
    pub p_obj: [f64; 3],
    pub v_obj: [f64; 3],
    pub object_held: bool,
    pub p_goal: [f64; 3],
    pub step: usize,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointStep {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Flat observation; see [`slots`] for the layout. Object slots are zero in reach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointObservation(#[serde(with = "obs_serde")] pub [f64; POINT_OBS_DIM]);

mod obs_serde {
    use super::POINT_OBS_DIM;
    use alloc::vec::Vec;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64; POINT_OBS_DIM], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[f64; POINT_OBS_DIM], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        v.try_into()
            .map_err(|v: Vec<f64>| serde::de::Error::invalid_length(v.len(), &"25 observation entries"))
    }
}

fn vec3(s: &[f64]) -> [f64; 3] {
    [s[0], s[1], s[2]]
}

pub fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    crate::math::sqrt((0..3).map(|i| (a[i] - b[i]) * (a[i] - b[i])).sum())
}

/// The sparse reward as a function of achieved and desired goal, shared by
/// the environment and hindsight relabeling.
pub fn goal_reward(achieved: [f64; 3], goal: [f64; 3]) -> f64 {
    if distance(achieved, goal) < SUCCESS_DISTANCE {
        0.0
    } else {
        -1.0
    }
}

impl PointObservation {
    pub fn ee(&self) -> [f64; 3] {
        vec3(&self.0[slots::EE_POS..])
    }

    pub fn object(&self) -> [f64; 3] {
        vec3(&self.0[slots::OBJ_POS..])
    }

    pub fn goal(&self) -> [f64; 3] {
        vec3(&self.0[slots::GOAL..])
    }

    pub fn with_goal(mut self, goal: [f64; 3]) -> Self {
        self.0[slots::GOAL..slots::GOAL + 3].copy_from_slice(&goal);
        self
    }

    /// Achieved goal: the end effector in reach, the object in pick-and-place.
    pub fn achieved(&self, variant: PointVariant) -> [f64; 3] {
        match variant {
            PointVariant::Reach => self.ee(),
            PointVariant::PickPlace => self.object(),
        }
    }

    /// Zeroes every object slot, turning a pick-and-place observation into
    /// the reach layout.
    pub fn without_object(mut self) -> Self {
        self.0[slots::OBJ_POS..slots::GOAL].fill(0.0);
        self
    }
}

impl PointState {
    pub fn reset<R: rand::Rng + ?Sized>(config: &PointConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ws = config.workspace;
        let c = ws.center();
        let start = [c[0], c[1], 0.2f64.min(ws.hi[2])];
        let half = BASE_GOAL_HALF_WIDTH * config.goal_range_scale;
        let mut u = |lo: f64, hi: f64| if hi > lo { rng.random_range(lo..hi) } else { lo };
        let (p_obj, p_goal) = match config.variant {
            PointVariant::Reach => {
                let g = core::array::from_fn(|i| start[i] + u(-half, half));
                ([0.0; 3], g)
            }
            PointVariant::PickPlace => {
                let o = [
                    c[0] + u(-BASE_GOAL_HALF_WIDTH, BASE_GOAL_HALF_WIDTH),
                    c[1] + u(-BASE_GOAL_HALF_WIDTH, BASE_GOAL_HALF_WIDTH),
                    ws.lo[2],
                ];
                let gx = c[0] + u(-half, half);
                let gy = c[1] + u(-half, half);
                let in_air = u(0.0, 1.0) < 0.5;
                let gz = if in_air {
                    ws.lo[2] + BASE_GOAL_HEIGHT * config.goal_range_scale * (1.0 - u(0.0, 1.0))
                } else {
                    ws.lo[2]
                };
                (o, [gx, gy, gz])
            }
        };
        Ok(Self {
            variant: config.variant,
            workspace: ws,
            max_steps: config.max_steps,
            p_ee: start,
            v_ee: [0.0; 3],
            gripper_gap: MAX_GAP,
            v_gap: 0.0,
            p_obj,
            v_obj: [0.0; 3],
            object_held: false,
            p_goal,
            step: 0,
            done: false,
        })
    }

    pub fn achieved(&self) -> [f64; 3] {
        match self.variant {
            PointVariant::Reach => self.p_ee,
            PointVariant::PickPlace => self.p_obj,
        }
    }

    pub fn is_success(&self) -> bool {
        goal_reward(self.achieved(), self.p_goal) == 0.0
    }

    pub fn step(&mut self, action: [f64; POINT_ACTION_DIM]) -> Result<PointStep> {
        if self.done {
            return Err(Error::usage("step called on a finished point episode"));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::usage(alloc::format!("non-finite action {action:?}")));
        }
        let a: [f64; 4] = core::array::from_fn(|i| action[i].clamp(-1.0, 1.0));
        self.step += 1;
        let grip = a[3];
        if self.variant == PointVariant::PickPlace {
            if grip < 0.0 && distance(self.p_ee, self.p_obj) < GRASP_DISTANCE {
                self.object_held = true;
            } else if grip > 0.0 {
                self.object_held = false;
            }
        }
        let prev = self.p_ee;
        self.p_ee = self
            .workspace
            .clip(core::array::from_fn(|i| prev[i] + ACTION_GAIN * a[i]));
        self.v_ee = core::array::from_fn(|i| self.p_ee[i] - prev[i]);
        let gap = (self.gripper_gap + ACTION_GAIN * grip).clamp(0.0, MAX_GAP);
        self.v_gap = gap - self.gripper_gap;
        self.gripper_gap = gap;
        if self.variant == PointVariant::PickPlace {
            let prev_obj = self.p_obj;
            if self.object_held {
                self.p_obj = self.p_ee;
            } else {
                // unsupported objects rest on the table
                self.p_obj[2] = self.workspace.lo[2];
            }
            self.v_obj = core::array::from_fn(|i| self.p_obj[i] - prev_obj[i]);
        }
        let success = self.is_success();
        self.done = success || self.step >= self.max_steps;
        Ok(PointStep {
            reward: if success { 0.0 } else { -1.0 },
            done: self.done,
            success,
        })
    }

    pub fn observe(&self) -> PointObservation {
        use slots::*;
        let mut o = [0.0; POINT_OBS_DIM];
        o[EE_POS..EE_POS + 3].copy_from_slice(&self.p_ee);
        o[EE_VEL..EE_VEL + 3].copy_from_slice(&self.v_ee);
        o[FINGER_POS] = 0.5 * self.gripper_gap;
        o[FINGER_POS + 1] = 0.5 * self.gripper_gap;
        o[FINGER_VEL] = 0.5 * self.v_gap;
        o[FINGER_VEL + 1] = 0.5 * self.v_gap;
        if self.variant == PointVariant::PickPlace {
            o[OBJ_POS..OBJ_POS + 3].copy_from_slice(&self.p_obj);
            o[OBJ_VEL..OBJ_VEL + 3].copy_from_slice(&self.v_obj);
            for i in 0..3 {
                o[OBJ_REL + i] = self.p_obj[i] - self.p_ee[i];
            }
        }
        o[GOAL..GOAL + 3].copy_from_slice(&self.p_goal);
        PointObservation(o)
    }
}
