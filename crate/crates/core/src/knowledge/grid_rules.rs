//! Scripted gridworld knowledge: pick up the key, open the door, reach the goal.

use crate::grid::{Cell, DoorState, GridAction, GridObservation};

/// Probability mass moved off the scripted choice so every action stays possible.
pub const SMOOTHING: f64 = 0.01;

/// `1 - SMOOTHING` split over `chosen`, the remainder split over the other actions.
pub fn smoothed(chosen: &[GridAction]) -> [f64; GridAction::COUNT] {
    let k = chosen.len();
    let mut p = [SMOOTHING / (GridAction::COUNT - k) as f64; GridAction::COUNT];
    for a in chosen {
        p[a.index()] = (1.0 - SMOOTHING) / k as f64;
    }
    p
}

/// Used whenever a rule's target is not in view.
pub fn fallback() -> [f64; GridAction::COUNT] {
    smoothed(&[GridAction::TurnLeft, GridAction::TurnRight, GridAction::Forward])
}

fn nearest(obs: &GridObservation, pred: impl Fn(Cell) -> bool) -> Option<(usize, i64)> {
    obs.find(pred)
        .into_iter()
        .filter(|&p| p != (0, 0))
        .min_by_key(|&(a, l)| (a as i64 + l.abs(), l.abs(), l))
}

fn turn_toward(lateral: i64) -> GridAction {
    if lateral < 0 {
        GridAction::TurnLeft
    } else {
        GridAction::TurnRight
    }
}

/// One step toward a visible cell at `(ahead, lateral)`.
///
/// Turns when the target is further to the side than ahead, otherwise walks
/// forward (ties walk). A blocked front cell turns toward the target's side;
/// a blocked straight line has no scripted answer.
pub fn go_toward(obs: &GridObservation, (ahead, lateral): (usize, i64)) -> Option<GridAction> {
    if lateral.unsigned_abs() as usize > ahead {
        return Some(turn_toward(lateral));
    }
    if obs.get(1, 0).is_some_and(Cell::is_passable) {
        Some(GridAction::Forward)
    } else if lateral != 0 {
        Some(turn_toward(lateral))
    } else {
        None
    }
}

fn decide(action: Option<GridAction>) -> [f64; GridAction::COUNT] {
    match action {
        Some(a) => smoothed(&[a]),
        None => fallback(),
    }
}

pub fn pickup_key(obs: &GridObservation) -> [f64; GridAction::COUNT] {
    decide(nearest(obs, |c| matches!(c, Cell::Key { .. })).and_then(|t| {
        if t == (1, 0) {
            Some(GridAction::Pickup)
        } else {
            go_toward(obs, t)
        }
    }))
}

pub fn open_door(obs: &GridObservation) -> [f64; GridAction::COUNT] {
    decide(nearest(obs, |c| matches!(c, Cell::Door { .. })).and_then(|t| {
        if t == (1, 0) {
            match obs.get(1, 0) {
                Some(Cell::Door {
                    state: DoorState::Open, ..
                }) => Some(GridAction::Forward),
                _ => Some(GridAction::Toggle),
            }
        } else {
            go_toward(obs, t)
        }
    }))
}

pub fn reach_goal(obs: &GridObservation) -> [f64; GridAction::COUNT] {
    decide(nearest(obs, |c| c == Cell::Goal).and_then(|t| go_toward(obs, t)))
}
