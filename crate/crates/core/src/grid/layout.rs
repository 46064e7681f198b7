use alloc::vec::Vec;

use rand::Rng;

use super::{Cell, Color, Direction, DoorState, GridConfig, GridState, Variant};
use crate::{Error, Result};

pub(super) fn generate<R: Rng + ?Sized>(config: &GridConfig, rng: &mut R) -> Result<GridState> {
    let mut s = GridState::blank(config);
    let (w, h) = (config.width, config.height);
    match config.variant {
        Variant::Empty => {
            s.set_cell(w - 2, h - 2, Cell::Goal);
        }
        Variant::EmptyRandom => {
            let free: Vec<_> = interior(w, h).filter(|&p| p != (1, 1)).collect();
            let (x, y) = free[rng.random_range(0..free.len())];
            s.set_cell(x, y, Cell::Goal);
        }
        Variant::Doorkey | Variant::Unlock => {
            if w < 5 || h < 5 {
                return Err(Error::Layout(alloc::format!("{w}x{h} is too small for a door layout")));
            }
            if config.variant == Variant::Doorkey {
                s.set_cell(w - 2, h - 2, Cell::Goal);
            }
            let split = rng.random_range(2..=w - 3);
            for y in 0..h {
                s.set_cell(split, y, Cell::Wall);
            }
            let door_y = rng.random_range(1..=h - 3);
            s.set_cell(
                split,
                door_y,
                Cell::Door {
                    color: Color::Yellow,
                    state: DoorState::Locked,
                },
            );
            let left: Vec<_> = interior(w, h).filter(|&(x, _)| x < split).collect();
            let a = rng.random_range(0..left.len());
            s.agent = left[a];
            s.dir = Direction::ALL[rng.random_range(0..4)];
            let mut k = rng.random_range(0..left.len() - 1);
            if k >= a {
                k += 1;
            }
            let (kx, ky) = left[k];
            s.set_cell(kx, ky, Cell::Key { color: Color::Yellow });
        }
    }
    Ok(s)
}

fn interior(w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..h - 1).flat_map(move |y| (1..w - 1).map(move |x| (x, y)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridState;

    #[test]
    fn random_goal_is_uniform_over_free_interior() {
        let cfg = GridConfig::preset("empty-random-5x5").unwrap();
        let n = 10_000;
        let mut counts = alloc::collections::BTreeMap::new();
        for seed in 0..n {
            let s = GridState::reset(&cfg, seed).unwrap();
            assert_eq!(s.agent, (1, 1));
            let goals: Vec<_> = s.cells().filter(|(_, c)| *c == Cell::Goal).map(|(p, _)| p).collect();
            assert_eq!(goals.len(), 1);
            *counts.entry(goals[0]).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 8);
        assert!(!counts.contains_key(&(1, 1)));
        let p = 1.0 / 8.0;
        let expect = n as f64 * p;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for (cell, c) in counts {
            assert!((c as f64 - expect).abs() < 3.0 * sigma, "{cell:?}: {c}");
        }
    }

    #[test]
    fn doorkey_has_one_door_key_goal_on_correct_sides() {
        let cfg = GridConfig::preset("doorkey-5x5").unwrap();
        for seed in 0..200 {
            let s = GridState::reset(&cfg, seed).unwrap();
            let doors: Vec<_> = s.cells().filter(|(_, c)| matches!(c, Cell::Door { .. })).collect();
            let keys: Vec<_> = s.cells().filter(|(_, c)| matches!(c, Cell::Key { .. })).collect();
            let goals: Vec<_> = s.cells().filter(|(_, c)| *c == Cell::Goal).collect();
            assert_eq!(doors.len(), 1);
            assert!(matches!(
                doors[0].1,
                Cell::Door {
                    state: DoorState::Locked,
                    ..
                }
            ));
            assert_eq!(keys.len(), 1);
            assert_eq!(goals.len(), 1);
            let split = doors[0].0 .0;
            assert!(keys[0].0 .0 < split && s.agent.0 < split);
            assert!(goals[0].0 .0 > split);
            assert_ne!(keys[0].0, s.agent);
        }
    }

    #[test]
    fn unlock_has_no_goal() {
        let cfg = GridConfig::preset("unlock").unwrap();
        let s = GridState::reset(&cfg, 3).unwrap();
        assert!(s.cells().all(|(_, c)| c != Cell::Goal));
        assert_eq!(s.key_count(), 1);
    }
}
