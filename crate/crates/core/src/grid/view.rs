use alloc::vec;
use alloc::vec::Vec;

use super::{Cell, DoorState, GridState};
use crate::approx::TensorBuf;

/// Side length of the egocentric view.
pub const VIEW: usize = 5;
/// One-hot channels per view cell: 6 object kinds, 6 colors, 3 door states.
pub const GRID_CHANNELS: usize = 15;
/// Flattened observation length: the view image plus the carrying flag.
pub const GRID_OBS_DIM: usize = VIEW * VIEW * GRID_CHANNELS + 1;
/// Tag stored in knowledge packs; bump whenever the encoding changes.
pub const GRID_OBS_LAYOUT: &str = "grid-ego5-onehot15-carry-v1";

const HALF: i64 = (VIEW / 2) as i64;

/// What the agent sees: cells indexed by `(ahead, lateral)` where `ahead`
/// counts rows in front of the agent (0 is the agent's own row) and
/// `lateral` runs from -2 (left) to 2 (right). `None` is unseen.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridObservation {
    cells: [[Option<Cell>; VIEW]; VIEW],
    pub carrying: bool,
}

impl GridObservation {
    pub fn get(&self, ahead: usize, lateral: i64) -> Option<Cell> {
        self.cells[ahead][(lateral + HALF) as usize]
    }

    /// Visible cells matching `pred`, nearest rows first.
    pub fn find(&self, pred: impl Fn(Cell) -> bool) -> Vec<(usize, i64)> {
        let mut out = Vec::new();
        for a in 0..VIEW {
            for l in -HALF..=HALF {
                if self.get(a, l).is_some_and(&pred) {
                    out.push((a, l));
                }
            }
        }
        out
    }

    /// Writes the HWC one-hot image (farthest row first, left column first)
    /// followed by the carrying flag.
    pub fn encode_into(&self, out: &mut [f64]) {
        assert_eq!(out.len(), GRID_OBS_DIM);
        out.fill(0.0);
        for a in 0..VIEW {
            for l in -HALF..=HALF {
                let r = VIEW - 1 - a;
                let c = (l + HALF) as usize;
                let base = (r * VIEW + c) * GRID_CHANNELS;
                let cell = self.get(a, l);
                let kind = match cell {
                    None => 0,
                    Some(Cell::Empty) => 1,
                    Some(Cell::Wall) => 2,
                    Some(Cell::Door { .. }) => 3,
                    Some(Cell::Key { .. }) => 4,
                    Some(Cell::Goal) => 5,
                };
                out[base + kind] = 1.0;
                if let Some(color) = cell.and_then(Cell::color) {
                    out[base + 6 + color.index()] = 1.0;
                }
                if let Some(Cell::Door { state, .. }) = cell {
                    let s = match state {
                        DoorState::Open => 0,
                        DoorState::Closed => 1,
                        DoorState::Locked => 2,
                    };
                    out[base + 12 + s] = 1.0;
                }
            }
        }
        out[GRID_OBS_DIM - 1] = if self.carrying { 1.0 } else { 0.0 };
    }

    /// `batch x GRID_OBS_DIM` matrix of encoded observations.
    pub fn encode_batch(obs: &[GridObservation]) -> TensorBuf {
        let mut data = vec![0.0; obs.len() * GRID_OBS_DIM];
        for (o, row) in obs.iter().zip(data.chunks_exact_mut(GRID_OBS_DIM)) {
            o.encode_into(row);
        }
        TensorBuf::matrix(obs.len(), GRID_OBS_DIM, data)
    }

    pub fn encode(&self) -> Vec<f64> {
        let mut v = vec![0.0; GRID_OBS_DIM];
        self.encode_into(&mut v);
        v
    }
}

pub(super) fn observe(s: &GridState) -> GridObservation {
    let (fx, fy) = s.dir.forward();
    let (rx, ry) = s.dir.right();
    let mut world = [[None; VIEW]; VIEW];
    let mut opaque = [[true; VIEW]; VIEW];
    for a in 0..VIEW {
        for l in -HALF..=HALF {
            let x = s.agent.0 as i64 + a as i64 * fx + l * rx;
            let y = s.agent.1 as i64 + a as i64 * fy + l * ry;
            let cell = s.cell_at(x, y);
            let c = (l + HALF) as usize;
            world[a][c] = cell;
            opaque[a][c] = cell.is_none_or(Cell::is_opaque);
        }
    }
    let seen = visibility(&opaque);
    let mut cells = [[None; VIEW]; VIEW];
    for a in 0..VIEW {
        for c in 0..VIEW {
            if seen[a][c] {
                cells[a][c] = world[a][c];
            }
        }
    }
    GridObservation {
        cells,
        carrying: s.carrying.is_some(),
    }
}

/// Angular interval subtended by one view cell, in doubled coordinates
/// `(2 * lateral, 2 * ahead)` so every corner is an integer point.
#[derive(Debug, Clone, Copy)]
struct Cone {
    lo: (i64, i64),
    hi: (i64, i64),
}

fn cross(a: (i64, i64), b: (i64, i64)) -> i64 {
    a.0 * b.1 - a.1 * b.0
}

impl Cone {
    fn of_cell(ahead: i64, lateral: i64) -> Self {
        let (cx, cy) = (2 * lateral, 2 * ahead);
        let corners = [(cx - 1, cy - 1), (cx + 1, cy - 1), (cx - 1, cy + 1), (cx + 1, cy + 1)];
        let lo = *corners
            .iter()
            .find(|&&c| corners.iter().all(|&o| cross(c, o) >= 0))
            .expect("cell does not contain the origin");
        let hi = *corners
            .iter()
            .find(|&&c| corners.iter().all(|&o| cross(o, c) >= 0))
            .expect("cell does not contain the origin");
        Self { lo, hi }
    }

    fn strictly_contains(&self, d: (i64, i64)) -> bool {
        cross(self.lo, d) > 0 && cross(d, self.hi) > 0
    }
}

/// Shadow casting from the agent's cell center. A cell is visible unless the
/// sight line to its center passes through the interior of an opaque cell.
///
/// Rows are swept outward and, within a row, from the center column out, so
/// every cell that could block a sight line has already cast its shadow.
fn visibility(opaque: &[[bool; VIEW]; VIEW]) -> [[bool; VIEW]; VIEW] {
    let mut seen = [[false; VIEW]; VIEW];
    let mut shadows: Vec<Cone> = Vec::with_capacity(VIEW * VIEW);
    for a in 0..VIEW as i64 {
        for m in 0..=HALF {
            let sides: &[i64] = if m == 0 { &[0] } else { &[-m, m] };
            for &l in sides {
                let c = (l + HALF) as usize;
                if a == 0 && l == 0 {
                    seen[0][c] = true;
                    continue;
                }
                let d = (2 * l, 2 * a);
                seen[a as usize][c] = !shadows.iter().any(|s| s.strictly_contains(d));
                if opaque[a as usize][c] {
                    shadows.push(Cone::of_cell(a, l));
                }
            }
        }
    }
    seen
}
