use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported board side. Boards are packed into a `u32` and the
/// distance table has `2^(L*L)` entries.
pub const MAX_SIDE: usize = 4;

/// LightsOut board of side `L`, bits packed row-major (cell `(i, j)` is bit `i*L + j`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LightsOut {
    side: usize,
    /// Toggle mask for each press, indexed by `i*L + j`.
    press_masks: Vec<u32>,
}

impl LightsOut {
    pub fn new(side: usize) -> Result<Self> {
        if side == 0 || side > MAX_SIDE {
            return Err(Error::Config(format!(
                "lightsout side must be in 1..={MAX_SIDE}, got {side}"
            )));
        }
        let mut press_masks = Vec::with_capacity(side * side);
        for i in 0..side {
            for j in 0..side {
                let mut mask = 1u32 << (i * side + j);
                if i > 0 {
                    mask |= 1 << ((i - 1) * side + j);
                }
                if i + 1 < side {
                    mask |= 1 << ((i + 1) * side + j);
                }
                if j > 0 {
                    mask |= 1 << (i * side + j - 1);
                }
                if j + 1 < side {
                    mask |= 1 << (i * side + j + 1);
                }
                press_masks.push(mask);
            }
        }
        Ok(Self { side, press_masks })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn state_count(&self) -> usize {
        1 << (self.side * self.side)
    }

    pub fn action_count(&self) -> usize {
        self.side * self.side
    }

    pub fn press_masks(&self) -> &[u32] {
        &self.press_masks
    }

    /// Press cell `(i, j)`: flips it and its in-grid orthogonal neighbours.
    pub fn press(&self, bits: u32, i: usize, j: usize) -> Result<u32> {
        if i >= self.side || j >= self.side {
            return Err(Error::InvalidAction {
                action: i * self.side + j,
                count: self.action_count(),
            });
        }
        Ok(bits ^ self.press_masks[i * self.side + j])
    }

    pub fn is_lit(&self, bits: u32, i: usize, j: usize) -> bool {
        bits >> (i * self.side + j) & 1 == 1
    }

    /// BFS press-count from the all-off board to every board; `u8::MAX` marks
    /// boards that cannot be cleared. Because presses commute and are
    /// involutions, `distance(a, b) == table[a ^ b]`.
    pub(crate) fn distance_table(&self) -> Vec<u8> {
        let n = self.state_count();
        let mut dist = vec![u8::MAX; n];
        let mut frontier = vec![0u32];
        dist[0] = 0;
        let mut depth = 0u8;
        while !frontier.is_empty() {
            depth += 1;
            let mut next = Vec::new();
            for &s in &frontier {
                for &m in &self.press_masks {
                    let t = (s ^ m) as usize;
                    if dist[t] == u8::MAX {
                        dist[t] = depth;
                        next.push(t as u32);
                    }
                }
            }
            frontier = next;
        }
        dist
    }
}
