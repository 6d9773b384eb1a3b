use std::collections::{BTreeSet, VecDeque};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Compass moves. Rooms are numbered row-major, row 0 at the top.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Move {
    North,
    South,
    East,
    West,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::North, Move::South, Move::East, Move::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(action: usize) -> Option<Move> {
        Self::ALL.get(action).copied()
    }
}

/// Room grid plus the set of doors between orthogonally adjacent rooms.
///
/// Serialized as `{"R": 5, "doors": [[0, 1], [1, 6], ...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MazeLayout {
    #[serde(rename = "R")]
    pub size: usize,
    pub doors: Vec<[u32; 2]>,
}

impl MazeLayout {
    /// Seeded randomized spanning tree over the room grid with `extra_doors`
    /// additional doors that open loops.
    pub fn generate(size: usize, extra_doors: usize, seed: u64) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidLayout("maze needs at least one room".into()));
        }
        let mut rng = crate::rng_from_seed(seed);
        let n = size * size;
        let mut walls = all_adjacent_pairs(size);
        walls.shuffle(&mut rng);

        // Kruskal over shuffled walls.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut doors = BTreeSet::new();
        let mut rest = Vec::new();
        for [a, b] in walls {
            let (ra, rb) = (find(&mut parent, a as usize), find(&mut parent, b as usize));
            if ra != rb {
                parent[ra] = rb;
                doors.insert([a, b]);
            } else {
                rest.push([a, b]);
            }
        }
        for _ in 0..extra_doors.min(rest.len()) {
            let k = rng.gen_range(0..rest.len());
            doors.insert(rest.swap_remove(k));
        }
        let layout = Self {
            size,
            doors: doors.into_iter().collect(),
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let layout: Self = serde_json::from_str(text)?;
        layout.validate()?;
        Ok(layout)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("layout serializes")
    }

    /// The 5×5 layout shipped with the crate.
    pub fn default_5x5() -> Self {
        Self::from_json(include_str!("../../layouts/maze5.json")).expect("bundled layout is valid")
    }

    /// The 7×7 layout used for the offline dataset.
    pub fn default_7x7() -> Self {
        Self::from_json(include_str!("../../layouts/maze7.json")).expect("bundled layout is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let n = (self.size * self.size) as u32;
        for &[a, b] in &self.doors {
            if a >= n || b >= n {
                return Err(Error::InvalidLayout(format!(
                    "door [{a}, {b}] leaves the grid"
                )));
            }
            let (ra, ca) = (a as usize / self.size, a as usize % self.size);
            let (rb, cb) = (b as usize / self.size, b as usize % self.size);
            if ra.abs_diff(rb) + ca.abs_diff(cb) != 1 {
                return Err(Error::InvalidLayout(format!(
                    "door [{a}, {b}] joins rooms that are not adjacent"
                )));
            }
        }
        let neighbors = self.neighbor_table();
        let mut seen = vec![false; n as usize];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(r) = queue.pop_front() {
            for next in neighbors[r].iter().flatten() {
                if !seen[*next as usize] {
                    seen[*next as usize] = true;
                    queue.push_back(*next as usize);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidLayout("room graph is not connected".into()));
        }
        Ok(())
    }

    /// `table[room][move]` is the room behind the door in that direction.
    pub(crate) fn neighbor_table(&self) -> Vec<[Option<u32>; 4]> {
        let n = self.size * self.size;
        let mut table = vec![[None; 4]; n];
        for &[a, b] in &self.doors {
            for (from, to) in [(a, b), (b, a)] {
                let (rf, cf) = (from as usize / self.size, from as usize % self.size);
                let (rt, ct) = (to as usize / self.size, to as usize % self.size);
                let dir = if rt + 1 == rf {
                    Move::North
                } else if rf + 1 == rt {
                    Move::South
                } else if ct == cf + 1 {
                    Move::East
                } else {
                    debug_assert_eq!(ct + 1, cf);
                    Move::West
                };
                table[from as usize][dir.index()] = Some(to);
            }
        }
        table
    }
}

fn all_adjacent_pairs(size: usize) -> Vec<[u32; 2]> {
    let mut pairs = Vec::new();
    for r in 0..size {
        for c in 0..size {
            let id = (r * size + c) as u32;
            if c + 1 < size {
                pairs.push([id, id + 1]);
            }
            if r + 1 < size {
                pairs.push([id, id + size as u32]);
            }
        }
    }
    pairs
}

/// Room maze: one step moves through a door or stays put.
#[derive(Clone, Debug)]
pub struct Maze {
    layout: MazeLayout,
    neighbors: Vec<[Option<u32>; 4]>,
}

impl Maze {
    pub fn new(layout: MazeLayout) -> Result<Self> {
        layout.validate()?;
        let neighbors = layout.neighbor_table();
        Ok(Self { layout, neighbors })
    }

    pub fn layout(&self) -> &MazeLayout {
        &self.layout
    }

    pub fn size(&self) -> usize {
        self.layout.size
    }

    pub fn room_count(&self) -> usize {
        self.layout.size * self.layout.size
    }

    pub fn step(&self, room: u32, action: Move) -> u32 {
        self.neighbors[room as usize][action.index()].unwrap_or(room)
    }

    pub fn neighbors(&self, room: u32) -> impl Iterator<Item = u32> + '_ {
        self.neighbors[room as usize].iter().flatten().copied()
    }

    pub(crate) fn all_pairs_distances(&self) -> Vec<u8> {
        let n = self.room_count();
        let mut table = vec![u8::MAX; n * n];
        for src in 0..n {
            let row = &mut table[src * n..(src + 1) * n];
            row[src] = 0;
            let mut queue = VecDeque::from([src as u32]);
            while let Some(r) = queue.pop_front() {
                let d = row[r as usize];
                for next in self.neighbors[r as usize].iter().flatten() {
                    if row[*next as usize] == u8::MAX {
                        row[*next as usize] = d + 1;
                        queue.push_back(*next);
                    }
                }
            }
        }
        table
    }
}
