//! Perfect-maze generation by randomized depth-first carving
//! (recursive backtracker, iterative form).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Wall bitmap, `true` = wall. Row-major `size` x `size`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WallMap {
    size: usize,
    walls: Vec<bool>,
}

impl WallMap {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn is_wall(&self, r: isize, c: isize) -> bool {
        if r < 0 || c < 0 || r as usize >= self.size || c as usize >= self.size {
            return true; // everything outside the map is solid
        }
        self.walls[r as usize * self.size + c as usize]
    }

    pub fn open_cells(&self) -> Vec<(usize, usize)> {
        (0..self.size * self.size)
            .filter(|&i| !self.walls[i])
            .map(|i| (i / self.size, i % self.size))
            .collect()
    }

    /// Fully open interior with a solid border; used by the fruit arena.
    pub fn open_arena(size: usize) -> Result<Self> {
        validate_size(size)?;
        let mut walls = vec![true; size * size];
        for r in 1..size - 1 {
            for c in 1..size - 1 {
                walls[r * size + c] = false;
            }
        }
        Ok(WallMap { size, walls })
    }
}

fn validate_size(size: usize) -> Result<()> {
    if size < 5 || size % 2 == 0 {
        return Err(Error::InvalidMazeSize { size });
    }
    Ok(())
}

/// Carves a perfect maze (spanning tree over the odd-coordinate lattice):
/// fully connected, no loops, deterministic in `seed`.
pub fn generate_maze(size: usize, seed: u64) -> Result<WallMap> {
    validate_size(size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut walls = vec![true; size * size];
    let lattice = (size - 1) / 2; // carveable cells at odd coordinates

    let start = (
        1 + 2 * (rng.next_u64_range(lattice) as usize),
        1 + 2 * (rng.next_u64_range(lattice) as usize),
    );
    walls[start.0 * size + start.1] = false;
    let mut stack = vec![start];
    let mut dirs: [(isize, isize); 4] = [(-2, 0), (2, 0), (0, -2), (0, 2)];

    while let Some(&(r, c)) = stack.last() {
        dirs.shuffle(&mut rng);
        let next = dirs.iter().find_map(|&(dr, dc)| {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            if nr < 1 || nc < 1 || nr as usize >= size || nc as usize >= size {
                return None;
            }
            let (nr, nc) = (nr as usize, nc as usize);
            walls[nr * size + nc].then_some((nr, nc, (r as isize + dr / 2) as usize, (c as isize + dc / 2) as usize))
        });
        match next {
            Some((nr, nc, wr, wc)) => {
                walls[wr * size + wc] = false;
                walls[nr * size + nc] = false;
                stack.push((nr, nc));
            }
            None => {
                stack.pop();
            }
        }
    }
    Ok(WallMap { size, walls })
}

trait RangeExt {
    fn next_u64_range(&mut self, n: usize) -> u64;
}

impl RangeExt for ChaCha8Rng {
    fn next_u64_range(&mut self, n: usize) -> u64 {
        use rand::Rng;
        self.gen_range(0..n as u64)
    }
}
