//! Worker pool and order-preserving tiled execution.
//!
//! Every parallel map collects results in input order, so outputs never
//! depend on the worker count or on scheduling.

use anyhow::{Context, Result};
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

use palmscan_core::{iter_tiles, TileWindow};

pub const WORKERS_ENV: &str = "PALMSCAN_WORKERS";
pub const DEFAULT_TILE: usize = 256;

/// Worker count from `PALMSCAN_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub struct Exec {
    pool: ThreadPool,
    workers: usize,
    pub tile: usize,
}

impl Exec {
    pub fn new(workers: usize, tile: usize) -> Result<Self> {
        let workers = workers.max(1);
        let pool = ThreadPoolBuilder::new()
            .num_threads(workers)
            .thread_name(|i| format!("palmscan-{i}"))
            .build()
            .context("starting worker pool")?;
        Ok(Exec { pool, workers, tile: tile.max(1) })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn map<T: Sync, U: Send>(&self, items: &[T], f: impl Fn(&T) -> U + Sync + Send) -> Vec<U> {
        self.pool.install(|| items.par_iter().map(&f).collect())
    }

    pub fn try_map<T: Sync, U: Send>(&self, items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
        self.pool.install(|| items.par_iter().map(&f).collect())
    }

    pub fn range<U: Send>(&self, n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
        self.pool.install(|| (0..n).into_par_iter().map(&f).collect())
    }

    pub fn tiles(&self, width: usize, height: usize, halo: usize) -> Result<Vec<TileWindow>> {
        Ok(iter_tiles(width, height, self.tile, halo)?)
    }

    /// Runs `f` on every tile and scatters its core-region output into one
    /// row-major grid.
    pub fn tiled<T: Copy + Send + Default>(
        &self,
        width: usize,
        height: usize,
        halo: usize,
        f: impl Fn(&TileWindow) -> Vec<T> + Sync + Send,
    ) -> Result<Vec<T>> {
        let tiles = self.tiles(width, height, halo)?;
        let parts = self.map(&tiles, |w| f(w));
        let mut out = vec![T::default(); width * height];
        for (w, part) in tiles.iter().zip(&parts) {
            w.scatter(part, &mut out, width);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiled_matches_serial_for_any_worker_count() {
        let (w, h) = (37, 23);
        let serial: Vec<u32> = (0..w * h).map(|i| (i * 31 % 17) as u32).collect();
        for workers in [1, 3, 8] {
            for tile in [1, 5, 16, 64] {
                let ex = Exec::new(workers, tile).unwrap();
                let out = ex
                    .tiled(w, h, 2, |win| win.pixels().map(|(r, c)| ((r * w + c) * 31 % 17) as u32).collect())
                    .unwrap();
                assert_eq!(out, serial);
            }
        }
    }

    #[test]
    fn map_preserves_order() {
        let ex = Exec::new(4, 8).unwrap();
        let v: Vec<usize> = (0..1000).collect();
        assert_eq!(ex.map(&v, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
        assert_eq!(ex.range(5, |i| i), vec![0, 1, 2, 3, 4]);
    }
}
