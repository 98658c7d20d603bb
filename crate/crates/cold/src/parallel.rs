//! Thread-pool [`Executor`] backed by rayon.

use cold_core::exec::Executor;
use rayon::prelude::*;

/// Runs batch work on a dedicated pool of `workers` threads. Results are
/// collected in index order, so output does not depend on the worker count.
pub struct PoolExecutor {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl PoolExecutor {
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build()?;
        Ok(Self { pool, workers })
    }
}

impl Executor for PoolExecutor {
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..len).into_par_iter().map(f).collect())
    }

    fn map_init<S, T, I, F>(&self, len: usize, init: I, f: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..len).into_par_iter().map_init(init, |s, i| f(s, i)).collect())
    }

    fn workers(&self) -> usize {
        self.workers
    }
}

/// `COLD_WORKERS` if set and valid, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var("COLD_WORKERS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}
