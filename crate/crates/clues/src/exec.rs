//! Rayon-backed executor. Results come back in input order, so every
//! reduction downstream sees the same sequence at any thread count.

use clues_core::exec::Executor;
use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

pub const THREADS_ENV: &str = "CLUES_THREADS";

pub struct RayonExecutor {
    pool: ThreadPool,
}

impl RayonExecutor {
    pub fn new(threads: usize) -> anyhow::Result<Self> {
        let pool = ThreadPoolBuilder::new().num_threads(threads.max(1)).build()?;
        Ok(RayonExecutor { pool })
    }

    /// Thread count from `CLUES_THREADS`, else the number of cores.
    pub fn from_env() -> anyhow::Result<Self> {
        let threads = match std::env::var(THREADS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .ok()
                .filter(|n| *n > 0)
                .ok_or_else(|| anyhow::anyhow!("{THREADS_ENV} must be a positive integer, got `{v}`"))?,
            Err(_) => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        Self::new(threads)
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for RayonExecutor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}

/// Wall clock for stage timings.
pub struct WallClock(std::time::Instant);

impl WallClock {
    pub fn start() -> Self {
        WallClock(std::time::Instant::now())
    }
}

impl clues_core::eval::Clock for WallClock {
    fn now(&self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}
