//! Optional worker pool for per-agent and per-run parallelism.

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::{Error, Result};

/// Environment variable capping worker threads; `0` means sequential.
pub const THREADS_ENV: &str = "LEADOPT_THREADS";

/// Runs independent jobs either inline or on a dedicated rayon pool.
///
/// Results always come back in index order, so reductions performed by the
/// caller are independent of scheduling.
pub struct Executor {
    pool: Option<ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("threads", &self.threads()).finish()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Self { pool: None }
    }

    /// `threads == 0` gives a sequential executor.
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
        Ok(Self { pool: Some(pool) })
    }

    /// Reads [`THREADS_ENV`]; unset means one worker per available core.
    pub fn from_env() -> Result<Self> {
        match std::env::var(THREADS_ENV) {
            Ok(v) => {
                let threads: usize = v.trim().parse().map_err(|_| {
                    Error::Config(format!("{THREADS_ENV} must be a non-negative integer, got {v:?}"))
                })?;
                Self::with_threads(threads)
            }
            Err(_) => Self::with_threads(
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            ),
        }
    }

    pub fn threads(&self) -> usize {
        self.pool.as_ref().map_or(0, |p| p.current_num_threads())
    }

    /// Evaluates `f(0..len)` and returns the results in index order.
    pub fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Send + Sync,
    {
        match &self.pool {
            None => (0..len).map(f).collect(),
            Some(pool) => pool.install(|| (0..len).into_par_iter().map(f).collect()),
        }
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::sequential()
    }
}
