//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature, [`Exec`] fans independent work items out
//! over a rayon pool; without it, or in strict mode, everything runs on the
//! calling thread. Results always come back in input order, so reductions
//! performed by the caller are bitwise reproducible in either mode.

#[cfg(feature = "parallel")]
use std::sync::Arc;

/// Environment variable selecting the worker count; `0` means strict
/// single-threaded execution.
pub const THREADS_ENV: &str = "GRNLAB_THREADS";

#[derive(Clone)]
pub struct Exec {
    mode: Mode,
}

#[derive(Clone)]
enum Mode {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel(Option<Arc<rayon::ThreadPool>>),
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Exec({})",
            if self.is_parallel() {
                "parallel"
            } else {
                "sequential"
            }
        )
    }
}

impl Default for Exec {
    fn default() -> Self {
        Exec::from_env()
    }
}

impl Exec {
    pub fn sequential() -> Self {
        Exec {
            mode: Mode::Sequential,
        }
    }

    /// A pool with `threads` workers, or rayon's global pool for `None`.
    /// Falls back to sequential when built without the `parallel` feature.
    pub fn parallel(threads: Option<usize>) -> Self {
        #[cfg(feature = "parallel")]
        {
            let pool = threads.map(|n| {
                Arc::new(
                    rayon::ThreadPoolBuilder::new()
                        .num_threads(n)
                        .build()
                        .expect("thread pool"),
                )
            });
            Exec {
                mode: Mode::Parallel(pool),
            }
        }
        #[cfg(not(feature = "parallel"))]
        {
            let _ = threads;
            Exec::sequential()
        }
    }

    /// Reads [`THREADS_ENV`]: unset uses all cores, `0` is strict.
    pub fn from_env() -> Self {
        match std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
        {
            Some(0) => Exec::sequential(),
            Some(n) => Exec::parallel(Some(n)),
            None => Exec::parallel(None),
        }
    }

    pub fn is_parallel(&self) -> bool {
        !matches!(self.mode, Mode::Sequential)
    }

    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match &self.mode {
            Mode::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Mode::Parallel(pool) => {
                use rayon::prelude::*;
                let run = || items.par_iter().map(&f).collect();
                match pool {
                    Some(p) => p.install(run),
                    None => run(),
                }
            }
        }
    }

    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        let idx: Vec<usize> = (0..n).collect();
        self.map(&idx, |&i| f(i))
    }
}
