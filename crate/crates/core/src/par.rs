//! Execution policy for the data-parallel loops (grid search, sweeps, replicas).
//!
//! Results are always collected in input order, so the policy changes speed
//! but never output.

use serde::{Deserialize, Serialize};

/// How independent work items are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecPolicy {
    Sequential,
    /// Work-stealing pool; `threads: None` uses the global pool.
    Parallel {
        threads: Option<usize>,
    },
}

impl Default for ExecPolicy {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecPolicy::Parallel { threads: None }
        } else {
            ExecPolicy::Sequential
        }
    }
}

impl ExecPolicy {
    /// Policy for an explicit thread count; `Some(1)` means sequential.
    pub fn with_threads(threads: Option<usize>) -> Self {
        match threads {
            Some(1) => ExecPolicy::Sequential,
            Some(0) | None => ExecPolicy::default(),
            Some(n) => ExecPolicy::Parallel { threads: Some(n) },
        }
    }

    /// Applies `f` to every item and returns the results in item order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            ExecPolicy::Sequential => items.iter().map(f).collect(),
            ExecPolicy::Parallel { threads } => parallel_map(*threads, items, f),
        }
    }
}

#[cfg(feature = "parallel")]
fn parallel_map<T, R, F>(threads: Option<usize>, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
            Err(_) => items.par_iter().map(&f).collect(),
        },
        None => items.par_iter().map(&f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel_map<T, R, F>(_threads: Option<usize>, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.iter().map(f).collect()
}
