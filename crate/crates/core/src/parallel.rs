//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature the map runs on a rayon pool; without it, or
//! with [`Execution::Sequential`], items run in order on the caller's thread.
//! Results are returned in input order either way, so output never depends
//! on scheduling.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Execution {
    Sequential,
    /// Global pool, capped by [`WORKERS_ENV`] when set.
    #[default]
    Parallel,
    /// Dedicated pool with this many threads.
    Threads(usize),
}

/// Environment variable that caps the worker count.
pub const WORKERS_ENV: &str = "MODEMATCH_WORKERS";

pub fn map<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec {
        Execution::Sequential => items.iter().map(f).collect(),
        Execution::Parallel => {
            let workers = std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok());
            match workers.filter(|&w| w > 0) {
                Some(w) => par_map(items, f, Some(w)),
                None => par_map(items, f, None),
            }
        }
        Execution::Threads(n) => par_map(items, f, Some(n.max(1))),
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, U, F>(items: &[T], f: F, threads: Option<usize>) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    let pool = threads.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok());
    match pool {
        Some(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        None => items.par_iter().map(&f).collect(),
    }
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, U, F>(items: &[T], f: F, _threads: Option<usize>) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let items: Vec<u64> = (0..500).collect();
        let seq = map(Execution::Sequential, &items, |x| x * x);
        let par = map(Execution::Parallel, &items, |x| x * x);
        let three = map(Execution::Threads(3), &items, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(seq, three);
        assert_eq!(seq[499], 499 * 499);
    }
}
