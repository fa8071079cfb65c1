//! Data-parallel batch execution.
//!
//! With the `parallel` feature (default) batches fan out over rayon's global
//! pool; without it every batch runs on the calling thread. Work items get
//! their own seed stream derived from `(master, index)`, and results are
//! collected in index order, so both modes produce identical output.

use crate::error::Result;
use crate::rng::DiffusionSeed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when built without the `parallel` feature.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Self::Parallel
        } else {
            Self::Sequential
        }
    }
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Self::Parallel
    }
}

pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

pub fn try_map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(exec, n, f).into_iter().collect()
}

/// Run `f` once per index with an independent seed stream for each.
pub fn map_seeded<T, F>(exec: Execution, n: usize, master: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut DiffusionSeed) -> Result<T> + Sync + Send,
{
    try_map_indexed(exec, n, |i| {
        let mut seed = DiffusionSeed::stream(master, i as u64);
        f(i, &mut seed)
    })
}
