//! Data-parallel execution helpers.
//!
//! Episode rollouts, batch evaluation, and multi-seed sweeps are
//! embarrassingly parallel: each work item owns its RNG stream and shares
//! only read-only state. With the `parallel` feature (default) these map
//! over a rayon pool; without it they fall back to a plain sequential loop.
//! Outputs are collected in index order either way, so results are
//! bit-identical across backends and thread counts.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, parallel when the `parallel` feature is enabled.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_indexed_seq(n, f)
    }
}

/// Sequential reference path; always compiled so benchmarks can compare
/// against the parallel backend directly.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Cap the worker count of the global pool. Call once, before any parallel
/// work; later calls return an error from rayon and are reported as `false`.
/// A no-op returning `false` when built without the `parallel` feature.
pub fn limit_threads(n: usize) -> bool {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_ok()
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
        false
    }
}
