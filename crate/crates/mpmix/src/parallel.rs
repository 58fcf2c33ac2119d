//! Data-parallel execution helpers.
//!
//! All fan-out in the crate (restarts, candidate models, benchmark
//! replicates) goes through [`map_collect`]. With the `parallel` feature
//! enabled the work is distributed with rayon; without it, or when the
//! caller asks for a single thread, the same closure runs sequentially.
//! Results are collected in input order, so the two paths are
//! observationally identical.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of worker threads requested via `--threads` / `MPMIX_THREADS`.
/// `None` leaves the rayon default (one thread per core).
pub fn configure_threads(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        // Ignore the error if a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

/// Map `f` over `items`, in parallel when enabled, preserving input order.
pub fn map_collect<T, U, F>(items: Vec<T>, parallel: bool, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if parallel {
            return items.into_par_iter().map(f).collect();
        }
    }
    let _ = parallel;
    items.into_iter().map(f).collect()
}
