//! Execution dispatch for the data-parallel loops.
//!
//! With the default `parallel` feature, [`map_collect`] fans out over rayon;
//! without it, it degrades to a plain sequential loop. [`map_collect_seq`] is
//! always sequential and stays available in parallel builds so the two paths
//! can be compared directly (see the bench suite). Both preserve input order,
//! so any deterministic per-element function yields identical output either
//! way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f` to every element, preserving order. Parallel when the
/// `parallel` feature is enabled.
#[cfg(feature = "parallel")]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Applies `f` to every element, preserving order. Sequential build.
#[cfg(not(feature = "parallel"))]
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Sequential twin of [`map_collect`], present in every build.
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Caps the rayon worker count from `QUTRIT_BELL_THREADS` when the variable
/// is set to a positive integer. Call once at process start; once a global
/// pool exists, later calls have no effect. No-op in sequential builds.
pub fn configure_threads_from_env() {
    #[cfg(feature = "parallel")]
    {
        let cap = std::env::var("QUTRIT_BELL_THREADS")
            .ok()
            .and_then(|v| v.parse::<usize>().ok())
            .filter(|&n| n >= 1);
        if let Some(n) = cap {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}
