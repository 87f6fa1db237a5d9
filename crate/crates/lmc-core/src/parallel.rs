//! Execution facade: data-parallel map over independent work items with a
//! sequential fallback.
//!
//! All hot loops in this crate (multi-start descents, shooting scans,
//! embedding-constant multi-starts, certificate suites) are expressed as maps
//! over immutable inputs, so both backends produce identical results in
//! identical order. The `parallel` feature (on by default) links rayon;
//! without it only [`ExecMode::Sequential`] is available and
//! [`ExecMode::auto`] degrades to it.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Which backend to run a map on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    /// Rayon work-stealing pool. Only effective with the `parallel` feature;
    /// otherwise behaves as `Sequential`.
    Parallel,
}

impl ExecMode {
    /// Parallel when compiled in, sequential otherwise.
    pub fn auto() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Map `f` over `items`, preserving input order in the output.
pub fn map_collect<T, U, F>(mode: ExecMode, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match mode {
        ExecMode::Sequential => items.iter().map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                items.par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                items.iter().map(f).collect()
            }
        }
    }
}

/// Map an index range `0..n`, preserving order.
pub fn map_indices<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}
