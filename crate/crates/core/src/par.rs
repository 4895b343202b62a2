//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (on by default) work is spread over the rayon
//! global pool. Without it every call runs on the current thread. Results are
//! identical either way: outputs are collected in input order and random
//! streams are assigned per chunk, never per worker.

/// How a batch operation should be executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Parallelism {
    /// Single-threaded, in input order.
    Sequential,
    /// Rayon data parallelism when compiled with the `parallel` feature,
    /// otherwise identical to [`Parallelism::Sequential`].
    #[default]
    Parallel,
}

impl Parallelism {
    /// True when this mode will actually fan out to worker threads.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map_slice<T, U, F>(items: &[T], mode: Parallelism, f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = mode;
    items.iter().map(f).collect()
}

/// Runs `f(chunk_index)` for every chunk in `0..chunks` and returns the
/// results in chunk order.
pub fn map_chunks<U, F>(chunks: usize, mode: Parallelism, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return (0..chunks).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..chunks).map(f).collect()
}
