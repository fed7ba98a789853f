//! Execution-mode switch for the data-parallel kernels.
//!
//! Kernels split their work into disjoint, fixed chunks (one per sample or
//! per channel plane) and run each chunk with identical arithmetic, so the
//! sequential and parallel paths produce bit-identical results. Without the
//! `parallel` feature every call runs sequentially.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

/// Selects the execution mode process-wide. `Parallel` is a no-op request
/// when the crate is built without the `parallel` feature.
pub fn set_mode(mode: ExecMode) {
    PARALLEL.store(
        mode == ExecMode::Parallel && cfg!(feature = "parallel"),
        Ordering::Relaxed,
    );
}

pub fn mode() -> ExecMode {
    if PARALLEL.load(Ordering::Relaxed) {
        ExecMode::Parallel
    } else {
        ExecMode::Sequential
    }
}

/// Calls `f(index, chunk)` for each `chunk_len`-sized piece of `data`.
pub fn for_each_chunk<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if mode() == ExecMode::Parallel {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
}

/// Maps `0..n` through `f`, preserving index order in the result.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    if mode() == ExecMode::Parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}
