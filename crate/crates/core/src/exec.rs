//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature enabled the helpers dispatch to rayon unless
//! the process-wide mode has been switched to [`ExecMode::Sequential`].
//! Without the feature everything runs on the calling thread.
//!
//! Reductions always split the index range into the same fixed-size chunks
//! and add the partial sums in chunk order, so results are bit-identical
//! across modes and thread counts.

use std::ops::Range;
use std::sync::atomic::{AtomicU8, Ordering};

/// Chunk length used by reductions and bulk element-wise loops.
pub const CHUNK: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(1);

pub fn set_mode(mode: ExecMode) {
    MODE.store(
        match mode {
            ExecMode::Sequential => 0,
            ExecMode::Parallel => 1,
        },
        Ordering::Relaxed,
    );
}

/// The effective mode: always `Sequential` when built without `parallel`.
pub fn mode() -> ExecMode {
    if cfg!(feature = "parallel") && MODE.load(Ordering::Relaxed) == 1 {
        ExecMode::Parallel
    } else {
        ExecMode::Sequential
    }
}

/// Run `f` with the given mode, restoring the previous one afterwards.
pub fn with_mode<R>(mode_: ExecMode, f: impl FnOnce() -> R) -> R {
    let prev = MODE.load(Ordering::Relaxed);
    set_mode(mode_);
    let out = f();
    MODE.store(prev, Ordering::Relaxed);
    out
}

#[cfg(feature = "parallel")]
fn parallel() -> bool {
    mode() == ExecMode::Parallel
}

/// Apply `f(chunk_index, chunk)` to consecutive chunks of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if parallel() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

/// `(0..n).map(f).collect()` with results in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Deterministic sum of `f(range)` over fixed chunks of `0..n`.
pub fn sum_ranges<F>(n: usize, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partials = map_indexed(chunks, |c| {
        let start = c * CHUNK;
        f(start..(start + CHUNK).min(n))
    });
    partials.into_iter().sum()
}

/// Deterministic max of `f(range)` over fixed chunks of `0..n`.
pub fn max_ranges<F>(n: usize, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    map_indexed(chunks, |c| {
        let start = c * CHUNK;
        f(start..(start + CHUNK).min(n))
    })
    .into_iter()
    .fold(f64::NEG_INFINITY, f64::max)
}
