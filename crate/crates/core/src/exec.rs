//! Data-parallel execution helpers.
//!
//! All parallel work in this crate is expressed as ordered maps over fixed
//! index ranges or fixed-size chunks. Partial results are collected in index
//! order and reduced sequentially, so every computation produces bit-identical
//! results whether it runs on one thread, many threads, or with the `parallel`
//! feature disabled entirely.

use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Enable or disable the rayon path at runtime. Without the `parallel`
/// feature this is a no-op and everything runs sequentially.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled && cfg!(feature = "parallel"), Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

/// Install a global thread pool with `n` threads. Callable once per process;
/// later calls return an error from rayon, which we ignore if the pool size
/// already matches.
#[cfg(feature = "parallel")]
pub fn configure_threads(n: usize) -> crate::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::QpalError::InvalidConfig(format!("thread pool: {e}")))
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_n: usize) -> crate::Result<()> {
    Ok(())
}

/// Map `f` over `0..n`, returning results in index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Split `0..len` into chunks of `chunk` elements (the last one short) and
/// map `f` over them, returning results in chunk order. Chunk boundaries
/// depend only on `len` and `chunk`, never on the thread count.
pub fn map_chunks<R, F>(len: usize, chunk: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(Range<usize>) -> R + Sync + Send,
{
    assert!(chunk > 0);
    let n_chunks = len.div_ceil(chunk);
    map_indexed(n_chunks, |i| {
        let start = i * chunk;
        f(start..(start + chunk).min(len))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunk_boundaries_are_fixed() {
        let sums: Vec<u64> = map_chunks(10, 4, |r| r.map(|i| i as u64).sum());
        assert_eq!(sums, vec![0 + 1 + 2 + 3, 4 + 5 + 6 + 7, 8 + 9]);
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let a: Vec<usize> = map_indexed(100, |i| i * i);
        set_parallel(false);
        let b: Vec<usize> = map_indexed(100, |i| i * i);
        set_parallel(true);
        assert_eq!(a, b);
    }
}
