//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the maps below run on the rayon pool,
//! otherwise on the calling thread. Outputs are always collected in index
//! order and reduced sequentially, so both builds produce the same bits.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of indices folded into one partial sum by [`chunked_sum`].
pub const CHUNK: usize = 64;

/// Evaluates `f(i)` for `i in 0..n` and returns the results in order.
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
        (0..n).map(f).collect()
    }
}

/// Sum of `f(i)` over `0..n`, reduced over fixed chunks of [`CHUNK`]
/// indices. The chunk layout does not depend on the worker count.
pub fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunks = n.div_ceil(CHUNK);
    let partial = map_indexed(chunks, |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        acc
    });
    partial.into_iter().sum()
}

/// Configures the global worker pool. A no-op in sequential builds.
///
/// Fails only if the pool was already initialised with another size.
pub fn set_threads(threads: usize) -> crate::Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| crate::Error::input(format!("cannot configure {threads} threads: {e}")))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}

/// Whether this build runs the data-parallel paths.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
