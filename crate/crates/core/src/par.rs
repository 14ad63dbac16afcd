//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run the same closures sequentially. Every helper preserves input order
//! and reductions are performed over fixed-size chunks that are then folded
//! sequentially, so results are bit-identical between the two builds and
//! independent of the thread count.

/// Chunk length used for order-stable reductions.
pub const REDUCE_CHUNK: usize = 512;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `items.iter().map(f).collect()`, possibly in parallel.
pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
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

/// Apply `f(chunk_index, chunk)` to consecutive `chunk_len` pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }
}

/// Order-stable sum: `fold` each `REDUCE_CHUNK`-sized block of `0..n` starting
/// from `identity()`, then combine the block results left to right.
pub fn chunked_sum<A, Fold, Comb>(n: usize, identity: fn() -> A, fold: Fold, combine: Comb) -> A
where
    A: Send,
    Fold: Fn(A, usize) -> A + Sync + Send,
    Comb: Fn(A, A) -> A,
{
    let blocks = n.div_ceil(REDUCE_CHUNK);
    let partial = map_range(blocks, |b| {
        let start = b * REDUCE_CHUNK;
        let end = (start + REDUCE_CHUNK).min(n);
        (start..end).fold(identity(), &fold)
    });
    partial.into_iter().fold(identity(), combine)
}
