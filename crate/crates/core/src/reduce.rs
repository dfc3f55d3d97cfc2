//! Order-fixed parallel reductions.
//!
//! Work is split into chunks whose boundaries depend only on the input
//! length, each chunk is reduced sequentially, and partial results are
//! combined left to right. Floating-point results are therefore identical
//! for any rayon pool size.

use std::ops::Range;

use rayon::prelude::*;

pub const CHUNK: usize = 256;

pub fn chunked_reduce<A, F, G>(len: usize, partial: F, combine: G) -> Option<A>
where
    A: Send,
    F: Fn(Range<usize>) -> A + Sync + Send,
    G: Fn(A, A) -> A,
{
    let chunks = len.div_ceil(CHUNK);
    let parts: Vec<A> = (0..chunks)
        .into_par_iter()
        .map(|c| partial(c * CHUNK..((c + 1) * CHUNK).min(len)))
        .collect();
    parts.into_iter().reduce(combine)
}
