//! Execution-mode switches for compute kernels.
//!
//! Every kernel in this crate computes each output element with a fixed,
//! sequential reduction order, so results are identical whether the outer
//! loop runs on one thread or many. The strict flag exists for callers that
//! want to force single-threaded execution anyway (e.g. bit-reproducibility
//! audits of training runs).

use rayon::prelude::*;
use std::sync::atomic::{AtomicBool, Ordering};

static STRICT: AtomicBool = AtomicBool::new(false);

/// Force all kernels onto a single thread.
pub fn set_strict_deterministic(on: bool) {
    STRICT.store(on, Ordering::Relaxed);
}

pub fn strict_deterministic() -> bool {
    STRICT.load(Ordering::Relaxed)
}

/// Run `f(i, chunk_i)` over `buf` split into equal chunks, in parallel unless
/// strict mode is on. Each chunk is owned by exactly one call.
pub fn for_each_chunk<T: Send>(
    buf: &mut [T],
    chunk: usize,
    f: impl Fn(usize, &mut [T]) + Sync + Send,
) {
    debug_assert!(chunk > 0);
    if strict_deterministic() || buf.len() <= chunk {
        buf.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
    } else {
        buf.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
    }
}

/// Run `f(i)` for `i` in `0..n`, in parallel unless strict mode is on.
pub fn for_each_index(n: usize, f: impl Fn(usize) + Sync + Send) {
    if strict_deterministic() || n <= 1 {
        (0..n).for_each(f);
    } else {
        (0..n).into_par_iter().for_each(f);
    }
}
