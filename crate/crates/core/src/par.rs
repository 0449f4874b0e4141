//! Data-parallel helpers.
//!
//! With the `parallel` feature the work items run on the rayon pool; without
//! it they run in order on the calling thread. Results are always returned in
//! item order, so reductions over them are deterministic either way.

/// Rows per work item for batch kernels.
pub const CHUNK_ROWS: usize = 16;

/// Apply `f` to every index in `0..n` and collect the results in order.
#[cfg(feature = "parallel")]
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indices<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// Split `0..rows` into fixed-size chunks and map each `(start, end)` range.
pub fn map_row_chunks<T, F>(rows: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync + Send,
{
    let chunks = rows.div_ceil(CHUNK_ROWS);
    map_indices(chunks, |c| {
        let start = c * CHUNK_ROWS;
        f(start, (start + CHUNK_ROWS).min(rows))
    })
}

/// Whether the crate was built with the rayon backend.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
