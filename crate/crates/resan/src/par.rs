//! Data-parallel mapping over independent work items.
//!
//! Batch items, Monte-Carlo samples and per-position draws are all
//! embarrassingly parallel: each builds its own graph or RNG stream and
//! shares parameters read-only. With the `parallel` feature (default) the
//! maps below fan out over rayon's thread pool; without it they run
//! sequentially with identical results, since every reduction that follows
//! consumes the returned vectors in index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, collecting results in index order.
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

/// Sequential variant, always available; used by the benches to compare
/// against the parallel path.
pub fn map_indexed_seq<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Map `f` over a slice, collecting results in slice order.
pub fn map_slice<'a, T, U, F>(items: &'a [T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&'a T) -> U + Sync + Send,
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let par: Vec<usize> = map_indexed(100, |i| i * i);
        let seq: Vec<usize> = map_indexed_seq(100, |i| i * i);
        assert_eq!(par, seq);
    }

    #[test]
    fn slice_map_preserves_order() {
        let items: Vec<i64> = (0..50).collect();
        let out = map_slice(&items, |x| x + 1);
        assert_eq!(out, (1..51).collect::<Vec<i64>>());
    }
}
