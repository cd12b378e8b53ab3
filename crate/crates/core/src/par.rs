//! Data-parallel helpers with a sequential fallback.
//!
//! The hot inner loops (simplex pivots, acquisition scoring, hyperparameter
//! grids, batched oracle runs) are embarrassingly parallel over independent
//! items. With the default `parallel` feature they run on rayon; without it
//! the same entry points run sequentially, which keeps the crate usable on
//! single-threaded targets and gives the benches a baseline. Both paths are
//! always compiled so they can be compared directly.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Threshold below which parallel dispatch is not worth the overhead.
pub const MIN_PAR_LEN: usize = 64;

/// Maps `items` to a vector, preserving order.
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if items.len() >= MIN_PAR_LEN {
            return items.par_iter().map(f).collect();
        }
    }
    map_collect_seq(items, f)
}

/// Sequential twin of [`map_collect`].
pub fn map_collect_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Like [`map_collect`] but parallelizes even tiny inputs. For items that
/// each carry substantial work (matrix factorizations, whole solver runs).
pub fn map_collect_heavy<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if items.len() >= 2 {
            return items.par_iter().map(f).collect();
        }
    }
    map_collect_seq(items, f)
}

/// Maps indices `0..n` to a vector, preserving order.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if n >= MIN_PAR_LEN {
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    map_indices_seq(n, f)
}

/// Sequential twin of [`map_indices`].
pub fn map_indices_seq<U, F>(n: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..n).map(f).collect()
}

/// Applies `f` to every disjoint `chunk_len`-sized chunk of `data`.
///
/// Used for tableau row elimination where each chunk is one matrix row.
pub fn for_each_chunk<F>(data: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if data.len() / chunk_len.max(1) >= 8 && data.len() >= 1 << 14 {
            data.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(i, chunk)| f(i, chunk));
            return;
        }
    }
    for_each_chunk_seq(data, chunk_len, f);
}

/// Sequential twin of [`for_each_chunk`].
pub fn for_each_chunk_seq<F>(data: &mut [f64], chunk_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]),
{
    for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
        f(i, chunk);
    }
}

/// Index of the maximum value under `key`, ties to the lowest index.
/// Deterministic regardless of execution order.
pub fn argmax_by_key<T, F>(items: &[T], key: F) -> Option<usize>
where
    T: Sync,
    F: Fn(&T) -> f64 + Sync + Send,
{
    let scores = map_collect(items, |t| key(t));
    let mut best: Option<(usize, f64)> = None;
    for (i, s) in scores.iter().enumerate() {
        match best {
            Some((_, bs)) if *s <= bs => {}
            _ => best = Some((i, *s)),
        }
    }
    best.map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_matches_seq() {
        let xs: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let a = map_collect(&xs, |x| x * 2.0);
        let b = map_collect_seq(&xs, |x| x * 2.0);
        assert_eq!(a, b);
    }

    #[test]
    fn argmax_prefers_lowest_index_on_tie() {
        let xs = vec![1.0, 3.0, 3.0, 2.0];
        assert_eq!(argmax_by_key(&xs, |x| *x), Some(1));
    }

    #[test]
    fn chunked_updates_match_seq() {
        let mut a: Vec<f64> = (0..4096).map(|i| i as f64).collect();
        let mut b = a.clone();
        for_each_chunk(&mut a, 64, |i, row| {
            for v in row.iter_mut() {
                *v += i as f64;
            }
        });
        for_each_chunk_seq(&mut b, 64, |i, row| {
            for v in row.iter_mut() {
                *v += i as f64;
            }
        });
        assert_eq!(a, b);
    }
}
