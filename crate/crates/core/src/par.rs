//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch to rayon when the caller
//! asks for it; otherwise they run sequentially. Every helper assigns work by
//! index and never reduces across items, so results are bitwise identical
//! whichever path runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// True when the crate was built with rayon support.
pub const PARALLEL_AVAILABLE: bool = cfg!(feature = "parallel");

/// Calls `f(index, chunk)` for each `chunk_len`-sized chunk of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, parallel: bool, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk_len == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if parallel {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = parallel;
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Maps `0..n` through `f`, preserving order.
pub fn map_range<R, F>(n: usize, parallel: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Maps each element of `items` through `f`, preserving order.
pub fn map_slice<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Flat-maps `items` through `f`, preserving order.
pub fn flat_map_slice<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T, &mut Vec<R>) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        let chunk = (items.len() / (4 * rayon::current_num_threads())).max(256);
        let parts: Vec<Vec<R>> = items
            .par_chunks(chunk)
            .map(|c| {
                let mut out = Vec::new();
                c.iter().for_each(|t| f(t, &mut out));
                out
            })
            .collect();
        return parts.into_iter().flatten().collect();
    }
    let _ = parallel;
    let mut out = Vec::new();
    items.iter().for_each(|t| f(t, &mut out));
    out
}

/// Sorts with an unstable sort; callers must only rely on key order.
pub fn sort_unstable_by_key<T, K, F>(items: &mut [T], parallel: bool, key: F)
where
    T: Send,
    K: Ord,
    F: Fn(&T) -> K + Sync,
{
    #[cfg(feature = "parallel")]
    if parallel {
        items.par_sort_unstable_by_key(key);
        return;
    }
    let _ = parallel;
    items.sort_unstable_by_key(key);
}

/// Raw pointer that may be shared across threads for disjoint writes.
#[derive(Clone, Copy)]
pub(crate) struct SharedMut<T>(*mut T);

unsafe impl<T: Send> Send for SharedMut<T> {}
unsafe impl<T: Send> Sync for SharedMut<T> {}

impl<T> SharedMut<T> {
    pub(crate) fn new(slice: &mut [T]) -> Self {
        SharedMut(slice.as_mut_ptr())
    }

    /// # Safety
    /// `i` must be in bounds and no other thread may access element `i`
    /// concurrently.
    #[inline]
    pub(crate) unsafe fn write(self, i: usize, v: T) {
        *self.0.add(i) = v;
    }

    /// # Safety
    /// `i` must be in bounds and no other thread may write element `i`
    /// concurrently.
    #[inline]
    pub(crate) unsafe fn read(self, i: usize) -> T
    where
        T: Copy,
    {
        *self.0.add(i)
    }
}

/// Runs `f(row)` for every row in `rows`.
pub(crate) fn for_each_row<F>(rows: usize, parallel: bool, f: F)
where
    F: Fn(usize) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        (0..rows).into_par_iter().for_each(f);
        return;
    }
    let _ = parallel;
    (0..rows).for_each(f);
}
