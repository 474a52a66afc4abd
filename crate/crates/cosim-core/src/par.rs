//! Thin dispatch layer between rayon and sequential execution.
//!
//! All data-parallel call sites in the crate funnel through these helpers,
//! so disabling the `parallel` feature swaps every one of them for an
//! equivalent sequential loop with identical results.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items` and reduce with `combine`. `combine` must be
/// associative and order-insensitive (callers use total-order max/min).
pub(crate) fn map_reduce<T, R, F, C>(items: &[T], f: F, combine: C, parallel: bool) -> Option<R>
where
    T: Sync,
    R: Send + Copy,
    F: Fn(&T) -> R + Sync + Send,
    C: Fn(R, R) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(&f).reduce_with(&combine);
    }
    let _ = parallel;
    items.iter().map(f).reduce(combine)
}

/// Map `f` over owned items, preserving order in the output.
pub(crate) fn map_vec<T, R, F>(items: Vec<T>, f: F, parallel: bool) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.into_par_iter().map(&f).collect();
    }
    let _ = parallel;
    items.into_iter().map(f).collect()
}
