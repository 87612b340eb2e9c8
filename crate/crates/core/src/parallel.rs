//! Data-parallel helpers with a sequential fallback.
//!
//! The crate's hot loops are embarrassingly parallel across independent
//! samples: per-image score rows in the evaluator and per-sample gradient
//! tapes in the trainer. With the `parallel` feature (on by default) these
//! run on rayon; without it they degrade to plain iterators. Outputs are
//! collected in index order and reduced sequentially afterwards, so results
//! are bit-identical regardless of thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map over items, preserving order. Parallel when the feature is on.
pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
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

/// Map over indices `0..n`, preserving order. Parallel when the feature is on.
pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
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

/// Sequential reference implementations. The criterion benches compare
/// these against the default (possibly parallel) versions, and tests use
/// them to pin down bit-equality.
pub mod seq {
    pub fn map_collect<T, U, F>(items: &[T], f: F) -> Vec<U>
    where
        F: Fn(&T) -> U,
    {
        items.iter().map(f).collect()
    }

    pub fn map_indices<U, F>(n: usize, f: F) -> Vec<U>
    where
        F: Fn(usize) -> U,
    {
        (0..n).map(f).collect()
    }
}

/// Run `f` on a pool capped at `workers` threads (0 = rayon's default).
/// Without the `parallel` feature this just calls `f`.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if workers == 0 {
            f()
        } else {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .expect("thread pool construction");
            pool.install(f)
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64 * 0.37).collect();
        let a = map_collect(&xs, |x| x.sin() * x.cos());
        let b = seq::map_collect(&xs, |x| x.sin() * x.cos());
        assert!(a
            .iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn worker_cap_preserves_results() {
        let out = with_workers(1, || map_indices(100, |i| i * i));
        assert_eq!(out, (0..100).map(|i| i * i).collect::<Vec<_>>());
    }
}
