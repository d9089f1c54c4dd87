//! Work distribution over individuals and row chunks.
//!
//! With the `parallel` feature and more than one worker, maps run on a
//! dedicated rayon pool; otherwise they run on the calling thread. Results are
//! always returned in index order and every reduction in this crate folds them
//! sequentially, so the worker count never changes a floating-point result.

use std::ops::Range;
#[cfg(feature = "parallel")]
use std::sync::Arc;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Fixed chunk length for deterministic partial sums.
pub const REDUCE_CHUNK: usize = 2048;

#[derive(Clone)]
pub struct Exec {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Exec").field("workers", &self.workers).finish()
    }
}

impl Default for Exec {
    fn default() -> Self {
        Exec::sequential()
    }
}

impl Exec {
    pub fn sequential() -> Self {
        Exec {
            workers: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// `workers == 0` means one per available core.
    pub fn new(workers: usize) -> Self {
        let workers = if workers == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            workers
        };
        #[cfg(feature = "parallel")]
        {
            if workers > 1 {
                match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
                    Ok(pool) => {
                        return Exec {
                            workers,
                            pool: Some(Arc::new(pool)),
                        }
                    }
                    Err(e) => log::warn!("thread pool unavailable ({e}); running sequentially"),
                }
            }
        }
        Exec {
            workers,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// `f(0), …, f(n-1)` in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            return pool.install(|| (0..n).into_par_iter().map(&f).collect());
        }
        (0..n).map(f).collect()
    }

    /// Applies `f` to fixed-size index ranges covering `0..n`, in order.
    pub fn map_chunks<T, F>(&self, n: usize, chunk: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Range<usize>) -> T + Sync + Send,
    {
        let chunk = chunk.max(1);
        let count = n.div_ceil(chunk);
        self.map(count, |c| f(c * chunk..((c + 1) * chunk).min(n)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        for w in [1, 3] {
            let e = Exec::new(w);
            assert_eq!(e.map(10, |i| i * i), (0..10).map(|i| i * i).collect::<Vec<_>>());
        }
    }

    #[test]
    fn chunks_cover_range() {
        let e = Exec::new(2);
        let parts = e.map_chunks(10, 3, |r| r);
        assert_eq!(parts, vec![0..3, 3..6, 6..9, 9..10]);
        assert!(e.map_chunks(0, 3, |r| r).is_empty());
    }

    #[test]
    fn chunked_sum_is_worker_invariant() {
        let xs: Vec<f64> = (0..10_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3 + 1e-9 * i as f64).collect();
        let sum = |e: &Exec| -> f64 {
            e.map_chunks(xs.len(), 97, |r| xs[r].iter().sum::<f64>()).into_iter().sum()
        };
        let a = sum(&Exec::sequential());
        let b = sum(&Exec::new(4));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
