//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature, [`Exec::Parallel`] fans work out over a rayon
//! pool. Without it, every mode runs sequentially. Reductions are always
//! performed over fixed-size chunks whose partial results are combined in
//! index order, so results are bit-identical regardless of thread count.

/// Chunk length used for deterministic floating-point reductions.
pub const REDUCE_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    #[default]
    Sequential,
    /// `workers == 0` means the global rayon pool.
    Parallel { workers: usize },
}

impl Exec {
    pub fn from_workers(workers: usize) -> Self {
        if workers == 1 {
            Exec::Sequential
        } else {
            Exec::Parallel { workers }
        }
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Exec::Parallel { .. })
    }

    /// Maps `f` over `0..len`, preserving index order in the output.
    pub fn map_range<R, F>(&self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        match *self {
            #[cfg(feature = "parallel")]
            Exec::Parallel { workers } => {
                use rayon::prelude::*;
                let run = || (0..len).into_par_iter().map(&f).collect();
                in_pool(workers, run)
            }
            _ => (0..len).map(f).collect(),
        }
    }

    /// Maps `f` over the items of `items`, preserving order.
    pub fn map_slice<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.map_range(items.len(), |i| f(&items[i]))
    }

    /// Sums `f(i)` over `0..len` with a fixed chunked reduction tree.
    pub fn sum_range<F>(&self, len: usize, f: F) -> f64
    where
        F: Fn(usize) -> f64 + Sync + Send,
    {
        let chunks = len.div_ceil(REDUCE_CHUNK);
        let partials = self.map_range(chunks, |c| {
            let start = c * REDUCE_CHUNK;
            let end = (start + REDUCE_CHUNK).min(len);
            (start..end).map(&f).sum::<f64>()
        });
        partials.into_iter().sum()
    }

    /// Elementwise sum of vector-valued `f(i)` over `0..len`, chunked as in
    /// [`Exec::sum_range`].
    pub fn sum_vec_range<F>(&self, len: usize, width: usize, f: F) -> Vec<f64>
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let chunks = len.div_ceil(REDUCE_CHUNK);
        let partials = self.map_range(chunks, |c| {
            let start = c * REDUCE_CHUNK;
            let end = (start + REDUCE_CHUNK).min(len);
            let mut acc = vec![0.0; width];
            for i in start..end {
                f(i, &mut acc);
            }
            acc
        });
        let mut total = vec![0.0; width];
        for p in partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
    }
}

#[cfg(feature = "parallel")]
fn in_pool<R: Send>(workers: usize, run: impl FnOnce() -> R + Send) -> R {
    if workers == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}
