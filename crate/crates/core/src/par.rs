//! Execution mode for data-parallel loops.
//!
//! Every parallel loop in the crate goes through [`Exec`] so the sequential
//! and rayon paths produce element-wise identical output: work items are
//! independent and results are collected in input order.

/// How a batch of independent work items is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Rayon work stealing. Without the `parallel` feature this runs
    /// sequentially.
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Fallible map; the first error in input order is returned.
    pub fn try_map<T, R, E, F>(self, items: &[T], f: F) -> Result<Vec<R>, E>
    where
        T: Sync,
        R: Send,
        E: Send,
        F: Fn(&T) -> Result<R, E> + Sync + Send,
    {
        self.map(items, f).into_iter().collect()
    }

    /// Fills `out[i] = f(i)` in chunks of `chunk` elements.
    pub fn fill_chunked<R, F>(self, out: &mut [R], chunk: usize, f: F)
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() {
            use rayon::prelude::*;
            let chunk = chunk.max(1);
            out.par_chunks_mut(chunk).enumerate().for_each(|(c, slot)| {
                let base = c * chunk;
                for (i, v) in slot.iter_mut().enumerate() {
                    *v = f(base + i);
                }
            });
            return;
        }
        let _ = chunk;
        for (i, v) in out.iter_mut().enumerate() {
            *v = f(i);
        }
    }

    /// Runs `op` inside a pool limited to `threads` workers when parallel.
    pub fn install<R, F>(self, threads: usize, op: F) -> R
    where
        R: Send,
        F: FnOnce() -> R + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && threads > 0 {
            if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
                return pool.install(op);
            }
        }
        let _ = threads;
        op()
    }
}
