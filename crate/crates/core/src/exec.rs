//! Data-parallel execution with a sequential fallback.
//!
//! With the `parallel` feature, work runs on a dedicated rayon pool sized by
//! the requested worker count. Without it (or with one worker) everything runs
//! on the calling thread. Results are always collected in index order, and
//! each item is computed by a single closure call, so the output is identical
//! for every worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub struct Executor {
    workers: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("workers", &self.workers).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Executor::sequential()
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Executor {
            workers: 1,
            #[cfg(feature = "parallel")]
            pool: None,
        }
    }

    /// `workers == 0` means one worker per available core.
    pub fn new(workers: usize) -> Self {
        let workers =
            if workers == 0 { std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1) } else { workers };
        if workers <= 1 {
            return Executor::sequential();
        }
        #[cfg(feature = "parallel")]
        {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().ok();
            Executor { workers, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            Executor { workers }
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

    /// Evaluates `f(0..n)` and returns the results in index order.
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

    /// Runs `f(i, chunk)` over consecutive `chunk_len`-sized chunks of `data`.
    pub fn for_each_chunk<T, F>(&self, data: &mut [T], chunk_len: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if chunk_len == 0 {
            return;
        }
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            pool.install(|| data.par_chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c)));
            return;
        }
        data.chunks_mut(chunk_len).enumerate().for_each(|(i, c)| f(i, c));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_for_any_worker_count() {
        let seq = Executor::sequential().map(1000, |i| i * i);
        let par = Executor::new(4).map(1000, |i| i * i);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 999 * 999);
    }

    #[test]
    fn chunks_are_visited_once() {
        let mut v = vec![0usize; 100];
        Executor::new(3).for_each_chunk(&mut v, 10, |i, c| c.iter_mut().for_each(|x| *x += i));
        assert_eq!(v[0], 0);
        assert_eq!(v[95], 9);
    }
}
