//! Order-preserving map over independent work items.
//!
//! With the `parallel` feature the work runs on a dedicated rayon pool of the
//! requested size; without it (or with `jobs <= 1`) it runs sequentially. Results
//! come back in input order either way, so output never depends on the job count.

use std::cell::Cell;

thread_local! {
    static DEPTH: Cell<usize> = const { Cell::new(0) };
}

/// True while running inside a work item of [`map_ordered`], whatever the job
/// count. Loggers use it to keep per-item records out of ordered sinks.
pub fn in_worker() -> bool {
    DEPTH.with(|d| d.get() > 0)
}

struct DepthGuard;

impl DepthGuard {
    fn enter() -> Self {
        DEPTH.with(|d| d.set(d.get() + 1));
        DepthGuard
    }
}

impl Drop for DepthGuard {
    fn drop(&mut self) {
        DEPTH.with(|d| d.set(d.get() - 1));
    }
}

/// Maps `f` over `items`, using up to `jobs` worker threads.
pub fn map_ordered<T, R, F>(jobs: usize, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    let f = |x: &T| {
        let _guard = DepthGuard::enter();
        f(x)
    };
    #[cfg(feature = "parallel")]
    {
        if jobs > 1 && items.len() > 1 {
            use rayon::prelude::*;
            match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
                Ok(pool) => return pool.install(|| items.par_iter().map(&f).collect()),
                Err(e) => {
                    log::warn!("could not start {jobs} worker threads ({e}); running sequentially")
                }
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    if jobs > 1 {
        log::debug!("built without the parallel feature; ignoring jobs={jobs}");
    }
    items.iter().map(f).collect()
}
