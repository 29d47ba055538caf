//! Worker-pool sizing.

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "VNEGNN_THREADS";

/// Worker count: `VNEGNN_THREADS` when set to a positive integer, otherwise
/// the available parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Run `f` inside a pool of [`worker_threads`] threads.
pub fn with_pool<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(worker_threads()).build() {
        Ok(pool) => pool.install(f),
        Err(e) => {
            log::warn!("could not build worker pool ({e}); running on the global pool");
            f()
        }
    }
}
