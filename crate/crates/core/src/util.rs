//! Internal parallelism helpers.

/// Number of worker threads to use, capped by the `OSWATCH_THREADS`
/// environment variable. Defaults to the available parallelism, at most 8.
pub fn thread_cap() -> usize {
    if cfg!(target_family = "wasm") {
        return 1;
    }
    let default = std::thread::available_parallelism()
        .map(|n| n.get().min(8))
        .unwrap_or(1);
    match std::env::var("OSWATCH_THREADS") {
        Ok(v) => v.trim().parse::<usize>().ok().filter(|&n| n >= 1).unwrap_or(default),
        Err(_) => default,
    }
}

/// Maps `f` over `0..n`, preserving index order in the output. Work is split
/// across threads in contiguous chunks; each result lands in its own slot, so
/// the output is identical for every thread count.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = thread_cap().min(n.max(1));
    if threads <= 1 || n < 64 || cfg!(target_family = "wasm") {
        return (0..n).map(f).collect();
    }
    let mut slots: Vec<Option<T>> = Vec::with_capacity(n);
    slots.resize_with(n, || None);
    let chunk = n.div_ceil(threads);
    std::thread::scope(|scope| {
        for (c, out) in slots.chunks_mut(chunk).enumerate() {
            let f = &f;
            scope.spawn(move || {
                let base = c * chunk;
                for (k, slot) in out.iter_mut().enumerate() {
                    *slot = Some(f(base + k));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
}
