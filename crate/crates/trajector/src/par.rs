//! Small worker-pool helper for track-level parallelism, plus atomic file
//! writes. The pool size is capped by the `TRAJECTOR_THREADS` environment
//! variable.

use std::path::Path;
use std::sync::OnceLock;
use std::sync::atomic::{AtomicUsize, Ordering};

/// Worker count: `TRAJECTOR_THREADS` if set, else available parallelism.
pub fn worker_threads() -> usize {
    if let Ok(v) = std::env::var("TRAJECTOR_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Apply `f` to every item on a worker pool, returning results in input
/// order. Output order is independent of scheduling, so results are
/// deterministic whenever `f` is.
pub fn par_map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send + Sync,
    F: Fn(&T) -> U + Sync,
{
    let n_workers = worker_threads().min(items.len().max(1));
    if n_workers <= 1 {
        return items.iter().map(|t| f(t)).collect();
    }
    let slots: Vec<OnceLock<U>> = (0..items.len()).map(|_| OnceLock::new()).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..n_workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let _ = slots[i].set(f(&items[i]));
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.into_inner().expect("every slot filled by the pool"))
        .collect()
}

/// Write via a temp file in the same directory, then rename into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp~");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}
