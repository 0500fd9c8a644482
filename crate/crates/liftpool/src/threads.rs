//! Optional worker-thread cap, driven by the `LIFTPOOL_THREADS` environment
//! variable in the CLI. Work is only ever split over disjoint output planes,
//! so results are identical for every thread count. Default is 1.

use std::sync::atomic::{AtomicUsize, Ordering};

static MAX_THREADS: AtomicUsize = AtomicUsize::new(1);

pub fn set_max_threads(n: usize) {
    MAX_THREADS.store(n.max(1), Ordering::Relaxed);
}

pub fn max_threads() -> usize {
    MAX_THREADS.load(Ordering::Relaxed)
}

/// Applies `f(plane_index, plane)` to each `plane_len` chunk of `buf`,
/// splitting the planes over at most [`max_threads`] workers.
pub fn for_each_chunk<T, F>(buf: &mut [T], plane_len: usize, plane_count: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    debug_assert_eq!(buf.len(), plane_len * plane_count);
    let workers = max_threads().min(plane_count).max(1);
    if workers == 1 {
        for (i, plane) in buf.chunks_mut(plane_len).enumerate() {
            f(i, plane);
        }
        return;
    }
    let per_worker = plane_count.div_ceil(workers);
    std::thread::scope(|scope| {
        for (t, block) in buf.chunks_mut(per_worker * plane_len).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (k, plane) in block.chunks_mut(plane_len).enumerate() {
                    f(t * per_worker + k, plane);
                }
            });
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_result_for_any_worker_count() {
        let run = |workers: usize| {
            set_max_threads(workers);
            let mut buf = vec![0usize; 24];
            for_each_chunk(&mut buf, 4, 6, |idx, plane| {
                for (j, v) in plane.iter_mut().enumerate() {
                    *v = idx * 100 + j;
                }
            });
            set_max_threads(1);
            buf
        };
        let single = run(1);
        assert_eq!(run(3), single);
        assert_eq!(run(16), single);
    }
}
