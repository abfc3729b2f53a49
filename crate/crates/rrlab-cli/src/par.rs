//! Deterministic per-example parallelism.
//!
//! Work items are independent and keyed by index, so results land in index
//! order no matter how the chunks were scheduled. `RRLAB_THREADS` caps the
//! worker count.

/// Worker count: `RRLAB_THREADS` when set (minimum 1), otherwise the
/// available parallelism.
pub fn thread_cap() -> usize {
    if let Ok(v) = std::env::var("RRLAB_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

/// Maps `f` over `0..n` on up to [`thread_cap`] workers and returns results
/// in index order.
pub fn parallel_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = thread_cap().min(n.max(1));
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let chunk_len = n.div_ceil(workers);
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    std::thread::scope(|scope| {
        for (w, chunk) in slots.chunks_mut(chunk_len).enumerate() {
            let f = &f;
            scope.spawn(move || {
                for (j, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(f(w * chunk_len + j));
                }
            });
        }
    });
    slots.into_iter().map(|s| s.expect("every index filled")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_in_index_order() {
        let out = parallel_map(101, |i| i * i);
        for (i, v) in out.iter().enumerate() {
            assert_eq!(*v, i * i);
        }
    }

    #[test]
    fn handles_empty_and_single() {
        assert!(parallel_map(0, |i| i).is_empty());
        assert_eq!(parallel_map(1, |i| i + 7), vec![7]);
    }
}
