//! Deterministic fan-out over scoped threads.

use std::num::NonZeroUsize;
use std::thread;

/// Worker count used when the caller passes 0.
pub fn default_workers() -> usize {
    thread::available_parallelism().map(NonZeroUsize::get).unwrap_or(1)
}

/// Maps `f` over `items` using `workers` threads with a static block partition.
/// The output order matches the input order whatever the worker count.
pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = if workers == 0 { default_workers() } else { workers };
    let workers = workers.min(items.len()).max(1);
    if workers == 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|block| {
                let f = &f;
                scope.spawn(move || block.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("scan worker panicked"))
            .collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_workers() {
        let items: Vec<u64> = (0..1000).collect();
        let one = par_map(&items, 1, |v| v * v + 1);
        for w in [2, 3, 7, 64] {
            assert_eq!(par_map(&items, w, |v| v * v + 1), one);
        }
        assert!(par_map(&Vec::<u64>::new(), 4, |v| *v).is_empty());
    }
}
