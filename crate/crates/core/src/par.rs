//! Ordered maps over a slice, on rayon when the `parallel` feature is enabled
//! and the caller asks for it, sequentially otherwise. Output order always
//! matches input order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Threads in the pool used for blocking backend calls. Those calls mostly
/// wait on the network, so the pool is not sized by core count.
pub const BLOCKING_POOL_THREADS: usize = 16;

#[cfg(feature = "parallel")]
fn blocking_pool() -> &'static rayon::ThreadPool {
    static POOL: std::sync::OnceLock<rayon::ThreadPool> = std::sync::OnceLock::new();
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(BLOCKING_POOL_THREADS)
            .thread_name(|i| format!("adept-call-{i}"))
            .build()
            .expect("thread pool builds")
    })
}

pub fn map_ordered<T, R, F>(parallel: bool, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(f).collect();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Like [`map_ordered`], for closures that block (backend calls). Runs on a
/// dedicated pool so that waiting calls overlap even on a single core.
pub fn map_blocking<T, R, F>(parallel: bool, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel && items.len() > 1 {
        return blocking_pool().install(|| items.par_iter().with_max_len(1).map(f).collect());
    }
    #[cfg(not(feature = "parallel"))]
    let _ = parallel;
    items.iter().map(f).collect()
}

/// Whether this build can run work in parallel at all.
pub const fn parallel_available() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order_both_ways() {
        let items: Vec<u32> = (0..1000).collect();
        let seq = map_ordered(false, &items, |x| x * 3);
        let par = map_ordered(true, &items, |x| x * 3);
        assert_eq!(seq, par);
        assert_eq!(seq[999], 2997);
        assert_eq!(map_blocking(true, &items, |x| x * 3), seq);
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn blocking_calls_overlap() {
        let items: Vec<u64> = (0..8).collect();
        let start = std::time::Instant::now();
        map_blocking(true, &items, |_| std::thread::sleep(std::time::Duration::from_millis(50)));
        assert!(start.elapsed() < std::time::Duration::from_millis(300), "{:?}", start.elapsed());
    }
}
