use rayon::prelude::*;

/// Maps `f` over `items` on at most `limit` worker threads. Output order
/// matches input order regardless of completion order.
pub(crate) fn bounded_map<T, R, F>(items: &[T], limit: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if limit <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(limit).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(e) => {
            log::warn!("falling back to sequential execution: {e}");
            items.iter().map(f).collect()
        }
    }
}
