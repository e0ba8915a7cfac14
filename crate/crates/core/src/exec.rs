//! Order-preserving parallel map. With the `parallel` feature the work runs
//! on a dedicated rayon pool of the requested size; without it, or with a
//! parallelism of 1, items are processed sequentially in order.

/// Applies `f` to every item and returns results in input order,
/// regardless of completion order.
pub fn map_ordered<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    if parallelism <= 1 || items.len() <= 1 {
        return sequential(items, f);
    }
    parallel(items, parallelism, f)
}

fn sequential<T, R, F: Fn(usize, &T) -> R>(items: &[T], f: F) -> Vec<R> {
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(feature = "parallel")]
fn parallel<T, R, F>(items: &[T], parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(parallelism).build() {
        Ok(pool) => pool.install(|| items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect()),
        Err(e) => {
            log::warn!("cannot start a worker pool ({e}); running sequentially");
            sequential(items, f)
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn parallel<T, R, F>(items: &[T], _parallelism: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    sequential(items, f)
}

/// Whether this build can run work in parallel.
pub const fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
