//! Sequential or rayon-backed execution of independent work items.
//!
//! Without the `parallel` feature every [`Execution`] runs sequentially.
//! Results are always returned in input order, so the choice never changes
//! output bits.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

impl Execution {
    /// Whether work is actually dispatched to the thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over `items`, preserving order.
pub fn map<T, R, F>(exec: Execution, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Maps `f` over consecutive `chunk`-sized pieces of `items`, preserving order.
pub fn map_chunks<T, R, F>(exec: Execution, items: &[T], chunk: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&[T]) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_chunks(chunk).map(f).collect();
    }
    let _ = exec;
    items.chunks(chunk).map(f).collect()
}

/// Applies a fallible `f` to each element mutably, stopping at the first error
/// in sequential mode. In parallel mode the first error by index is returned.
pub fn try_for_each_mut<T, E, F>(exec: Execution, items: &mut [T], f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &mut T) -> Result<(), E> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        let results: Vec<Result<(), E>> =
            items.par_iter_mut().enumerate().map(|(i, t)| f(i, t)).collect();
        return results.into_iter().collect();
    }
    let _ = exec;
    items.iter_mut().enumerate().try_for_each(|(i, t)| f(i, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        let v: Vec<u64> = (0..1000).collect();
        for exec in [Execution::Sequential, Execution::Parallel] {
            assert_eq!(map(exec, &v, |x| x * 2), v.iter().map(|x| x * 2).collect::<Vec<_>>());
            let sums = map_chunks(exec, &v, 7, |c| c.iter().sum::<u64>());
            assert_eq!(sums.len(), 143);
            assert_eq!(sums.iter().sum::<u64>(), v.iter().sum::<u64>());
        }
    }

    #[test]
    fn first_error_wins() {
        let mut v = vec![0usize; 10];
        for exec in [Execution::Sequential, Execution::Parallel] {
            let r = try_for_each_mut(exec, &mut v, |i, x| {
                *x += 1;
                if i >= 4 { Err(i) } else { Ok(()) }
            });
            assert_eq!(r, Err(4));
        }
    }
}
