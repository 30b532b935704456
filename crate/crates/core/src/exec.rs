//! Execution strategy for independent replicates.

use alloc::vec::Vec;

/// Maps `f` over `0..len`, returning results in index order.
///
/// Implementations may evaluate indices in any order or concurrently, but
/// must place result `i` at position `i`. Everything in this crate that runs
/// replicates is generic over this trait, so output never depends on the
/// executor.
pub trait Executor: Sync {
    fn map_indexed<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_indexed<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..len).map(f).collect()
    }
}
