use alloc::vec::Vec;

/// Runs independent jobs and returns their results in job order.
///
/// Implementations may use worker threads; callers reduce the results in
/// order, so the outcome does not depend on the implementation.
pub trait Executor {
    fn run<R, F>(&self, jobs: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn run<R, F>(&self, jobs: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync,
    {
        (0..jobs).map(f).collect()
    }
}
