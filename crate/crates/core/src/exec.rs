//! Order-preserving parallel map abstraction.
//!
//! The core crate never spawns threads itself. Batch operations take an
//! [`Executor`]; [`Sequential`] runs on the caller's thread, and the std
//! companion crate provides a thread-pool implementation. Every
//! implementation must return results in index order so that outputs do
//! not depend on the worker count.

use alloc::vec::Vec;

pub trait Executor: Sync {
    /// Evaluates `f(i)` for `i in 0..len`, returning results in index order.
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;

    /// Like [`map`](Executor::map), with per-worker scratch state built by
    /// `init`. Scratch is reused across indices handled by the same worker.
    fn map_init<S, T, I, F>(&self, len: usize, init: I, f: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, usize) -> T + Sync + Send;

    fn workers(&self) -> usize;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..len).map(f).collect()
    }

    fn map_init<S, T, I, F>(&self, len: usize, init: I, f: F) -> Vec<T>
    where
        T: Send,
        I: Fn() -> S + Sync + Send,
        F: Fn(&mut S, usize) -> T + Sync + Send,
    {
        let mut scratch = init();
        (0..len).map(|i| f(&mut scratch, i)).collect()
    }

    fn workers(&self) -> usize {
        1
    }
}
