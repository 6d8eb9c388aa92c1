//! Data-parallel building blocks with a sequential fallback.
//!
//! With the `parallel` feature (default) the [`Execution::Parallel`] strategy
//! runs on the rayon thread pool; without it every strategy runs
//! sequentially. Both paths produce results in input order.
//!
//! Reductions come in two flavours. [`Execution::reduce_chunks`] partitions
//! the input into fixed-size chunks, folds each chunk in order and merges the
//! chunk results left to right, so floating-point sums are identical for any
//! thread count. [`Execution::reduce_any`] lets the scheduler choose the tree
//! and is only reproducible in sequential mode.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }

    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        if self.is_parallel() {
            parallel::map(items, f)
        } else {
            sequential::map(items, f)
        }
    }

    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        if self.is_parallel() {
            parallel::map_range(n, f)
        } else {
            sequential::map_range(n, f)
        }
    }

    pub fn reduce_chunks<T, A, I, F, M>(self, items: &[T], chunk: usize, init: I, fold: F, merge: M) -> A
    where
        T: Sync,
        A: Send,
        I: Fn() -> A + Sync + Send,
        F: Fn(&mut A, &T) + Sync + Send,
        M: Fn(&mut A, A) + Sync + Send,
    {
        if self.is_parallel() {
            parallel::reduce_chunks(items, chunk, init, fold, merge)
        } else {
            sequential::reduce_chunks(items, chunk, init, fold, merge)
        }
    }

    pub fn reduce_any<T, A, I, F, M>(self, items: &[T], init: I, fold: F, merge: M) -> A
    where
        T: Sync,
        A: Send,
        I: Fn() -> A + Sync + Send,
        F: Fn(&mut A, &T) + Sync + Send,
        M: Fn(&mut A, A) + Sync + Send,
    {
        if self.is_parallel() {
            parallel::reduce_any(items, init, fold, merge)
        } else {
            let mut acc = init();
            items.iter().for_each(|t| fold(&mut acc, t));
            acc
        }
    }
}

pub mod sequential {
    pub fn map<T, R>(items: &[T], f: impl Fn(&T) -> R) -> Vec<R> {
        items.iter().map(f).collect()
    }

    pub fn map_range<R>(n: usize, f: impl Fn(usize) -> R) -> Vec<R> {
        (0..n).map(f).collect()
    }

    pub fn reduce_chunks<T, A>(
        items: &[T],
        chunk: usize,
        init: impl Fn() -> A,
        fold: impl Fn(&mut A, &T),
        merge: impl Fn(&mut A, A),
    ) -> A {
        let mut chunks = items.chunks(chunk.max(1)).map(|c| {
            let mut acc = init();
            c.iter().for_each(|t| fold(&mut acc, t));
            acc
        });
        let mut total = chunks.next().unwrap_or_else(&init);
        for part in chunks {
            merge(&mut total, part);
        }
        total
    }
}

#[cfg(feature = "parallel")]
pub mod parallel {
    use rayon::prelude::*;

    pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.par_iter().map(f).collect()
    }

    pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        (0..n).into_par_iter().map(f).collect()
    }

    pub fn reduce_chunks<T, A, I, F, M>(items: &[T], chunk: usize, init: I, fold: F, merge: M) -> A
    where
        T: Sync,
        A: Send,
        I: Fn() -> A + Sync + Send,
        F: Fn(&mut A, &T) + Sync + Send,
        M: Fn(&mut A, A) + Sync + Send,
    {
        let parts: Vec<A> = items
            .par_chunks(chunk.max(1))
            .map(|c| {
                let mut acc = init();
                c.iter().for_each(|t| fold(&mut acc, t));
                acc
            })
            .collect();
        let mut parts = parts.into_iter();
        let mut total = parts.next().unwrap_or_else(&init);
        for part in parts {
            merge(&mut total, part);
        }
        total
    }

    pub fn reduce_any<T, A, I, F, M>(items: &[T], init: I, fold: F, merge: M) -> A
    where
        T: Sync,
        A: Send,
        I: Fn() -> A + Sync + Send,
        F: Fn(&mut A, &T) + Sync + Send,
        M: Fn(&mut A, A) + Sync + Send,
    {
        items
            .par_iter()
            .fold(&init, |mut acc, t| {
                fold(&mut acc, t);
                acc
            })
            .reduce(&init, |mut a, b| {
                merge(&mut a, b);
                a
            })
    }
}

/// Sequential stand-ins so callers compile without the `parallel` feature.
#[cfg(not(feature = "parallel"))]
pub mod parallel {
    pub use super::sequential::{map, map_range, reduce_chunks};

    pub fn reduce_any<T, A>(
        items: &[T],
        init: impl Fn() -> A,
        fold: impl Fn(&mut A, &T),
        _merge: impl Fn(&mut A, A),
    ) -> A {
        let mut acc = init();
        items.iter().for_each(|t| fold(&mut acc, t));
        acc
    }
}
