//! Data-parallel mapping with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool,
//! optionally bounded by a fan-out limit. Without it, or in
//! [`ExecMode::Sequential`], items run in order on the calling thread. Output
//! order always follows input order.

use std::fmt;
#[cfg(feature = "parallel")]
use std::sync::Arc;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

#[derive(Clone)]
pub struct Executor {
    mode: ExecMode,
    #[cfg(feature = "parallel")]
    pool: Option<Arc<rayon::ThreadPool>>,
    fan_out: Option<usize>,
}

impl fmt::Debug for Executor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Executor").field("mode", &self.mode).field("fan_out", &self.fan_out).finish()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Self::parallel(None)
    }
}

impl Executor {
    pub fn sequential() -> Self {
        Self {
            mode: ExecMode::Sequential,
            #[cfg(feature = "parallel")]
            pool: None,
            fan_out: Some(1),
        }
    }

    /// Parallel executor; `fan_out` bounds the worker count (`None` uses the
    /// global pool). Falls back to sequential when built without `parallel`
    /// or when `fan_out` is 1.
    pub fn parallel(fan_out: Option<usize>) -> Self {
        if fan_out == Some(1) || !cfg!(feature = "parallel") {
            return Self { fan_out, ..Self::sequential() };
        }
        #[cfg(feature = "parallel")]
        {
            let pool = fan_out.and_then(|n| rayon::ThreadPoolBuilder::new().num_threads(n).build().ok().map(Arc::new));
            Self { mode: ExecMode::Parallel, pool, fan_out }
        }
        #[cfg(not(feature = "parallel"))]
        unreachable!()
    }

    pub fn new(mode: ExecMode, fan_out: Option<usize>) -> Self {
        match mode {
            ExecMode::Sequential => Self::sequential(),
            ExecMode::Parallel => Self::parallel(fan_out),
        }
    }

    pub fn mode(&self) -> ExecMode {
        self.mode
    }

    pub fn fan_out(&self) -> Option<usize> {
        self.fan_out
    }

    /// `f(i, &items[i])` for every item, results in input order.
    pub fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match self.mode {
            ExecMode::Sequential => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
            ExecMode::Parallel => self.par_map(items, f),
        }
    }

    /// `f(i)` for `i in 0..n`, results in index order.
    pub fn map_range<R, F>(&self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Sync + Send,
    {
        let indices: Vec<usize> = (0..n).collect();
        self.map(&indices, |_, &i| f(i))
    }

    #[cfg(feature = "parallel")]
    fn par_map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        use rayon::prelude::*;
        let run = || items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
        match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn par_map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
    }
}
