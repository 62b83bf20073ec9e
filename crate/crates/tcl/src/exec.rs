use rayon::prelude::*;
use tcl_core::trainer::{Executor, Sequential};

/// Runs per-task collection on the rayon pool. Results keep input order, so
/// logs match [`Sequential`] exactly.
#[derive(Debug, Clone, Copy, Default)]
pub struct RayonExecutor;

impl Executor for RayonExecutor {
    fn map<T: Send, U: Send, F: Fn(T) -> U + Sync + Send>(&self, items: Vec<T>, f: F) -> Vec<U> {
        items.into_par_iter().map(f).collect()
    }
}

/// Either executor, picked at run time.
#[derive(Debug, Clone, Copy)]
pub enum AnyExecutor {
    Sequential,
    Parallel,
}

impl AnyExecutor {
    pub fn new(parallel: bool) -> Self {
        if parallel {
            AnyExecutor::Parallel
        } else {
            AnyExecutor::Sequential
        }
    }
}

impl Executor for AnyExecutor {
    fn map<T: Send, U: Send, F: Fn(T) -> U + Sync + Send>(&self, items: Vec<T>, f: F) -> Vec<U> {
        match self {
            AnyExecutor::Sequential => Sequential.map(items, f),
            AnyExecutor::Parallel => RayonExecutor.map(items, f),
        }
    }
}
