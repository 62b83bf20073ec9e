use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::encoder::{EncoderPair, PosteriorGaussian, WindowEncoding};
use crate::replay::{TaskReplayBuffer, TransitionWindow};
use crate::tcl::QueryKeyBatch;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryKeyOptions {
    pub window_size: usize,
    /// Encode key windows with the momentum encoder. Without keys the sets
    /// only supply RL contexts.
    pub encode_keys: bool,
    /// Append, per task, a second pair from a different trajectory of the
    /// same task.
    pub same_task_negatives: bool,
}

/// One positive pair: two windows of the same trajectory.
#[derive(Debug, Clone)]
pub struct QueryKeyPair {
    pub task: usize,
    pub query_window: TransitionWindow,
    pub key_window: TransitionWindow,
    pub query: WindowEncoding,
    pub key: Option<PosteriorGaussian>,
}

/// Index-aligned queries and keys. The first entries hold one pair per
/// meta-batch task, in meta-batch order; same-task extra pairs follow.
#[derive(Debug, Clone)]
pub struct QueryKeySets {
    pub pairs: Vec<QueryKeyPair>,
}

impl QueryKeySets {
    /// The contrastive batch, or `None` when keys were not encoded.
    pub fn batch(&self) -> Result<Option<QueryKeyBatch>> {
        let mut queries = Vec::with_capacity(self.pairs.len());
        let mut keys = Vec::with_capacity(self.pairs.len());
        for p in &self.pairs {
            match &p.key {
                Some(k) => {
                    queries.push(p.query.posterior.clone());
                    keys.push(k.clone());
                }
                None => return Ok(None),
            }
        }
        QueryKeyBatch::new(queries, keys).map(Some)
    }
}

/// Draws one same-trajectory window pair per task, encoding the first
/// window with the query parameters and, when requested, the second with
/// the key parameters.
pub fn build_query_key_sets<R: Rng + ?Sized>(
    buffers: &[TaskReplayBuffer],
    pair: &EncoderPair,
    tasks: &[usize],
    options: &QueryKeyOptions,
    rng: &mut R,
) -> Result<QueryKeySets> {
    let encode = |task: usize, exclude: Option<u64>, rng: &mut R| -> Result<QueryKeyPair> {
        let buffer = buffers.get(task).ok_or_else(|| {
            Error::Usage(format!("task {task} has no buffer ({} buffers)", buffers.len()))
        })?;
        let (query_window, key_window) =
            buffer.sample_window_pair_excluding(options.window_size, exclude, rng)?;
        let query = pair.encoder.encode(&pair.query_params, &query_window.transitions)?;
        let key = if options.encode_keys {
            Some(pair.encoder.posterior(&pair.key_params, &key_window.transitions)?)
        } else {
            None
        };
        Ok(QueryKeyPair {
            task,
            query_window,
            key_window,
            query,
            key,
        })
    };
    let mut pairs = Vec::with_capacity(tasks.len());
    for &t in tasks {
        pairs.push(encode(t, None, rng)?);
    }
    if options.same_task_negatives {
        for i in 0..tasks.len() {
            let exclude = pairs[i].query_window.source_trajectory_id;
            let extra = encode(tasks[i], Some(exclude), rng)?;
            pairs.push(extra);
        }
    }
    Ok(QueryKeySets { pairs })
}
