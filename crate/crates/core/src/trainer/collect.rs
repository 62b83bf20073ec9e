use alloc::vec::Vec;

use rand::Rng;

use crate::encoder::{sample_z, ContextEmbedding, ContextEncoder, PosteriorGaussian};
use crate::env::{rollout, TaskSpec, Trajectory};
use crate::nn::ParamVector;
use crate::policy::{policy_act, Actor};
use crate::replay::TaskReplayBuffer;
use crate::Result;

/// Where the context conditioning a rollout comes from.
#[derive(Debug, Clone, Copy)]
pub enum ContextSource<'a> {
    /// `z ~ N(0, I)`, drawn fresh per rollout.
    Prior,
    /// `z` sampled from the query-encoder posterior of a window cropped from
    /// the task's buffer, fresh per rollout.
    Posterior {
        encoder: &'a ContextEncoder,
        params: &'a ParamVector,
        buffer: &'a TaskReplayBuffer,
        window_size: usize,
    },
    /// A fixed context, such as the oracle task vector.
    Fixed(&'a [f64]),
}

/// A collected trajectory with the context its policy was conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub context: ContextEmbedding,
}

/// Runs `count` stochastic-policy episodes to the task horizon. Trajectory
/// ids are assigned consecutively from `first_trajectory_id`.
pub fn collect_rollouts<R: Rng + ?Sized>(
    task: &TaskSpec,
    task_id: usize,
    source: ContextSource<'_>,
    count: usize,
    actor: &Actor,
    first_trajectory_id: u64,
    rng: &mut R,
) -> Result<Vec<Rollout>> {
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let context = match source {
            ContextSource::Prior => sample_z(&PosteriorGaussian::unit(actor.context_dim), rng),
            ContextSource::Posterior {
                encoder,
                params,
                buffer,
                window_size,
            } => {
                let window = buffer.sample_window(window_size, rng)?;
                let posterior = encoder.posterior(params, &window.transitions)?;
                sample_z(&posterior, rng)
            }
            ContextSource::Fixed(z) => ContextEmbedding::fixed(z.to_vec()),
        };
        let mut failure = None;
        let trajectory = rollout(task, task_id, first_trajectory_id + k as u64, rng, |s, rng| {
            match policy_act(actor, s, &context.z, rng, false) {
                Ok(a) => a,
                Err(e) => {
                    failure.get_or_insert(e);
                    alloc::vec![0.0; actor.action_dim]
                }
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        out.push(Rollout {
            trajectory,
            context,
        });
    }
    Ok(out)
}

/// Runs independent jobs and returns their results in input order.
///
/// Implementations may run jobs concurrently; callers derive every job's
/// randomness from its own stream so the result never depends on the
/// schedule.
pub trait Executor {
    fn map<T, U, F>(&self, items: Vec<T>, f: F) -> Vec<U>
    where
        T: Send,
        U: Send,
        F: Fn(T) -> U + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, U, F>(&self, items: Vec<T>, f: F) -> Vec<U>
    where
        T: Send,
        U: Send,
        F: Fn(T) -> U + Sync + Send,
    {
        items.into_iter().map(f).collect()
    }
}
