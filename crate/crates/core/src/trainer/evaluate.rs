use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::checkpoint::Checkpoint;
use super::config::Mode;
use crate::encoder::{sample_z, ContextEncoder, PosteriorGaussian};
use crate::env::{oracle_context, rollout, TaskSpec, Trajectory, Transition};
use crate::nn::ParamVector;
use crate::policy::{policy_act, Actor};
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

/// Anything that can be meta-tested: a context-conditioned policy plus a
/// way to infer the context from exploration data.
pub trait Agent {
    fn action_dim(&self) -> usize;
    fn context_dim(&self) -> usize;
    /// Whether the agent needs exploration rollouts before evaluation.
    fn explores(&self) -> bool {
        true
    }
    fn act(&self, state: &[f64], z: &[f64], rng: &mut StreamRng, deterministic: bool) -> Result<Vec<f64>>;
    fn infer_context(
        &self,
        task: &TaskSpec,
        exploration: &[Trajectory],
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>>;
}

/// Frozen learner parameters for evaluation and analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicySnapshot {
    pub mode: Mode,
    pub actor: Actor,
    pub encoder: Option<(ContextEncoder, ParamVector)>,
}

impl PolicySnapshot {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let encoder = match (&ckpt.encoder, ckpt.config.mode) {
            (_, Mode::Oracle) => None,
            (Some(pair), _) => Some((pair.encoder.clone(), pair.query_params.clone())),
            (None, mode) => {
                return Err(Error::Config(format!(
                    "checkpoint for mode `{mode}` carries no context encoder"
                )))
            }
        };
        Ok(PolicySnapshot {
            mode: ckpt.config.mode,
            actor: ckpt.actor.clone(),
            encoder,
        })
    }

    /// Query-encoder posterior over all given transitions.
    pub fn posterior(&self, transitions: &[Transition]) -> Result<PosteriorGaussian> {
        let (encoder, params) = self
            .encoder
            .as_ref()
            .ok_or_else(|| Error::Usage("oracle policies have no context encoder".into()))?;
        encoder.posterior(params, transitions)
    }
}

impl Agent for PolicySnapshot {
    fn action_dim(&self) -> usize {
        self.actor.action_dim
    }

    fn context_dim(&self) -> usize {
        self.actor.context_dim
    }

    fn explores(&self) -> bool {
        self.mode != Mode::Oracle
    }

    fn act(&self, state: &[f64], z: &[f64], rng: &mut StreamRng, deterministic: bool) -> Result<Vec<f64>> {
        policy_act(&self.actor, state, z, rng, deterministic)
    }

    fn infer_context(
        &self,
        task: &TaskSpec,
        exploration: &[Trajectory],
        rng: &mut StreamRng,
    ) -> Result<Vec<f64>> {
        if self.mode == Mode::Oracle {
            return oracle_context(task, self.context_dim());
        }
        let transitions: Vec<Transition> = exploration
            .iter()
            .flat_map(|t| t.transitions.iter().cloned())
            .collect();
        let posterior = self.posterior(&transitions)?;
        Ok(sample_z(&posterior, rng).z)
    }
}

/// Uniformly random actions; the reference point for "better than chance".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RandomAgent {
    pub action_dim: usize,
    pub context_dim: usize,
}

impl Agent for RandomAgent {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn context_dim(&self) -> usize {
        self.context_dim
    }

    fn explores(&self) -> bool {
        false
    }

    fn act(&self, _state: &[f64], _z: &[f64], rng: &mut StreamRng, _deterministic: bool) -> Result<Vec<f64>> {
        Ok((0..self.action_dim).map(|_| rng.random_range(-1.0..=1.0)).collect())
    }

    fn infer_context(&self, _: &TaskSpec, _: &[Trajectory], _: &mut StreamRng) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.context_dim])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskEvaluation {
    pub task_index: usize,
    /// Undiscounted return of each evaluation rollout.
    pub returns: Vec<f64>,
}

impl TaskEvaluation {
    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len() as f64
    }

    /// Standard error of the mean; zero for a single rollout.
    pub fn std_error(&self) -> f64 {
        let n = self.returns.len();
        if n < 2 {
            return 0.0;
        }
        let m = self.mean_return();
        let var = self.returns.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / (n - 1) as f64;
        libm::sqrt(var / n as f64)
    }
}

fn run_episode(
    agent: &dyn Agent,
    task: &TaskSpec,
    task_index: usize,
    z: &[f64],
    deterministic: bool,
    rng: &mut StreamRng,
) -> Result<Trajectory> {
    let mut failure = None;
    let traj = rollout(task, task_index, 0, rng, |s, rng| {
        match agent.act(s, z, rng, deterministic) {
            Ok(a) => a,
            Err(e) => {
                failure.get_or_insert(e);
                vec![0.0; agent.action_dim()]
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(traj),
    }
}

/// Meta-test adaptation with frozen parameters.
///
/// Per task: `n_exploration` stochastic rollouts with `z ~ N(0, I)`, context
/// inference from all their transitions, then `n_eval` deterministic rollouts
/// conditioned on the inferred context. Randomness for task `i` comes from the
/// evaluation stream keyed by `(round, i)`.
pub fn meta_test(
    agent: &dyn Agent,
    tasks: &[TaskSpec],
    n_exploration: usize,
    n_eval: usize,
    seed: u64,
    round: u64,
) -> Result<Vec<TaskEvaluation>> {
    if n_eval == 0 {
        return Err(Error::Config("n_eval must be at least 1".into()));
    }
    tasks
        .iter()
        .enumerate()
        .map(|(i, task)| {
            let mut rng = rng::derive(seed, rng::Stream::Evaluation, round, i as u64);
            let mut exploration = Vec::new();
            if agent.explores() {
                for _ in 0..n_exploration {
                    let z = sample_z(&PosteriorGaussian::unit(agent.context_dim()), &mut rng).z;
                    exploration.push(run_episode(agent, task, i, &z, false, &mut rng)?);
                }
            }
            let z = agent.infer_context(task, &exploration, &mut rng)?;
            let returns = (0..n_eval)
                .map(|_| run_episode(agent, task, i, &z, true, &mut rng).map(|t| t.total_reward()))
                .collect::<Result<Vec<f64>>>()?;
            Ok(TaskEvaluation {
                task_index: i,
                returns,
            })
        })
        .collect()
}

/// Mean of per-task mean returns.
pub fn mean_return(evals: &[TaskEvaluation]) -> f64 {
    evals.iter().map(TaskEvaluation::mean_return).sum::<f64>() / evals.len() as f64
}
