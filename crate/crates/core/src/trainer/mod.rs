//! Meta-training loop, meta-test protocol and the oracle learner.
//!
//! One iteration collects prior and posterior rollouts for every train task,
//! then runs a fixed number of gradient steps. Each step draws one
//! same-trajectory window pair per task. The query posterior both enters the
//! contrastive loss and conditions that task's RL losses; the key posterior
//! comes from the momentum encoder.

mod checkpoint;
mod collect;
mod config;
mod evaluate;
mod query_key;

pub use checkpoint::Checkpoint;
pub use collect::{collect_rollouts, ContextSource, Executor, Rollout, Sequential};
pub use config::{Mode, TrainConfig, PRESETS};
pub use query_key::{build_query_key_sets, QueryKeyOptions, QueryKeyPair, QueryKeySets};
pub use evaluate::{mean_return, meta_test, Agent, PolicySnapshot, RandomAgent, TaskEvaluation};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    kl_to_unit_prior, kl_to_unit_prior_grad, sample_z, ContextEmbedding, ContextEncoder,
    EncoderPair,
};
use crate::env::{oracle_context, sample_task_split, TaskSplit, Trajectory};
use crate::nn::{adam_step, AdamState};
use crate::policy::{actor_loss, critic_loss, soft_update_targets, Actor, Critics, RlBatch, SacHyperparameters};
use crate::replay::TaskReplayBuffer;
use crate::rng::{self, Stream, StreamRng};
use crate::tcl::{tcl_loss, tcl_loss_backward};
use crate::{Error, Result};

/// One row of the metrics log. Loss columns average over the iteration's
/// training steps; `None` marks a quantity that does not exist in the run's
/// mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub env_steps: u64,
    pub train_steps: u64,
    pub loss_tcl: Option<f64>,
    pub tcl_acc: Option<f64>,
    pub loss_q: f64,
    pub loss_pi: f64,
    pub kl: Option<f64>,
    /// Mean undiscounted return of this iteration's collected rollouts.
    pub return_train: f64,
    /// Mean meta-test return over the test tasks, when evaluated.
    pub return_test: Option<f64>,
}

/// Losses of a single gradient step. Per-task quantities are averaged over
/// the meta-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub loss_tcl: Option<f64>,
    pub tcl_acc: Option<f64>,
    pub loss_q: f64,
    pub loss_pi: f64,
    pub kl: Option<f64>,
}

/// Parameters and optimizer state updated by training.
#[derive(Debug, Clone, PartialEq)]
struct Learner {
    encoder: Option<EncoderPair>,
    actor: Actor,
    critics: Critics,
    encoder_opt: Option<AdamState>,
    actor_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
}

/// Gradients of one step, all summed over the meta-batch.
#[derive(Debug)]
struct StepGradients {
    encoder: Option<Vec<f64>>,
    actor: Vec<f64>,
    q1: Vec<f64>,
    q2: Vec<f64>,
}

/// Complete training state.
#[derive(Debug, Clone)]
pub struct Trainer {
    config: TrainConfig,
    split: TaskSplit,
    learner: Learner,
    buffers: Vec<TaskReplayBuffer>,
    env_steps: u64,
    train_steps: u64,
    iteration: u64,
    next_trajectory_id: u64,
    training_rng: StreamRng,
}

impl Trainer {
    /// Samples the task split and initializes all parameters from the seed.
    /// Buffers start empty.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let split = sample_task_split(
            config.family,
            config.n_train,
            config.n_test,
            config.horizon,
            config.discount,
            config.seed,
        )?;
        let family = config.family;
        let (ds, da, d) = (family.state_dim(), family.action_dim(), config.context_dim);
        let mut init = rng::derive(config.seed, Stream::Init, 0, 0);
        let encoder = match config.mode {
            Mode::Oracle => None,
            Mode::Tcl | Mode::Baseline => {
                let enc = ContextEncoder::new(family.transition_dim(), &config.encoder_hidden, d)?;
                Some(EncoderPair::new(enc, &mut init))
            }
        };
        let actor = Actor::new(ds, da, d, &config.policy_hidden, &mut init)?;
        let critics = Critics::new(ds, da, d, &config.policy_hidden, &mut init)?;
        let learner = Learner {
            encoder_opt: encoder.as_ref().map(|p| AdamState::new(p.query_params.len())),
            actor_opt: AdamState::new(actor.params.len()),
            q1_opt: AdamState::new(critics.q1.len()),
            q2_opt: AdamState::new(critics.q2.len()),
            encoder,
            actor,
            critics,
        };
        let buffers = (0..config.n_train)
            .map(|i| TaskReplayBuffer::new(i, config.replay_capacity))
            .collect();
        Ok(Trainer {
            training_rng: rng::derive(config.seed, Stream::Training, 0, 0),
            config,
            split,
            learner,
            buffers,
            env_steps: 0,
            train_steps: 0,
            iteration: 0,
            next_trajectory_id: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn split(&self) -> &TaskSplit {
        &self.split
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn train_steps(&self) -> u64 {
        self.train_steps
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn buffer(&self, task: usize) -> Option<&TaskReplayBuffer> {
        self.buffers.get(task)
    }

    pub fn actor(&self) -> &Actor {
        &self.learner.actor
    }

    pub fn critics(&self) -> &Critics {
        &self.learner.critics
    }

    pub fn encoder(&self) -> Option<&EncoderPair> {
        self.learner.encoder.as_ref()
    }

    /// Inserts an externally built trajectory, e.g. for synthetic buffers.
    /// Environment-step accounting is not touched.
    pub fn add_trajectory(&mut self, trajectory: Trajectory) -> Result<()> {
        let task = trajectory.task_id;
        let buffer = self.buffers.get_mut(task).ok_or_else(|| {
            Error::Usage(format!("trajectory for task {task} but only {} train tasks", self.config.n_train))
        })?;
        self.next_trajectory_id = self.next_trajectory_id.max(trajectory.trajectory_id + 1);
        buffer.add_trajectory(trajectory)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            split: self.split.clone(),
            iteration: self.iteration,
            env_steps: self.env_steps,
            train_steps: self.train_steps,
            actor: self.learner.actor.clone(),
            critics: self.learner.critics.clone(),
            encoder: self.learner.encoder.clone(),
        }
    }

    pub fn snapshot(&self) -> Result<PolicySnapshot> {
        PolicySnapshot::from_checkpoint(&self.checkpoint())
    }

    /// One prior rollout per train task.
    pub fn warmup<E: Executor>(&mut self, exec: &E) -> Result<f64> {
        self.collect(exec, 1, 0)
    }

    /// Collects `n_prior` prior and `n_posterior` posterior rollouts for each
    /// train task, in parallel over tasks. Each task draws from its own stream
    /// and trajectory ids are assigned up front, so any schedule gives the
    /// same result. Returns the mean undiscounted return collected.
    fn collect<E: Executor>(&mut self, exec: &E, n_prior: usize, n_posterior: usize) -> Result<f64> {
        let per_task = (n_prior + n_posterior) as u64;
        let first_id = self.next_trajectory_id;
        let (seed, iteration) = (self.config.seed, self.iteration);
        let learner = &self.learner;
        let buffers = &self.buffers;
        let tasks = &self.split.train_tasks;
        let window_size = self.config.window_size;
        let jobs: Vec<usize> = (0..tasks.len()).collect();
        let results = exec.map(jobs, |i| -> Result<Vec<Rollout>> {
            let mut rng = rng::derive(seed, Stream::Collection, iteration, i as u64);
            let task = &tasks[i];
            let id = first_id + i as u64 * per_task;
            let oracle_z;
            let prior_source = match &learner.encoder {
                Some(_) => ContextSource::Prior,
                None => {
                    oracle_z = oracle_context(task, learner.actor.context_dim)?;
                    ContextSource::Fixed(&oracle_z)
                }
            };
            let mut out = collect_rollouts(task, i, prior_source, n_prior, &learner.actor, id, &mut rng)?;
            if n_posterior > 0 {
                let source = match &learner.encoder {
                    Some(pair) => ContextSource::Posterior {
                        encoder: &pair.encoder,
                        params: &pair.query_params,
                        buffer: &buffers[i],
                        window_size,
                    },
                    None => prior_source,
                };
                out.extend(collect_rollouts(
                    task,
                    i,
                    source,
                    n_posterior,
                    &learner.actor,
                    id + n_prior as u64,
                    &mut rng,
                )?);
            }
            Ok(out)
        });
        let mut total = 0.0;
        let mut count = 0usize;
        for rollouts in results {
            for r in rollouts? {
                total += r.trajectory.total_reward();
                count += 1;
                self.env_steps += r.trajectory.len() as u64;
                self.buffers[r.trajectory.task_id].add_trajectory(r.trajectory)?;
            }
        }
        self.next_trajectory_id = first_id + tasks.len() as u64 * per_task;
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    /// Tasks of one meta-batch: every train task in index order, or a
    /// sample without replacement when the meta-batch is smaller.
    fn meta_batch(&mut self) -> Vec<usize> {
        let n = self.config.n_train;
        let k = self.config.effective_meta_batch().min(n);
        let mut tasks: Vec<usize> = (0..n).collect();
        if k < n {
            tasks.partial_shuffle(&mut self.training_rng, k);
            tasks.truncate(k);
        }
        tasks
    }

    /// One gradient step on encoder, critics and actor, followed by the key
    /// and target-network updates.
    pub fn train_step(&mut self) -> Result<StepStats> {
        let tasks = self.meta_batch();
        let (grads, stats) = self.step_gradients(&tasks)?;
        self.apply(grads)?;
        self.train_steps += 1;
        Ok(stats)
    }

    fn step_gradients(&mut self, tasks: &[usize]) -> Result<(StepGradients, StepStats)> {
        let cfg = &self.config;
        let learner = &self.learner;
        let rng = &mut self.training_rng;
        let contrastive = cfg.contrastive_active();
        let hyper = SacHyperparameters {
            discount: cfg.discount,
            entropy_weight: cfg.entropy_weight,
            reward_scale: cfg.reward_scale,
        };
        let mut grads = StepGradients {
            encoder: learner.encoder.as_ref().map(|p| vec![0.0; p.query_params.len()]),
            actor: vec![0.0; learner.actor.params.len()],
            q1: vec![0.0; learner.critics.q1.len()],
            q2: vec![0.0; learner.critics.q2.len()],
        };

        let sets = match &learner.encoder {
            Some(pair) => Some(build_query_key_sets(
                &self.buffers,
                pair,
                tasks,
                &QueryKeyOptions {
                    window_size: cfg.window_size,
                    encode_keys: contrastive,
                    same_task_negatives: contrastive && cfg.same_task_negatives,
                },
                rng,
            )?),
            None => None,
        };
        let contexts: Vec<ContextEmbedding> = match &sets {
            Some(sets) => sets.pairs[..tasks.len()]
                .iter()
                .map(|p| sample_z(&p.query.posterior, rng))
                .collect(),
            None => tasks
                .iter()
                .map(|&t| {
                    oracle_context(&self.split.train_tasks[t], learner.actor.context_dim)
                        .map(ContextEmbedding::fixed)
                })
                .collect::<Result<_>>()?,
        };

        let mut loss_q = 0.0;
        let mut loss_pi = 0.0;
        let mut kl = 0.0;
        // Per task: d loss / d (query mean, query std) from the RL and KL terms.
        let mut cot: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(tasks.len());
        for (k, (&t, context)) in tasks.iter().zip(&contexts).enumerate() {
            let batch = RlBatch {
                transitions: self.buffers[t].sample_rl_batch(cfg.batch_size, rng)?,
                context: context.clone(),
                task_id: t,
            };
            let pair = sets.as_ref().map(|s| &s.pairs[k]);
            let critic = critic_loss(&learner.critics, &learner.actor, &batch, &hyper, rng)
                .map_err(|e| diagnose(e, t, pair, context))?;
            let actor = actor_loss(&learner.actor, &learner.critics, &batch, cfg.entropy_weight, rng)
                .map_err(|e| diagnose(e, t, pair, context))?;
            loss_q += critic.loss;
            loss_pi += actor.loss;
            add_into(&mut grads.q1, &critic.grad_q1);
            add_into(&mut grads.q2, &critic.grad_q2);
            add_into(&mut grads.actor, &actor.grad_actor);
            if let Some(p) = pair {
                // z = mean + std * noise
                let mut d_mean = critic.grad_z.clone();
                let mut d_std: Vec<f64> =
                    critic.grad_z.iter().zip(&context.noise).map(|(g, e)| g * e).collect();
                kl += kl_to_unit_prior(&p.query.posterior);
                let (gm, gs) = kl_to_unit_prior_grad(&p.query.posterior);
                for j in 0..gm.len() {
                    d_mean[j] += cfg.kl_weight * gm[j];
                    d_std[j] += cfg.kl_weight * gs[j];
                }
                cot.push((d_mean, d_std));
            }
        }

        let n = tasks.len() as f64;
        let mut stats = StepStats {
            loss_tcl: None,
            tcl_acc: None,
            loss_q: loss_q / n,
            loss_pi: loss_pi / n,
            kl: sets.as_ref().map(|_| kl / n),
        };

        if let (Some(pair), Some(sets), Some(grad)) = (&learner.encoder, &sets, grads.encoder.as_mut()) {
            if let Some(batch) = sets.batch()? {
                let report = tcl_loss(&batch, cfg.temperature)?;
                let g = tcl_loss_backward(&batch, cfg.temperature, cfg.tcl_scale)?;
                stats.loss_tcl = Some(report.loss);
                stats.tcl_acc = Some(report.accuracy);
                cot.resize(sets.pairs.len(), (vec![0.0; cfg.context_dim], vec![0.0; cfg.context_dim]));
                for (i, (dm, ds)) in cot.iter_mut().enumerate() {
                    add_into(dm, &g.query_mean[i]);
                    add_into(ds, &g.query_std[i]);
                }
            }
            for (p, (dm, ds)) in sets.pairs.iter().zip(&cot) {
                pair.encoder.backward(&pair.query_params, &p.query, dm, ds, grad);
            }
        }
        Ok((grads, stats))
    }

    fn apply(&mut self, grads: StepGradients) -> Result<()> {
        let cfg = &self.config;
        let l = &mut self.learner;
        if let (Some(pair), Some(opt), Some(g)) = (l.encoder.as_mut(), l.encoder_opt.as_mut(), grads.encoder) {
            adam_step(&mut pair.query_params, &g, opt, cfg.lr_encoder)?;
            if cfg.mode == Mode::Tcl {
                pair.ema_update(cfg.momentum)?;
            }
        }
        adam_step(&mut l.critics.q1, &grads.q1, &mut l.q1_opt, cfg.lr_policy)?;
        adam_step(&mut l.critics.q2, &grads.q2, &mut l.q2_opt, cfg.lr_policy)?;
        adam_step(&mut l.actor.params, &grads.actor, &mut l.actor_opt, cfg.lr_policy)?;
        soft_update_targets(&mut l.critics, cfg.target_rate)
    }

    /// Collection, `train_steps_per_iter` gradient steps and, every
    /// `eval_every` iterations, meta-test on the test tasks.
    pub fn run_iteration<E: Executor>(&mut self, exec: &E) -> Result<MetricsRecord> {
        self.iteration += 1;
        let return_train = self.collect(exec, self.config.n_prior, self.config.n_posterior)?;
        let steps = self.config.train_steps_per_iter;
        let mut acc = StatsAccumulator::default();
        for _ in 0..steps {
            let s = self.train_step()?;
            acc.add(&s);
        }
        let return_test = if self.config.eval_every > 0 && self.iteration % self.config.eval_every as u64 == 0 {
            Some(self.evaluate(self.iteration)?)
        } else {
            None
        };
        Ok(acc.record(self.iteration, self.env_steps, self.train_steps, return_train, return_test))
    }

    /// Mean meta-test return over the test tasks with the current
    /// parameters.
    pub fn evaluate(&self, round: u64) -> Result<f64> {
        let snapshot = self.snapshot()?;
        let evals = meta_test(
            &snapshot,
            &self.split.test_tasks,
            self.config.n_exploration,
            self.config.n_eval,
            self.config.seed,
            round,
        )?;
        Ok(mean_return(&evals))
    }
}

#[derive(Debug, Default)]
struct StatsAccumulator {
    n: usize,
    loss_tcl: Option<f64>,
    tcl_acc: Option<f64>,
    loss_q: f64,
    loss_pi: f64,
    kl: Option<f64>,
}

impl StatsAccumulator {
    fn add(&mut self, s: &StepStats) {
        let sum = |acc: &mut Option<f64>, v: Option<f64>| {
            if let Some(v) = v {
                *acc = Some(acc.unwrap_or(0.0) + v);
            }
        };
        self.n += 1;
        sum(&mut self.loss_tcl, s.loss_tcl);
        sum(&mut self.tcl_acc, s.tcl_acc);
        sum(&mut self.kl, s.kl);
        self.loss_q += s.loss_q;
        self.loss_pi += s.loss_pi;
    }

    fn record(
        &self,
        iteration: u64,
        env_steps: u64,
        train_steps: u64,
        return_train: f64,
        return_test: Option<f64>,
    ) -> MetricsRecord {
        let n = self.n.max(1) as f64;
        MetricsRecord {
            iteration,
            env_steps,
            train_steps,
            loss_tcl: self.loss_tcl.map(|v| v / n),
            tcl_acc: self.tcl_acc.map(|v| v / n),
            loss_q: self.loss_q / n,
            loss_pi: self.loss_pi / n,
            kl: self.kl.map(|v| v / n),
            return_train,
            return_test,
        }
    }
}

fn add_into(acc: &mut [f64], g: &[f64]) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += b;
    }
}

fn diagnose(e: Error, task: usize, pair: Option<&QueryKeyPair>, context: &ContextEmbedding) -> Error {
    let Error::NonFinite(msg) = e else {
        return e;
    };
    let mut dump = format!("{msg}; task {task}, z = {:?}", context.z);
    if let Some(p) = pair {
        let w = &p.query_window;
        dump.push_str(&format!(
            "; query window from trajectory {} at {}:",
            w.source_trajectory_id, w.start_index
        ));
        for t in &w.transitions {
            dump.push_str(&format!(
                "\n  s={:?} a={:?} r={} s'={:?}",
                t.state, t.action, t.reward, t.next_state
            ));
        }
    }
    Error::NonFinite(dump)
}

/// Runs warmup, then iterations until the next collection phase would
/// exceed the environment-step budget. `on_record` sees every metrics row
/// together with the trainer state that produced it; an error from it stops
/// training.
pub fn meta_train<E, F>(config: TrainConfig, exec: &E, mut on_record: F) -> Result<Trainer>
where
    E: Executor,
    F: FnMut(&MetricsRecord, &Trainer) -> Result<()>,
{
    let mut trainer = Trainer::new(config)?;
    trainer.warmup(exec)?;
    let cost = trainer.config.collection_cost();
    while trainer.env_steps + cost <= trainer.config.env_step_budget {
        let record = trainer.run_iteration(exec)?;
        on_record(&record, &trainer)?;
    }
    Ok(trainer)
}
