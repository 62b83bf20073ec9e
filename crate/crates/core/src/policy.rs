//! Context-conditioned soft actor-critic.
//!
//! The actor is a tanh-squashed Gaussian `pi(a | s, z)`; twin critics
//! `Q(s, a, z)` have Polyak-averaged targets. The critic loss also returns its
//! gradient with respect to `z`, which is how the context encoder learns from
//! the reward signal. The actor loss treats `z` as a constant.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{ContextEmbedding, STD_FLOOR};
use crate::env::Transition;
use crate::math;
use crate::nn::{
    backward_tape, forward_tape, input_gradient, Activation, MlpSpec, OutputActivation,
    ParamVector, Tape,
};
use crate::rng::standard_normal;
use crate::{Error, Result};

/// Fixed entropy weight.
pub const DEFAULT_ENTROPY_WEIGHT: f64 = 0.2;
pub const DEFAULT_REWARD_SCALE: f64 = 10.0;
pub const DEFAULT_TARGET_RATE: f64 = 0.005;

fn concat(parts: &[&[f64]]) -> Vec<f64> {
    let mut v = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for p in parts {
        v.extend_from_slice(p);
    }
    v
}

/// Maps `s ⊕ z` to per-dimension action mean and pre-softplus std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub spec: MlpSpec,
    pub params: ParamVector,
    pub state_dim: usize,
    pub action_dim: usize,
    pub context_dim: usize,
}

/// A reparameterized action draw.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledAction {
    pub action: Vec<f64>,
    pub pre_tanh: Vec<f64>,
    pub noise: Vec<f64>,
    pub log_prob: f64,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        context_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + context_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * action_dim);
        let spec = MlpSpec::new(sizes, Activation::Relu, OutputActivation::Identity)?;
        Ok(Actor {
            params: spec.init_params(rng),
            spec,
            state_dim,
            action_dim,
            context_dim,
        })
    }

    fn check(&self, state: &[f64], z: &[f64]) -> Result<()> {
        if state.len() != self.state_dim {
            return Err(Error::dim("actor state", self.state_dim, state.len()));
        }
        if z.len() != self.context_dim {
            return Err(Error::dim("actor context", self.context_dim, z.len()));
        }
        Ok(())
    }

    fn tape(&self, state: &[f64], z: &[f64]) -> Tape {
        forward_tape(&self.spec, self.params.values(), &concat(&[state, z]))
    }

    fn mean_std(&self, raw: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let da = self.action_dim;
        (
            raw[..da].to_vec(),
            raw[da..].iter().map(|&r| math::softplus(r) + STD_FLOOR).collect(),
        )
    }

    /// Pre-squash Gaussian parameters at `(state, z)`.
    pub fn distribution(&self, state: &[f64], z: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(state, z)?;
        Ok(self.mean_std(self.tape(state, z).output()))
    }

    fn squash(&self, mean: &[f64], std: &[f64], noise: Vec<f64>) -> SampledAction {
        let pre_tanh: Vec<f64> = mean.iter().zip(std).zip(&noise).map(|((m, s), e)| m + s * e).collect();
        let action = pre_tanh.iter().map(|&u| math::tanh(u)).collect();
        let log_prob = pre_tanh
            .iter()
            .zip(std)
            .zip(&noise)
            .map(|((&u, &s), &e)| {
                -0.5 * e * e - math::ln(s) - 0.5 * math::LN_2PI - math::ln_one_minus_tanh_sq(u)
            })
            .sum();
        SampledAction {
            action,
            pre_tanh,
            noise,
            log_prob,
        }
    }

    /// `tanh(mean + std * noise)` with its log-density.
    pub fn sample_with_noise(&self, state: &[f64], z: &[f64], noise: Vec<f64>) -> Result<SampledAction> {
        let (mean, std) = self.distribution(state, z)?;
        if noise.len() != self.action_dim {
            return Err(Error::dim("actor noise", self.action_dim, noise.len()));
        }
        Ok(self.squash(&mean, &std, noise))
    }

    /// Log-density of a squashed action, including the tanh change of
    /// variables.
    pub fn log_prob(&self, state: &[f64], z: &[f64], action: &[f64]) -> Result<f64> {
        let (mean, std) = self.distribution(state, z)?;
        if action.len() != self.action_dim {
            return Err(Error::dim("actor action", self.action_dim, action.len()));
        }
        let noise = action
            .iter()
            .zip(&mean)
            .zip(&std)
            .map(|((&a, m), s)| (libm::atanh(a) - m) / s)
            .collect();
        Ok(self.squash(&mean, &std, noise).log_prob)
    }
}

/// Stochastic mode samples `tanh(mean + std * eps)`; deterministic mode
/// returns `tanh(mean)`.
pub fn policy_act<R: Rng + ?Sized>(
    actor: &Actor,
    state: &[f64],
    z: &[f64],
    rng: &mut R,
    deterministic: bool,
) -> Result<Vec<f64>> {
    let (mean, std) = actor.distribution(state, z)?;
    if deterministic {
        return Ok(mean.iter().map(|&m| math::tanh(m)).collect());
    }
    Ok(mean
        .iter()
        .zip(&std)
        .map(|(m, s)| math::tanh(m + s * standard_normal(rng)))
        .collect())
}

/// Twin Q-functions over `s ⊕ a ⊕ z` and their targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critics {
    pub spec: MlpSpec,
    pub q1: ParamVector,
    pub q2: ParamVector,
    pub q1_target: ParamVector,
    pub q2_target: ParamVector,
    pub state_dim: usize,
    pub action_dim: usize,
    pub context_dim: usize,
}

impl Critics {
    pub fn new<R: Rng + ?Sized>(
        state_dim: usize,
        action_dim: usize,
        context_dim: usize,
        hidden: &[usize],
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![state_dim + action_dim + context_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let spec = MlpSpec::new(sizes, Activation::Relu, OutputActivation::Identity)?;
        let q1 = spec.init_params(rng);
        let q2 = spec.init_params(rng);
        Ok(Critics {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            spec,
            state_dim,
            action_dim,
            context_dim,
        })
    }

    pub fn q_value(&self, params: &ParamVector, state: &[f64], action: &[f64], z: &[f64]) -> f64 {
        forward_tape(&self.spec, params.values(), &concat(&[state, action, z])).output()[0]
    }
}

/// Transitions of one task with the single context that conditions them.
#[derive(Debug, Clone, PartialEq)]
pub struct RlBatch {
    pub transitions: Vec<Transition>,
    pub context: ContextEmbedding,
    pub task_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SacHyperparameters {
    pub discount: f64,
    pub entropy_weight: f64,
    pub reward_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticLossOutput {
    pub loss: f64,
    pub grad_q1: Vec<f64>,
    pub grad_q2: Vec<f64>,
    /// Gradient of the loss with respect to the context `z`.
    pub grad_z: Vec<f64>,
    pub targets: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActorLossOutput {
    pub loss: f64,
    pub grad_actor: Vec<f64>,
    pub mean_log_prob: f64,
}

fn check_batch(actor: &Actor, critics: &Critics, batch: &RlBatch) -> Result<()> {
    if batch.transitions.is_empty() {
        return Err(Error::Usage("RL batch is empty".into()));
    }
    if batch.context.z.len() != actor.context_dim || critics.context_dim != actor.context_dim {
        return Err(Error::dim("RL batch context", actor.context_dim, batch.context.z.len()));
    }
    for t in &batch.transitions {
        if t.state.len() != actor.state_dim || t.next_state.len() != actor.state_dim {
            return Err(Error::dim("RL batch state", actor.state_dim, t.state.len()));
        }
        if t.action.len() != actor.action_dim {
            return Err(Error::dim("RL batch action", actor.action_dim, t.action.len()));
        }
    }
    Ok(())
}

/// Soft Bellman targets
/// `y = scale * r + gamma * (min(Q1', Q2')(s', a', z) - alpha * log pi(a' | s', z))`
/// with `a'` freshly sampled per transition.
pub fn critic_targets<R: Rng + ?Sized>(
    critics: &Critics,
    actor: &Actor,
    batch: &RlBatch,
    hyper: &SacHyperparameters,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_batch(actor, critics, batch)?;
    let z = &batch.context.z;
    batch
        .transitions
        .iter()
        .map(|t| {
            let noise = (0..actor.action_dim).map(|_| standard_normal(rng)).collect();
            let next = actor.sample_with_noise(&t.next_state, z, noise)?;
            let next_q = critics
                .q_value(&critics.q1_target, &t.next_state, &next.action, z)
                .min(critics.q_value(&critics.q2_target, &t.next_state, &next.action, z));
            Ok(hyper.reward_scale * t.reward
                + hyper.discount * (next_q - hyper.entropy_weight * next.log_prob))
        })
        .collect()
}

/// `mean((Q1 - y)^2) + mean((Q2 - y)^2)` against fixed targets. `z`
/// receives gradient only through the live critics.
pub fn critic_loss_with_targets(
    critics: &Critics,
    batch: &RlBatch,
    targets: Vec<f64>,
) -> Result<CriticLossOutput> {
    if batch.transitions.is_empty() {
        return Err(Error::Usage("RL batch is empty".into()));
    }
    if targets.len() != batch.transitions.len() {
        return Err(Error::dim("critic targets", batch.transitions.len(), targets.len()));
    }
    let z = &batch.context.z;
    let n = batch.transitions.len() as f64;
    let spec = &critics.spec;
    let z_offset = critics.state_dim + critics.action_dim;
    let mut grad_q1 = vec![0.0; spec.n_params()];
    let mut grad_q2 = vec![0.0; spec.n_params()];
    let mut grad_z = vec![0.0; z.len()];
    let mut loss = 0.0;
    for (t, &y) in batch.transitions.iter().zip(&targets) {
        let input = concat(&[&t.state, &t.action, z]);
        for (params, grad) in [(&critics.q1, &mut grad_q1), (&critics.q2, &mut grad_q2)] {
            let tape = forward_tape(spec, params.values(), &input);
            let residual = tape.output()[0] - y;
            loss += residual * residual / n;
            let gx = backward_tape(spec, params.values(), &tape, &[2.0 * residual / n], grad);
            for (gz, g) in grad_z.iter_mut().zip(&gx[z_offset..]) {
                *gz += g;
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "critic loss is {loss} for task {}",
            batch.task_id
        )));
    }
    Ok(CriticLossOutput {
        loss,
        grad_q1,
        grad_q2,
        grad_z,
        targets,
    })
}

/// Soft Bellman residual of both critics: [`critic_targets`] treated as
/// constants, then [`critic_loss_with_targets`].
pub fn critic_loss<R: Rng + ?Sized>(
    critics: &Critics,
    actor: &Actor,
    batch: &RlBatch,
    hyper: &SacHyperparameters,
    rng: &mut R,
) -> Result<CriticLossOutput> {
    let targets = critic_targets(critics, actor, batch, hyper, rng)?;
    critic_loss_with_targets(critics, batch, targets)
}

/// `mean(alpha * log pi(a | s, z) - min(Q1, Q2)(s, a, z))` with reparameterized
/// `a`. Gradients flow to the actor only.
pub fn actor_loss<R: Rng + ?Sized>(
    actor: &Actor,
    critics: &Critics,
    batch: &RlBatch,
    entropy_weight: f64,
    rng: &mut R,
) -> Result<ActorLossOutput> {
    check_batch(actor, critics, batch)?;
    let z = &batch.context.z;
    let n = batch.transitions.len() as f64;
    let da = actor.action_dim;
    let a_offset = critics.state_dim;
    let mut grad_actor = vec![0.0; actor.spec.n_params()];
    let mut loss = 0.0;
    let mut log_prob_sum = 0.0;
    let mut cot = vec![0.0; 2 * da];
    for t in &batch.transitions {
        let tape = actor.tape(&t.state, z);
        let raw = tape.output();
        let (mean, std) = actor.mean_std(raw);
        let noise = (0..da).map(|_| standard_normal(rng)).collect();
        let sample = actor.squash(&mean, &std, noise);
        let input = concat(&[&t.state, &sample.action, z]);
        let t1 = forward_tape(&critics.spec, critics.q1.values(), &input);
        let t2 = forward_tape(&critics.spec, critics.q2.values(), &input);
        let (q_min, q_tape, q_params) = if t1.output()[0] <= t2.output()[0] {
            (t1.output()[0], &t1, &critics.q1)
        } else {
            (t2.output()[0], &t2, &critics.q2)
        };
        loss += (entropy_weight * sample.log_prob - q_min) / n;
        log_prob_sum += sample.log_prob;
        let gx = input_gradient(&critics.spec, q_params.values(), q_tape, &[1.0]);
        for j in 0..da {
            let a = sample.action[j];
            // d/du of (alpha * log pi - Q) with u = mean + std * eps
            let du = -gx[a_offset + j] * (1.0 - a * a) + entropy_weight * 2.0 * a;
            let dstd = du * sample.noise[j] - entropy_weight / std[j];
            cot[j] = du / n;
            cot[da + j] = dstd * math::sigmoid(raw[da + j]) / n;
        }
        backward_tape(&actor.spec, actor.params.values(), &tape, &cot, &mut grad_actor);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "actor loss is {loss} for task {}",
            batch.task_id
        )));
    }
    Ok(ActorLossOutput {
        loss,
        grad_actor,
        mean_log_prob: log_prob_sum / n,
    })
}

/// `target <- (1 - rate) * target + rate * live` for both critics.
pub fn soft_update_targets(critics: &mut Critics, rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::Config(format!("target update rate must lie in [0, 1], got {rate}")));
    }
    let Critics {
        q1,
        q2,
        q1_target,
        q2_target,
        ..
    } = critics;
    for (target, live) in [(q1_target, &*q1), (q2_target, &*q2)] {
        for (t, l) in target.values_mut().iter_mut().zip(live.values()) {
            *t = (1.0 - rate) * *t + rate * l;
        }
    }
    Ok(())
}
