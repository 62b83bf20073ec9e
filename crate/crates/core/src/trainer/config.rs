use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::env::Family;
use crate::{Error, Result};

/// Which learner drives a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Context encoder trained by RL and the contrastive auxiliary loss.
    Tcl,
    /// Context encoder trained by RL only.
    Baseline,
    /// Policy conditioned on the ground-truth task vector; no encoder.
    Oracle,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Tcl => "tcl",
            Mode::Baseline => "baseline",
            Mode::Oracle => "oracle",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tcl" => Ok(Mode::Tcl),
            "baseline" => Ok(Mode::Baseline),
            "oracle" => Ok(Mode::Oracle),
            _ => Err(Error::Config(format!(
                "unknown mode `{s}` (expected tcl, baseline or oracle)"
            ))),
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub family: Family,
    pub n_train: usize,
    pub n_test: usize,
    pub horizon: usize,
    pub discount: f64,
    pub context_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub policy_hidden: Vec<usize>,
    /// Transitions per cropped window, `W`.
    pub window_size: usize,
    /// Multiplier on the contrastive loss in the encoder objective.
    pub tcl_scale: f64,
    pub temperature: f64,
    /// Key-encoder momentum `m` in `key <- m key + (1 - m) query`.
    pub momentum: f64,
    pub kl_weight: f64,
    /// Encoder learning rate (`alpha_1`).
    pub lr_encoder: f64,
    /// Actor and critic learning rate (`alpha_2`).
    pub lr_policy: f64,
    pub n_prior: usize,
    pub n_posterior: usize,
    pub train_steps_per_iter: usize,
    pub env_step_budget: u64,
    /// Transitions per task in each RL batch.
    pub batch_size: usize,
    /// Tasks per training step; 0 means every train task.
    pub meta_batch: usize,
    pub reward_scale: f64,
    pub entropy_weight: f64,
    pub target_rate: f64,
    pub replay_capacity: usize,
    /// Meta-test evaluation period in iterations; 0 disables it.
    pub eval_every: usize,
    pub n_exploration: usize,
    pub n_eval: usize,
    /// Add a second query/key pair per task from another trajectory, making
    /// same-task trajectories negatives of each other.
    pub same_task_negatives: bool,
    pub parallel_collection: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

/// Names accepted by [`TrainConfig::preset`].
pub const PRESETS: [&str; 6] = [
    "desk",
    "mujoco-cheetah-vel",
    "mujoco-ant-goal",
    "mujoco-walker-params",
    "metaworld",
    "smoke",
];

impl TrainConfig {
    /// Small point-goal configuration that trains in minutes on one core.
    pub fn desk() -> Self {
        TrainConfig {
            mode: Mode::Tcl,
            family: Family::PointGoal2d,
            n_train: 8,
            n_test: 4,
            horizon: 64,
            discount: 0.9,
            context_dim: 5,
            encoder_hidden: vec![64, 64],
            policy_hidden: vec![64, 64],
            window_size: 16,
            tcl_scale: 1.0,
            temperature: 1.0,
            momentum: 0.995,
            kl_weight: 0.1,
            lr_encoder: 1e-3,
            lr_policy: 1e-3,
            n_prior: 1,
            n_posterior: 1,
            train_steps_per_iter: 50,
            env_step_budget: 200_000,
            batch_size: 32,
            meta_batch: 0,
            reward_scale: 10.0,
            entropy_weight: 0.2,
            target_rate: 0.005,
            replay_capacity: 1_000_000,
            eval_every: 1,
            n_exploration: 2,
            n_eval: 1,
            same_task_negatives: false,
            parallel_collection: false,
            seed: 0,
        }
    }

    /// Named configuration. The `mujoco-*` and `metaworld` presets carry the
    /// published hyperparameters on the desk task families.
    pub fn preset(name: &str) -> Result<Self> {
        let desk = TrainConfig::desk();
        let mujoco = |family, window_size, tcl_scale| TrainConfig {
            family,
            window_size,
            tcl_scale,
            horizon: 200,
            encoder_hidden: vec![200, 200],
            train_steps_per_iter: 4000,
            n_exploration: 2,
            ..TrainConfig::desk()
        };
        Ok(match name {
            "desk" => desk,
            "smoke" => TrainConfig {
                n_train: 3,
                n_test: 2,
                horizon: 16,
                window_size: 4,
                encoder_hidden: vec![16],
                policy_hidden: vec![16],
                train_steps_per_iter: 3,
                env_step_budget: 400,
                batch_size: 8,
                ..desk
            },
            "mujoco-cheetah-vel" => mujoco(Family::PointVel1d, 64, 1.0),
            "mujoco-ant-goal" => mujoco(Family::PointGoal2d, 128, 1.0),
            "mujoco-walker-params" => mujoco(Family::PointDrag2d, 64, 5.0),
            "metaworld" => TrainConfig {
                n_train: 50,
                n_test: 10,
                horizon: 200,
                context_dim: 7,
                encoder_hidden: vec![400, 400],
                policy_hidden: vec![400, 400],
                window_size: 64,
                train_steps_per_iter: 4000,
                batch_size: 256,
                meta_batch: 16,
                n_exploration: 10,
                env_step_budget: 1_000_000,
                ..desk
            },
            _ => {
                return Err(Error::Config(format!(
                    "unknown preset `{name}` (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        })
    }

    /// Tasks in each training step's meta-batch.
    pub fn effective_meta_batch(&self) -> usize {
        if self.meta_batch == 0 {
            self.n_train
        } else {
            self.meta_batch
        }
    }

    /// Whether the contrastive term participates in the encoder objective.
    pub fn contrastive_active(&self) -> bool {
        self.mode == Mode::Tcl && self.tcl_scale > 0.0
    }

    /// Environment steps consumed by one collection phase.
    pub fn collection_cost(&self) -> u64 {
        (self.n_train * (self.n_prior + self.n_posterior) * self.horizon) as u64
    }

    pub fn warmup_cost(&self) -> u64 {
        (self.n_train * self.horizon) as u64
    }

    /// Checks every field and returns all problems at once.
    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Key-level diagnostics, empty when the configuration is valid.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                p.push(msg);
            }
        };
        check(self.n_train >= 1, format!("n_train: must be at least 1, got {}", self.n_train));
        check(self.n_test >= 1, format!("n_test: must be at least 1, got {}", self.n_test));
        check(self.horizon >= 1, format!("horizon: must be at least 1, got {}", self.horizon));
        check(
            (0.0..=1.0).contains(&self.discount),
            format!("discount: must lie in [0, 1], got {}", self.discount),
        );
        check(
            self.context_dim >= self.family.task_dim(),
            format!(
                "context_dim: must hold the {}-dimensional task vector, got {}",
                self.family.task_dim(),
                self.context_dim
            ),
        );
        check(
            self.window_size >= 1 && self.window_size <= self.horizon,
            format!(
                "window_size: must lie in [1, horizon = {}], got {}",
                self.horizon, self.window_size
            ),
        );
        check(
            self.tcl_scale >= 0.0 && self.tcl_scale.is_finite(),
            format!("tcl_scale: must be non-negative, got {}", self.tcl_scale),
        );
        check(
            self.mode == Mode::Tcl || self.tcl_scale == 0.0,
            format!(
                "tcl_scale: {} contradicts mode `{}`, which has no contrastive loss",
                self.tcl_scale, self.mode
            ),
        );
        check(
            self.temperature > 0.0 && self.temperature.is_finite(),
            format!("temperature: must be positive, got {}", self.temperature),
        );
        check(
            (0.0..=1.0).contains(&self.momentum),
            format!("momentum: must lie in [0, 1], got {}", self.momentum),
        );
        check(
            self.kl_weight >= 0.0 && self.kl_weight.is_finite(),
            format!("kl_weight: must be non-negative, got {}", self.kl_weight),
        );
        check(
            self.lr_encoder > 0.0 && self.lr_encoder.is_finite(),
            format!("lr_encoder: must be positive, got {}", self.lr_encoder),
        );
        check(
            self.lr_policy > 0.0 && self.lr_policy.is_finite(),
            format!("lr_policy: must be positive, got {}", self.lr_policy),
        );
        check(
            self.n_prior + self.n_posterior >= 1,
            "n_prior + n_posterior: must collect at least one rollout per iteration".into(),
        );
        check(
            self.train_steps_per_iter >= 1,
            "train_steps_per_iter: must be at least 1".into(),
        );
        check(
            self.env_step_budget > 0,
            "env_step_budget: must be positive".into(),
        );
        check(self.batch_size >= 1, "batch_size: must be at least 1".into());
        check(
            self.effective_meta_batch() <= self.n_train,
            format!(
                "meta_batch: {} exceeds the {} train tasks",
                self.meta_batch, self.n_train
            ),
        );
        check(
            self.reward_scale.is_finite(),
            "reward_scale: must be finite".into(),
        );
        check(
            self.entropy_weight >= 0.0 && self.entropy_weight.is_finite(),
            format!("entropy_weight: must be non-negative, got {}", self.entropy_weight),
        );
        check(
            (0.0..=1.0).contains(&self.target_rate),
            format!("target_rate: must lie in [0, 1], got {}", self.target_rate),
        );
        check(
            self.replay_capacity >= self.horizon,
            format!(
                "replay_capacity: must hold at least one trajectory of {} transitions",
                self.horizon
            ),
        );
        check(self.n_eval >= 1, "n_eval: must be at least 1".into());
        check(
            self.mode == Mode::Oracle || self.n_exploration >= 1,
            "n_exploration: an encoder needs at least one exploration rollout".into(),
        );
        check(
            self.encoder_hidden.iter().all(|&h| h > 0) && self.policy_hidden.iter().all(|&h| h > 0),
            "hidden sizes: must be positive".into(),
        );
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_are_valid() {
        for name in PRESETS {
            TrainConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(TrainConfig::preset("huge").is_err());
    }

    #[test]
    fn baseline_with_contrastive_scale_is_contradictory() {
        let c = TrainConfig {
            mode: Mode::Baseline,
            tcl_scale: 5.0,
            ..TrainConfig::desk()
        };
        let err = c.validate().unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("tcl_scale")));
    }

    #[test]
    fn every_problem_is_reported() {
        let c = TrainConfig {
            window_size: 0,
            env_step_budget: 0,
            ..TrainConfig::desk()
        };
        assert_eq!(c.problems().len(), 2);
    }

    #[test]
    fn mode_round_trips_through_str() {
        for m in [Mode::Tcl, Mode::Baseline, Mode::Oracle] {
            assert_eq!(m.name().parse::<Mode>().unwrap(), m);
        }
        assert!("pearl".parse::<Mode>().is_err());
    }
}
