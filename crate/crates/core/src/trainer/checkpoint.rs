use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::config::{Mode, TrainConfig};
use crate::encoder::{ContextEncoder, EncoderPair};
use crate::env::{sample_task_split, TaskSplit};
use crate::nn::{MlpSpec, ParamVector};
use crate::policy::{Actor, Critics};
use crate::{Error, Result};

/// Complete learner state at an iteration boundary. Every parameter array
/// carries its layout manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub split: TaskSplit,
    pub iteration: u64,
    pub env_steps: u64,
    pub train_steps: u64,
    pub actor: Actor,
    pub critics: Critics,
    /// Absent in oracle mode.
    pub encoder: Option<EncoderPair>,
}

impl Checkpoint {
    /// Confirms that the stored task split and every network agree with what
    /// the stored configuration would produce. Reports all mismatches.
    pub fn validate(&self) -> Result<()> {
        let cfg = &self.config;
        cfg.validate()?;
        let mut problems = Vec::new();
        let expected = sample_task_split(cfg.family, cfg.n_train, cfg.n_test, cfg.horizon, cfg.discount, cfg.seed)?;
        if expected != self.split {
            problems.push(format!(
                "task split differs from the one drawn by family `{}`, seed {}, {}/{} tasks",
                cfg.family, cfg.seed, cfg.n_train, cfg.n_test
            ));
        }
        let (ds, da, d) = (cfg.family.state_dim(), cfg.family.action_dim(), cfg.context_dim);
        let sizes = |input: usize, output: usize| {
            let mut s = Vec::with_capacity(cfg.policy_hidden.len() + 2);
            s.push(input);
            s.extend_from_slice(&cfg.policy_hidden);
            s.push(output);
            s
        };
        let actor_sizes = sizes(ds + d, 2 * da);
        let critic_sizes = sizes(ds + da + d, 1);
        let mut params = |name: &str, spec: &MlpSpec, p: &ParamVector| {
            if let Err(e) = spec.check_params(p) {
                problems.push(format!("{name}: {e}"));
            }
        };
        params("actor", &self.actor.spec, &self.actor.params);
        for (name, p) in [
            ("q1", &self.critics.q1),
            ("q2", &self.critics.q2),
            ("q1_target", &self.critics.q1_target),
            ("q2_target", &self.critics.q2_target),
        ] {
            params(name, &self.critics.spec, p);
        }
        if let Some(pair) = &self.encoder {
            params("encoder query", &pair.encoder.spec, &pair.query_params);
            params("encoder key", &pair.encoder.spec, &pair.key_params);
        }
        if self.actor.spec.layer_sizes != actor_sizes
            || (self.actor.state_dim, self.actor.action_dim, self.actor.context_dim) != (ds, da, d)
        {
            problems.push(format!("actor layers {:?}, configuration implies {actor_sizes:?}", self.actor.spec.layer_sizes));
        }
        if self.critics.spec.layer_sizes != critic_sizes
            || (self.critics.state_dim, self.critics.action_dim, self.critics.context_dim) != (ds, da, d)
        {
            problems.push(format!(
                "critic layers {:?}, configuration implies {critic_sizes:?}",
                self.critics.spec.layer_sizes
            ));
        }
        match (&self.encoder, cfg.mode) {
            (Some(_), Mode::Oracle) => problems.push("oracle checkpoint carries a context encoder".into()),
            (None, Mode::Tcl | Mode::Baseline) => {
                problems.push(format!("`{}` checkpoint carries no context encoder", cfg.mode))
            }
            (Some(pair), _) => {
                let expected = ContextEncoder::new(cfg.family.transition_dim(), &cfg.encoder_hidden, d)?;
                if pair.encoder != expected {
                    problems.push(format!(
                        "encoder layers {:?}, configuration implies {:?}",
                        pair.encoder.spec.layer_sizes, expected.spec.layer_sizes
                    ));
                }
            }
            (None, Mode::Oracle) => {}
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!("checkpoint does not match its configuration: {}", problems.join("; "))))
        }
    }
}
