//! Trajectory contrastive learning (TCL) on top of a probabilistic
//! context-encoder meta-RL learner.
//!
//! This crate is the allocation-only algorithmic core. It carries no IO and
//! builds under `#![no_std]` with `alloc`:
//!
//! * [`nn`]: flat-parameter MLPs with hand-derived backward passes, Adam and
//!   finite-difference gradient checking.
//! * [`env`]: desk-scale point-mass task families and the oracle context.
//! * [`replay`]: per-task trajectory buffers with window cropping.
//! * [`encoder`]: Gaussian factors, product-of-Gaussians posterior, KL and the
//!   momentum-coupled query/key encoder pair.
//! * [`tcl`]: the Wasserstein-similarity InfoNCE loss and its gradient.
//! * [`policy`]: context-conditioned soft actor-critic.
//! * [`trainer`]: the meta-training loop, meta-test protocol and oracle mode.
//! * [`analysis`]: cluster metrics and PCA projection of context embeddings.
//! * [`verify`]: closed-form and gradient-check self tests.
//!
//! IO, configuration files and the command-line front end live in the `tcl`
//! companion crate.
#![no_std]
#![warn(missing_debug_implementations)]

extern crate alloc;

pub mod analysis;
pub mod encoder;
pub mod env;
mod error;
pub mod linalg;
pub(crate) mod math;
pub mod nn;
pub mod policy;
pub mod replay;
pub mod rng;
pub mod tcl;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
