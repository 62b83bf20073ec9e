//! Feedforward networks over flat parameter vectors.
//!
//! Every learned function in the system (encoder heads, actor, critics) is an
//! [`MlpSpec`] paired with a [`ParamVector`]. Backward passes are written by
//! hand and checked against central finite differences with [`grad_check`].

mod adam;
mod gradcheck;
mod mlp;
mod params;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, relative_error};
pub use mlp::{
    backward_tape, forward_tape, input_gradient, mlp_backward, mlp_forward, Activation, MlpSpec,
    OutputActivation, Tape,
};
pub use params::{LayoutEntry, ParamVector};
