//! Symmetric registration engine.
//!
//! One pre-activation field per refinement step drives both directions:
//! `+delta` for A→B and `-delta` for B→A. Step `i` warps the output of step
//! `i - 1` again, and the objective is the sum of the full loss over steps.
//! Gradients are propagated in reverse through every stage
//! (warp → integrate → activate → upsample) and the fields are updated with
//! Adam.

mod adam;
mod config;
mod gradcheck;
mod optimize;
mod pipeline;

pub use adam::Adam;
pub use config::{ConfigFile, RegistrationConfig, CONVERGENCE_WINDOW};
pub use gradcheck::{
    gradient_check, gradient_check_instance, random_check_instance, GradientCheckReport, TermCheck, MAX_CHECK_AXIS,
};
pub use optimize::{optimize, register_pair, write_trace, LabeledRegistration, RegistrationResult, RegistrationState};
pub use pipeline::{
    forward_pass, multistep_forward, objective_and_gradient, ForwardOutput, RegistrationPair, StepOutput,
};
