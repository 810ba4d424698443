//! Generative flow networks for environments with stochastic transitions.
//!
//! Transitions are split into an agent step (even state → odd afterstate)
//! and an environment step (odd afterstate → even state). The stochastic
//! detailed-balance and trajectory-balance objectives carry the transition
//! probability as an explicit term, supplied either by the true kernel or by
//! a learned dynamics model.

// Validation is written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod env;
pub mod dynamics;
pub mod eval;
pub mod gfnmodel;
pub mod mcmc;
pub mod objectives;
pub mod trainer;
