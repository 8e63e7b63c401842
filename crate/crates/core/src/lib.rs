//! Discrete-time simulator of an RIS-aided multi-cell radio access network
//! with base-station sleep modes, cell zooming and user association, plus
//! the PPO, DQN and cascaded RIS-phase learners that drive it.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bspower;
pub mod netmodel;
pub mod neural;
pub mod traffic;
pub mod dccn;
pub mod drl;
pub mod env;
pub mod harness;
