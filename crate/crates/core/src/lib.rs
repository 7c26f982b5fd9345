//! Online self-tuning PID control for a simulated quadrotor.
//!
//! Each of the roll, pitch, yaw and altitude channels runs an incremental
//! PID whose dynamic gains come from a small network trained online
//! together with an actor-critic identifier of the same channel. See
//! [`tuner`] for the learning rule and [`control`] for the closed loop.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
mod error;
pub mod experiments;
pub mod gradcheck;
pub mod gust;
pub mod mlp;
pub mod pid;
pub mod scenario;
pub mod telemetry;
pub mod trajectory;
pub mod tuner;
pub mod zn;

pub use error::{Error, Result};
