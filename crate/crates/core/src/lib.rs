//! Event-driven Monte Carlo for the priority inbox process.
//!
//! Tasks arrive as a unit-intensity Poisson field on priority × time and the
//! highest-priority pending task is executed at the times of an independent
//! rate-one Poisson clock. The crate provides:
//!
//! * [`point_process`]: seeded Poisson event streams and substream RNGs,
//! * [`inbox`]: forward dynamics, the stochastic flow and coupled runs,
//! * [`stationary`]: exact, forward and backward (supremum formula) samplers
//!   of the stationary queue,
//! * [`shape`]: the rescaled near-critical shape as a step function,
//! * [`limit`]: the Brownian limit shape via concave majorants,
//! * [`stats`]: KS and chi-square goodness-of-fit machinery.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod inbox;
pub mod limit;
pub mod point_process;
pub mod shape;
pub mod stationary;
pub mod stats;

pub use error::{Error, Result};
