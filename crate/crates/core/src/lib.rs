//! Fluid-queue simulation of overloaded multi-hop networks under
//! threshold-based dropping with backpressure routing, with optional
//! utility-driven flow control, plus an LP oracle for the optimal throughput.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cli;
pub mod config;
pub mod lp;
pub mod model;
pub mod ora;
pub mod oracle;
pub mod presets;
pub mod queues;
pub mod report;
pub mod reproduce;
pub mod sim;
pub mod uora;
