//! Zeroth-order implicit hierarchical federated learning.
//!
//! A server holding its own data trains a model while clients solve proximal
//! lower-level problems locally. The server only sees lower-level penalty
//! values at perturbed points and forms gradient estimates from them.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod harness;
pub mod local_solver;
pub mod numkit;
pub mod objectives;
pub mod oracles;
pub mod orchestrator;
pub mod smoothing;

pub use error::{Error, Result};
