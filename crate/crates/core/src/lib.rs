//! Request-level simulator, heterogeneous state graph and soft actor-critic
//! router for serving LLM requests across a pool of experts.

// Validation is written as `!(x > 0.0)` so that NaN is rejected along with
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod agent;
pub mod harness;
pub mod impact;
pub mod neural;
pub mod policies;
pub mod predictor;
pub mod rng;
pub mod simcore;
pub mod stategraph;
pub mod workload;
