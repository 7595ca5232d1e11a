//! Modular multi-task learning with a learned task-to-module routing graph,
//! decorrelated encoder modules and graph-level invariance penalties, plus the
//! synthetic spurious-correlation testbeds and analytic oracles used to
//! validate it.

pub mod analysis;
pub mod data;
pub mod harness;
pub mod model;
pub mod oracles;
pub mod regularizers;
pub mod rng;
pub mod tensor;
