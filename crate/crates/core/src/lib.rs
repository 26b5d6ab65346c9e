//! Deep Q-learning for environments that reject actions.
//!
//! [`env`] holds the environments, [`agent`] the Double DQN learner,
//! [`frontier`] the frontier loss and validity classifier, [`nn`] the small
//! neural network library they are built on, and [`harness`] the experiment
//! runner, tabular oracle and reporting tools.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod nn;
pub mod env;
pub mod agent;
pub mod frontier;
pub mod harness;
