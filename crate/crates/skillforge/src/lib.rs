//! Skillforge: a lifelong-learning reinforcement-learning testbed built
//! around reusable skills.
//!
//! The crate trains deep skill networks on small gridworld tasks, reuses
//! them inside a hierarchical controller that mixes primitive actions with
//! temporally extended skills, and compresses several skills into one
//! multi-headed network by policy distillation. Everything is plain `f64`
//! arithmetic on the CPU and fully deterministic for a given seed.
//!
//! The guide in `book/` walks through each piece; start with
//! [`env`] for the environments, [`nn`] for the network substrate, and
//! [`harness`] for the command-line entry points.

pub mod agent;
pub mod distill;
pub mod env;
pub mod error;
pub mod harness;
pub mod hdrln;
pub mod nn;
pub mod replay;
pub mod skills;

pub use error::{Error, Result};
