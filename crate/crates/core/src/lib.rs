//! Online distributionally robust reinforcement learning in d-rectangular
//! linear MDPs with total-variation uncertainty sets.
//!
//! The crate is organised bottom-up:
//!
//! - [`types`]: linear MDP specifications, feature maps, uncertainty levels,
//!   and the explicit finite-MDP form every environment compiles to.
//! - [`tv`]: exact solvers for the TV worst-case expectation (primal and dual).
//! - [`ridge`]: Gram matrices with maintained inverses and truncated ridge targets.
//! - [`agents`]: DR-LSVI-UCB and the non-robust LSVI-UCB baseline.
//! - [`envs`]: the simulated linear MDP, the American put option, tabular MDPs.
//! - [`oracle`]: robust dynamic programming, suboptimality and bound metrics.
//! - [`runner`]: experiment configuration, seeding, orchestration and persistence.
//!
//! Steps are 0-based throughout the code (`h = 0..H`), so the clipping
//! ceiling `H - h + 1` of the 1-based convention reads `H - h` here.

#![allow(clippy::needless_range_loop)]

pub mod agents;
pub mod envs;
pub mod error;
pub mod oracle;
pub mod ridge;
pub mod rng;
pub mod runner;
pub mod tv;
pub mod types;

pub use error::{Error, Result};
