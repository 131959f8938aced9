//! Multi-agent pathfinding on grids with cooperative reward shaping.
//!
//! * [`env`]: grid world with simultaneous moves and conflict resolution
//! * [`shaping`]: cooperativeness metrics and shaped rewards
//! * [`oracle`]: exhaustive joint value iteration and IGM checks
//! * [`iql`]: tabular independent Q-learning with a curriculum
//! * [`tune`]: finite-difference search over the cooperation coefficient
//! * [`cases`]: small hand-built layouts with known answers
//! * [`bench`]: file formats and the command implementations behind the CLI

pub mod bench;
pub mod cases;
pub mod env;
pub mod error;
pub mod iql;
pub mod oracle;
pub mod rng;
pub mod shaping;
pub mod tune;

pub use error::{Error, Result};
