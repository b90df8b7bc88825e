//! Energy-minimal multicast of tiled 360-degree video over a shared wireless channel.

pub mod channel;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod oracle;
pub mod problems;
pub mod solver;
pub mod tiling;

pub use error::{Error, Result};
