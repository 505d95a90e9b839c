//! MELP 2.4 kbit/s speech codec with neural vocoder-parameter enhancement.

pub mod analysis;
pub mod audio;
pub mod bitstream;
pub mod config;
pub mod corpus;
pub mod dsp;
pub mod error;
pub mod features;
pub mod frame;
pub mod irm;
pub mod lpc;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod synthesis;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
