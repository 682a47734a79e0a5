//! Weighted substream SINR balancing for K-user MIMO interference channels.
//!
//! The pipeline is: draw channels ([`model`]), design max-SINR filters
//! ([`beamforming`]), balance weighted substream SINRs by distributed power
//! control with a linear search over targets ([`balancer`]), certify the inner
//! power loop ([`convergence`]), and measure SINR, sum-rate and BER
//! ([`metrics`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod balancer;
pub mod beamforming;
pub mod convergence;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scenarios;

pub use error::{Error, Result};
pub use model::{BeamformerSet, ChannelSet, NetworkConfig, PowerAllocation, StreamLayout};

/// Linear power for a per-user SNR in dB with unit noise variance.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
