//! Seeded experiment instances.
//!
//! Child seeds are derived with [`derive_seed`] per `(domain, realization)` so
//! any realization can be regenerated on its own, on any thread.

use rand::Rng;

use crate::balancer::LinkGains;
use crate::beamforming::design_beamformers;
use crate::error::Result;
use crate::model::{derive_seed, generate_channels, substream_rng, BeamformerSet, ChannelSet, NetworkConfig};

pub const CHANNEL_DOMAIN: u32 = 0;
pub const BEAMFORMER_DOMAIN: u32 = 1;
pub const LINK_DOMAIN: u32 = 2;
pub const TARGET_DOMAIN: u32 = 3;
pub const SCHEDULE_DOMAIN: u32 = 4;

/// One random interference channel with its max-SINR filters.
#[derive(Debug, Clone)]
pub struct Realization {
    pub index: u32,
    pub channels: ChannelSet,
    pub beamformers: BeamformerSet,
}

impl Realization {
    pub fn draw(config: &NetworkConfig, seed: u64, index: u32) -> Result<Self> {
        let channels = generate_channels(config, derive_seed(seed, CHANNEL_DOMAIN, index))?;
        let beamformers = design_beamformers(&channels, config, derive_seed(seed, BEAMFORMER_DOMAIN, index))?;
        Ok(Realization { index, channels, beamformers })
    }

    /// Seed for the Monte Carlo link simulation of this realization.
    pub fn link_seed(seed: u64, index: u32) -> u64 {
        derive_seed(seed, LINK_DOMAIN, index)
    }

    /// Seed for the asynchronous update order of this realization.
    pub fn schedule_seed(seed: u64, index: u32) -> u64 {
        derive_seed(seed, SCHEDULE_DOMAIN, index)
    }
}

/// Three-user setup: K = 3, 4×4 antennas, two streams, per-user power from `snr_db`.
pub fn three_user_config(snr_db: f64, weights: &[f64]) -> Result<NetworkConfig> {
    NetworkConfig::symmetric(3, 4, 4, 2, crate::db_to_linear(snr_db))?.with_weight_pattern(weights)
}

/// Targets for which the affine power map is a contraction in the plain max-norm,
/// with budgets large enough that no iterate from `p_k / d_k` ever hits a cap.
#[derive(Debug, Clone)]
pub struct ContractiveInstance {
    pub config: NetworkConfig,
    pub channels: ChannelSet,
    pub beamformers: BeamformerSet,
    /// Flat targets.
    pub targets: Vec<f64>,
    /// Row sums of `T` chosen when drawing the targets.
    pub row_sums: Vec<f64>,
}

/// Draws instance `index`; every row sum of `T` lies in `[0.1, 0.8]`.
///
/// Each target is `Γ_i = s_i G_ii / Σ_{j≠i} G_ij` for a drawn row sum `s_i`.
/// With `c = max_i s_i`, iterates stay below `B/d` per stream whenever
/// `B ≥ d ‖N‖_∞ / (1 − c)`; the budget is twice that.
pub fn contractive_instance(seed: u64, index: u32) -> Result<ContractiveInstance> {
    let design = three_user_config(10.0, &[1.0, 1.0])?;
    let real = Realization::draw(&design, seed, index)?;
    let gains = LinkGains::new(&real.channels, &real.beamformers)?;
    let dim = gains.layout().total();
    let mut rng = substream_rng(derive_seed(seed, TARGET_DOMAIN, index), 0);
    let row_sums: Vec<f64> = (0..dim).map(|_| rng.random_range(0.1..0.8)).collect();
    let mut targets = Vec::with_capacity(dim);
    let mut n_max: f64 = 0.0;
    for (i, s) in row_sums.iter().enumerate() {
        let direct = gains.gain(i, i);
        let leak: f64 = (0..dim).filter(|&j| j != i).map(|j| gains.gain(i, j)).sum();
        let target = s * direct / leak;
        n_max = n_max.max(target / direct);
        targets.push(target);
    }
    let c = row_sums.iter().cloned().fold(0.0, f64::max);
    let d = design.streams.iter().copied().max().unwrap_or(1) as f64;
    let mut config = design.with_budget(2.0 * d * n_max / (1.0 - c))?;
    config.epsilon = 1e-12;
    config.inner_limit = 10_000;
    Ok(ContractiveInstance { config, channels: real.channels, beamformers: real.beamformers, targets, row_sums })
}
