//! Configuration-driven experiments for weighted substream SINR balancing.
//!
//! Each subcommand of the `sbal` binary is a function here taking an
//! [`ExperimentSpec`]; the binary only parses flags and maps errors to exit codes.

pub mod commands;
pub mod error;
pub mod output;
pub mod spec;

use std::path::PathBuf;

pub use commands::{cmd_balance, cmd_beamform, cmd_certify, cmd_sweep};
pub use error::{CliError, Result};
pub use spec::{DeltaMinMode, ExperimentSpec, Scale, WeightProfile};

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub realizations: Option<u32>,
    pub async_schedule: bool,
    pub delta_min_mode: Option<DeltaMinMode>,
    pub scale: Option<Scale>,
    pub workers: Option<usize>,
    pub ber: bool,
    pub target_scale: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, mut spec: ExperimentSpec) -> Result<ExperimentSpec> {
        if let Some(seed) = self.seed {
            spec.seed = seed;
        }
        if let Some(out) = &self.out {
            spec.out_dir = out.clone();
        }
        if let Some(n) = self.realizations {
            spec.realizations = n;
        }
        spec.async_schedule |= self.async_schedule;
        spec.ber |= self.ber;
        if let Some(mode) = self.delta_min_mode {
            spec.delta_min_mode = mode;
        }
        if let Some(scale) = self.scale {
            spec.scale = scale;
        }
        if self.workers.is_some() {
            spec.workers = self.workers;
        }
        if let Some(t) = self.target_scale {
            spec.target_scale = t;
        }
        spec.validate()?;
        Ok(spec)
    }
}
