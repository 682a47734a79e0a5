//! Experiment description read from TOML.

use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use sbal_core::balancer::{BalanceOptions, GapMode, Schedule};
use sbal_core::scenarios::Realization;
use sbal_core::{db_to_linear, NetworkConfig};

use crate::error::{CliError, Result};

/// Realization counts per SNR point with `--scale paper`.
pub const FULL_COUNTS: [u32; 4] = [1_000, 10_000, 100_000, 1_000_000];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    /// `realizations` channels at every SNR point.
    #[default]
    Desk,
    /// 10³, 10⁴, 10⁵, 10⁶ channels for the first four SNR points.
    Paper,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DeltaMinMode {
    #[default]
    Weighted,
    Raw,
}

impl From<DeltaMinMode> for GapMode {
    fn from(mode: DeltaMinMode) -> Self {
        match mode {
            DeltaMinMode::Weighted => GapMode::Weighted,
            DeltaMinMode::Raw => GapMode::Raw,
        }
    }
}

/// `"equal"`, one per-substream pattern shared by all users, or one list per user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightProfile {
    Named(String),
    Pattern(Vec<f64>),
    PerUser(Vec<Vec<f64>>),
}

impl Default for WeightProfile {
    fn default() -> Self {
        WeightProfile::Named("equal".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: String,
    pub users: usize,
    pub tx_antennas: usize,
    pub rx_antennas: usize,
    pub streams: usize,
    pub snr_db: Vec<f64>,
    pub realizations: u32,
    pub seed: u64,
    pub weights: WeightProfile,
    pub epsilon: f64,
    pub inner_limit: usize,
    pub outer_limit: usize,
    pub bf_iters: usize,
    pub ber: bool,
    pub ber_symbols: usize,
    pub async_schedule: bool,
    pub delta_min_mode: DeltaMinMode,
    pub scale: Scale,
    pub out_dir: PathBuf,
    /// Write channels.json / beamformers.json per realization from `beamform`.
    pub artifacts: bool,
    /// Multiplier applied to targets before certification.
    pub target_scale: f64,
    pub workers: Option<usize>,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            scenario: "three-user".into(),
            users: 3,
            tx_antennas: 4,
            rx_antennas: 4,
            streams: 2,
            snr_db: vec![10.0],
            realizations: 1000,
            seed: 1,
            weights: WeightProfile::default(),
            epsilon: 1e-3,
            inner_limit: 100,
            outer_limit: 50,
            bf_iters: 16,
            ber: false,
            ber_symbols: 1000,
            async_schedule: false,
            delta_min_mode: DeltaMinMode::Weighted,
            scale: Scale::Desk,
            out_dir: PathBuf::from("out"),
            artifacts: true,
            target_scale: 1.0,
            workers: None,
        }
    }
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(CliError::Config("realizations must be at least 1".into()));
        }
        if self.snr_db.is_empty() {
            return Err(CliError::Config("snr_db must list at least one value".into()));
        }
        if let Some(bad) = self.snr_db.iter().find(|s| !s.is_finite()) {
            return Err(CliError::Config(format!("snr_db entry {bad} is not finite")));
        }
        if self.ber_symbols == 0 {
            return Err(CliError::Config("ber_symbols must be at least 1".into()));
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        if !(self.target_scale > 0.0 && self.target_scale.is_finite()) {
            return Err(CliError::Config(format!("target_scale {} must be positive", self.target_scale)));
        }
        for snr in &self.snr_db {
            self.network_config(*snr)?;
        }
        Ok(())
    }

    fn weight_table(&self) -> Result<Vec<Vec<f64>>> {
        let d = self.streams;
        let table = match &self.weights {
            WeightProfile::Named(name) if name == "equal" => vec![vec![1.0; d]; self.users],
            WeightProfile::Named(name) => return Err(CliError::Config(format!("unknown weight profile {name:?}"))),
            WeightProfile::Pattern(p) => vec![p.clone(); self.users],
            WeightProfile::PerUser(rows) => rows.clone(),
        };
        if table.len() != self.users || table.iter().any(|row| row.len() != d) {
            return Err(CliError::Config(format!("weights must give {d} values for each of {} users", self.users)));
        }
        Ok(table)
    }

    /// Network at `snr_db`: per-user power `10^(snr/10)` against unit noise.
    pub fn network_config(&self, snr_db: f64) -> Result<NetworkConfig> {
        let mut config = NetworkConfig::symmetric(
            self.users,
            self.tx_antennas,
            self.rx_antennas,
            self.streams,
            db_to_linear(snr_db),
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        config.weights = self.weight_table()?;
        config.epsilon = self.epsilon;
        config.inner_limit = self.inner_limit;
        config.outer_limit = self.outer_limit;
        config.bf_iters = self.bf_iters;
        config.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(config)
    }

    /// Channel realizations at the `index`-th SNR point.
    pub fn realizations_at(&self, index: usize) -> u32 {
        match self.scale {
            Scale::Desk => self.realizations,
            Scale::Paper => FULL_COUNTS[index.min(FULL_COUNTS.len() - 1)],
        }
    }

    pub fn balance_options(&self, realization: u32) -> BalanceOptions {
        let schedule = if self.async_schedule {
            Schedule::Asynchronous { seed: Realization::schedule_seed(self.seed, realization) }
        } else {
            Schedule::Synchronous
        };
        BalanceOptions { schedule, gap_mode: self.delta_min_mode.into() }
    }
}
