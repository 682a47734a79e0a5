use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sbal_harness::commands::{mean_and_se, WITHOUT_BALANCING, WITH_BALANCING};
use sbal_harness::{cmd_balance, cmd_beamform, cmd_certify, cmd_sweep, DeltaMinMode, ExperimentSpec, Overrides, Result, Scale};

#[derive(Debug, Parser)]
#[command(name = "sbal", version, about = "Weighted substream SINR balancing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML experiment file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Channel realizations per SNR point (desk scale).
    #[arg(long, global = true)]
    realizations: Option<u32>,
    /// Update users in a shuffled order within each power-control sweep.
    #[arg(long, global = true)]
    async_schedule: bool,
    #[arg(long, global = true, value_enum)]
    delta_min_mode: Option<DeltaMinMode>,
    #[arg(long, global = true, value_enum)]
    scale: Option<Scale>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long, global = true)]
    workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw channels, design max-SINR filters, report pre-balancing SINRs.
    Beamform,
    /// Run the weighted SINR balancing per realization.
    Balance,
    /// SINR, sum-rate and BER with and without balancing over the SNR list.
    Sweep {
        /// Simulate uncoded QPSK bit errors.
        #[arg(long)]
        ber: bool,
    },
    /// Contraction certificates of the affine power map.
    Certify {
        /// Directory of channels.json / beamformers.json (and optional targets.json).
        #[arg(long)]
        artifacts: Option<PathBuf>,
        /// Multiply all targets by this factor.
        #[arg(long)]
        target_scale: Option<f64>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let base = match &cli.config {
        Some(path) => ExperimentSpec::load(path)?,
        None => ExperimentSpec::default(),
    };
    let mut overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        realizations: cli.realizations,
        async_schedule: cli.async_schedule,
        delta_min_mode: cli.delta_min_mode,
        scale: cli.scale,
        workers: cli.workers,
        ..Default::default()
    };
    let mut artifacts = None;
    match &cli.command {
        Command::Sweep { ber } => overrides.ber = *ber,
        Command::Certify { artifacts: dir, target_scale } => {
            overrides.target_scale = *target_scale;
            artifacts = dir.clone();
        }
        _ => {}
    }
    let spec = overrides.apply(base)?;
    match cli.command {
        Command::Beamform => {
            let report = cmd_beamform(&spec)?;
            for snr in &spec.snr_db {
                println!("{snr} dB: mean per-user SINR spread {:.3}", report.mean_spread(*snr));
            }
            println!("{} realizations, {} skipped", report.rows.len(), report.skipped.len());
        }
        Command::Balance => {
            let report = cmd_balance(&spec)?;
            for snr in &spec.snr_db {
                let rows: Vec<_> = report.rows.iter().filter(|r| r.snr_db == *snr).collect();
                let converged: Vec<f64> = rows.iter().map(|r| f64::from(u8::from(r.converged))).collect();
                let (rate, _) = mean_and_se(&converged);
                println!("{snr} dB: {} realizations, {:.1}% converged", rows.len(), 100.0 * rate);
            }
            println!("{} skipped", report.skipped.len());
        }
        Command::Sweep { .. } => {
            let report = cmd_sweep(&spec)?;
            for snr in &spec.snr_db {
                let rate = |v| report.get(*snr, v, "sum_rate").map_or(f64::NAN, |r| r.mean);
                println!(
                    "{snr} dB: sum-rate {:.3} without / {:.3} with balancing",
                    rate(WITHOUT_BALANCING),
                    rate(WITH_BALANCING)
                );
            }
        }
        Command::Certify { .. } => {
            let report = cmd_certify(&spec, artifacts.as_deref())?;
            for row in &report.rows {
                let c = &row.certificate;
                println!("{}: c = {:.6}, rho = {:.6}, {}", row.instance, c.c, c.rho, row.verdict().as_str());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
