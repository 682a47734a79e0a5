//! The pipeline stages behind each subcommand.
//!
//! Every stage fans realizations out over a rayon pool and collects them back
//! in realization order before anything is written, so outputs do not depend
//! on the worker count.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use sbal_core::balancer::{balance, update_targets, LinkGains, OuterRecord};
use sbal_core::beamforming::all_sinrs;
use sbal_core::convergence::{build_map, certify, ContractionCertificate};
use sbal_core::metrics::{simulate_ber, sum_rate, LinkOptions};
use sbal_core::scenarios::Realization;
use sbal_core::{BeamformerSet, ChannelSet, NetworkConfig, PowerAllocation, StreamLayout};

use crate::error::{CliError, Result};
use crate::output::{ensure_dir, num, write_text, CsvOut, JsonLines};
use crate::spec::ExperimentSpec;

/// Runs `f` on a pool of `workers` threads, or on the global pool.
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// A realization that failed and was left out of the results.
#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub snr_db: f64,
    pub realization: u32,
    pub error: String,
}

fn fan_out<T: Send>(
    snr_db: f64,
    count: u32,
    skipped: &mut Vec<Skipped>,
    f: impl Fn(u32) -> sbal_core::Result<T> + Sync + Send,
) -> Vec<(u32, T)> {
    let results: Vec<(u32, sbal_core::Result<T>)> = (0..count).into_par_iter().map(|r| (r, f(r))).collect();
    let mut kept = Vec::with_capacity(results.len());
    for (r, res) in results {
        match res {
            Ok(v) => kept.push((r, v)),
            Err(e) => {
                warn!("snr {snr_db} dB, realization {}: skipped ({e})", r + 1);
                skipped.push(Skipped { snr_db, realization: r, error: e.to_string() });
            }
        }
    }
    kept
}

fn write_skipped(out: &Path, skipped: &[Skipped]) -> Result<()> {
    let mut csv = CsvOut::create(&out.join("skipped.csv"), &strings(&["snr_db", "realization", "error"]))?;
    for s in skipped {
        csv.row([num(s.snr_db), (s.realization + 1).to_string(), s.error.clone()])?;
    }
    csv.finish()
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// `max_l SINR / min_l SINR` for each user.
pub fn user_ratios(sinrs: &[Vec<f64>]) -> Vec<f64> {
    sinrs
        .iter()
        .map(|s| {
            let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
            hi / lo
        })
        .collect()
}

fn total_rate(sinrs: &[Vec<f64>]) -> sbal_core::Result<f64> {
    sum_rate(&sinrs.concat())
}

/// Artifact directory of one realization.
pub fn artifact_dir(out: &Path, snr_db: f64, realization: u32) -> PathBuf {
    out.join("artifacts").join(format!("snr_{snr_db}dB")).join(format!("r{:05}", realization + 1))
}

// ---------------------------------------------------------------------------
// beamform
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BeamformRow {
    pub snr_db: f64,
    pub realization: u32,
    /// Pre-balancing SINRs at equal power split, `[user][stream]`.
    pub sinrs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct BeamformReport {
    pub rows: Vec<BeamformRow>,
    pub skipped: Vec<Skipped>,
}

impl BeamformReport {
    /// Mean over realizations and users of the per-user SINR spread at `snr_db`.
    pub fn mean_spread(&self, snr_db: f64) -> f64 {
        let ratios: Vec<f64> = self.rows.iter().filter(|r| r.snr_db == snr_db).flat_map(|r| user_ratios(&r.sinrs)).collect();
        ratios.iter().sum::<f64>() / ratios.len() as f64
    }
}

pub fn cmd_beamform(spec: &ExperimentSpec) -> Result<BeamformReport> {
    spec.validate()?;
    let out = spec.out_dir.as_path();
    ensure_dir(out)?;
    let mut report = BeamformReport::default();
    let header = strings(&["scenario", "seed", "snr_db", "realization", "k", "l", "sinr", "user_ratio"]);
    let mut csv = CsvOut::create(&out.join("beamform_summary.csv"), &header)?;
    for (si, &snr_db) in spec.snr_db.iter().enumerate() {
        let config = spec.network_config(snr_db)?;
        let pw = PowerAllocation::equal_split(&config)?;
        let layout = config.layout();
        let draws = with_workers(spec.workers, || {
            fan_out(snr_db, spec.realizations_at(si), &mut report.skipped, |r| {
                let real = Realization::draw(&config, spec.seed, r)?;
                let sinrs = layout.split(&all_sinrs(&real.channels, &real.beamformers, &pw)?);
                Ok((real, sinrs))
            })
        })?;
        info!("beamform: {} realizations at {snr_db} dB", draws.len());
        for (r, (real, sinrs)) in draws {
            if spec.artifacts {
                let dir = artifact_dir(out, snr_db, r);
                write_text(&dir.join("channels.json"), &real.channels.to_json())?;
                write_text(&dir.join("beamformers.json"), &real.beamformers.to_json())?;
            }
            let ratios = user_ratios(&sinrs);
            for (k, l) in layout.iter() {
                csv.row([
                    spec.scenario.clone(),
                    spec.seed.to_string(),
                    num(snr_db),
                    (r + 1).to_string(),
                    (k + 1).to_string(),
                    (l + 1).to_string(),
                    num(sinrs[k][l]),
                    num(ratios[k]),
                ])?;
            }
            report.rows.push(BeamformRow { snr_db, realization: r, sinrs });
        }
    }
    csv.finish()?;
    write_skipped(out, &report.skipped)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// balance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct BalanceRow {
    pub snr_db: f64,
    pub realization: u32,
    pub converged: bool,
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub fairness_gap: f64,
    pub sinr_before: Vec<Vec<f64>>,
    pub sinr_after: Vec<Vec<f64>>,
    pub powers: Vec<Vec<f64>>,
    pub sum_rate_before: f64,
    pub sum_rate_after: f64,
    pub trace: Vec<OuterRecord>,
    /// Certificate of the affine map at each outer iteration's targets.
    pub certificates: Vec<ContractionCertificate>,
}

impl BalanceRow {
    pub fn ratio_before(&self) -> Vec<f64> {
        user_ratios(&self.sinr_before)
    }

    pub fn ratio_after(&self) -> Vec<f64> {
        user_ratios(&self.sinr_after)
    }
}

#[derive(Debug, Clone, Default)]
pub struct BalanceReport {
    pub rows: Vec<BalanceRow>,
    pub skipped: Vec<Skipped>,
}

#[derive(Serialize)]
struct TraceLine<'a> {
    snr_db: f64,
    realization: u32,
    #[serde(flatten)]
    record: &'a OuterRecord,
}

#[derive(Serialize)]
struct CertificateLine<'a> {
    snr_db: f64,
    realization: u32,
    iteration: usize,
    #[serde(flatten)]
    certificate: &'a ContractionCertificate,
}

fn balance_one(spec: &ExperimentSpec, config: &NetworkConfig, snr_db: f64, r: u32) -> sbal_core::Result<BalanceRow> {
    let real = Realization::draw(config, spec.seed, r)?;
    let result = balance(&real.channels, &real.beamformers, config, spec.balance_options(r))?;
    let certificates = result
        .trace
        .iter()
        .map(|rec| certify(&build_map(&real.channels, &real.beamformers, &rec.targets.concat())?, None))
        .collect::<sbal_core::Result<Vec<_>>>()?;
    let sinr_after = result.final_sinrs().to_vec();
    Ok(BalanceRow {
        snr_db,
        realization: r,
        converged: result.converged,
        outer_iters: result.outer_iters,
        inner_iters: result.inner_iters_total,
        fairness_gap: result.fairness_gap,
        sum_rate_before: total_rate(&result.initial_sinrs)?,
        sum_rate_after: total_rate(&sinr_after)?,
        sinr_before: result.initial_sinrs.clone(),
        sinr_after,
        powers: result.powers.per_user(),
        trace: result.trace,
        certificates,
    })
}

fn balance_header(layout: &StreamLayout) -> Vec<String> {
    let mut header = strings(&[
        "scenario",
        "seed",
        "snr_db",
        "realization",
        "converged",
        "outer_iters",
        "inner_iters",
        "fairness_gap",
        "sum_rate_before",
        "sum_rate_after",
    ]);
    for k in 0..layout.users() {
        header.push(format!("ratio_before_k{}", k + 1));
        header.push(format!("ratio_after_k{}", k + 1));
    }
    for (k, l) in layout.iter() {
        header.push(format!("sinr_before_k{}_l{}", k + 1, l + 1));
        header.push(format!("sinr_after_k{}_l{}", k + 1, l + 1));
        header.push(format!("power_k{}_l{}", k + 1, l + 1));
    }
    header
}

pub fn cmd_balance(spec: &ExperimentSpec) -> Result<BalanceReport> {
    spec.validate()?;
    let out = spec.out_dir.as_path();
    ensure_dir(out)?;
    let layout = spec.network_config(spec.snr_db[0])?.layout();
    let mut csv = CsvOut::create(&out.join("balance_summary.csv"), &balance_header(&layout))?;
    let mut trace = JsonLines::create(&out.join("trace.jsonl"))?;
    let mut certs = JsonLines::create(&out.join("certificates.jsonl"))?;
    let mut report = BalanceReport::default();
    for (si, &snr_db) in spec.snr_db.iter().enumerate() {
        let config = spec.network_config(snr_db)?;
        let rows = with_workers(spec.workers, || {
            fan_out(snr_db, spec.realizations_at(si), &mut report.skipped, |r| balance_one(spec, &config, snr_db, r))
        })?;
        info!("balance: {} realizations at {snr_db} dB", rows.len());
        for (_, row) in rows {
            let id = row.realization + 1;
            let mut fields = vec![
                spec.scenario.clone(),
                spec.seed.to_string(),
                num(snr_db),
                id.to_string(),
                u8::from(row.converged).to_string(),
                row.outer_iters.to_string(),
                row.inner_iters.to_string(),
                num(row.fairness_gap),
                num(row.sum_rate_before),
                num(row.sum_rate_after),
            ];
            for (before, after) in row.ratio_before().iter().zip(row.ratio_after()) {
                fields.push(num(*before));
                fields.push(num(after));
            }
            for (k, l) in layout.iter() {
                fields.push(num(row.sinr_before[k][l]));
                fields.push(num(row.sinr_after[k][l]));
                fields.push(num(row.powers[k][l]));
            }
            csv.row(&fields)?;
            for record in &row.trace {
                trace.push(&TraceLine { snr_db, realization: id, record })?;
            }
            for (record, certificate) in row.trace.iter().zip(&row.certificates) {
                certs.push(&CertificateLine { snr_db, realization: id, iteration: record.iteration, certificate })?;
            }
            report.rows.push(row);
        }
    }
    csv.finish()?;
    trace.finish()?;
    certs.finish()?;
    write_skipped(out, &report.skipped)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

pub const WITH_BALANCING: &str = "with-balancing";
pub const WITHOUT_BALANCING: &str = "without-balancing";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub variant: &'static str,
    pub metric: String,
    pub mean: f64,
    /// Sample standard deviation over realizations divided by `√count`.
    pub std_err: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<Skipped>,
}

impl SweepReport {
    pub fn get(&self, snr_db: f64, variant: &str, metric: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.snr_db == snr_db && r.variant == variant && r.metric == metric)
    }
}

#[derive(Debug, Clone)]
struct VariantSample {
    sinrs: Vec<Vec<f64>>,
    sum_rate: f64,
    /// Per-substream BER (flat) and aggregate BER.
    ber: Option<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
struct SweepSample {
    without: VariantSample,
    with: VariantSample,
    converged: bool,
}

fn measure(
    spec: &ExperimentSpec,
    real: &Realization,
    pw: &PowerAllocation,
    layout: &StreamLayout,
) -> sbal_core::Result<VariantSample> {
    let sinrs = layout.split(&all_sinrs(&real.channels, &real.beamformers, pw)?);
    let ber = if spec.ber {
        let seed = Realization::link_seed(spec.seed, real.index);
        let rep = simulate_ber(&real.channels, &real.beamformers, pw, spec.ber_symbols, seed, LinkOptions::default())?;
        Some((rep.ber, rep.aggregate_ber))
    } else {
        None
    };
    Ok(VariantSample { sum_rate: total_rate(&sinrs)?, sinrs, ber })
}

fn sweep_one(spec: &ExperimentSpec, config: &NetworkConfig, r: u32) -> sbal_core::Result<SweepSample> {
    let real = Realization::draw(config, spec.seed, r)?;
    let layout = config.layout();
    let equal = PowerAllocation::equal_split(config)?;
    let result = balance(&real.channels, &real.beamformers, config, spec.balance_options(r))?;
    Ok(SweepSample {
        without: measure(spec, &real, &equal, &layout)?,
        with: measure(spec, &real, &result.powers, &layout)?,
        converged: result.converged,
    })
}

/// Mean and standard error of `values`.
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summarize(snr_db: f64, variant: &'static str, samples: &[&VariantSample], layout: &StreamLayout) -> Vec<SweepRow> {
    let mut rows = Vec::new();
    let mut push = |metric: String, values: Vec<f64>| {
        let (mean, std_err) = mean_and_se(&values);
        rows.push(SweepRow { snr_db, variant, metric, mean, std_err, count: values.len() });
    };
    push("sum_rate".into(), samples.iter().map(|s| s.sum_rate).collect());
    push("sinr_mean".into(), samples.iter().map(|s| s.sinrs.concat().iter().sum::<f64>() / layout.total() as f64).collect());
    push(
        "sinr_ratio".into(),
        samples.iter().map(|s| user_ratios(&s.sinrs).iter().sum::<f64>() / layout.users() as f64).collect(),
    );
    if samples.first().is_some_and(|s| s.ber.is_some()) {
        push("ber".into(), samples.iter().map(|s| s.ber.as_ref().unwrap().1).collect());
        for (i, (k, l)) in layout.iter().enumerate() {
            push(format!("ber_k{}_l{}", k + 1, l + 1), samples.iter().map(|s| s.ber.as_ref().unwrap().0[i]).collect());
        }
    }
    rows
}

pub fn cmd_sweep(spec: &ExperimentSpec) -> Result<SweepReport> {
    spec.validate()?;
    let out = spec.out_dir.as_path();
    ensure_dir(out)?;
    let mut report = SweepReport::default();
    for (si, &snr_db) in spec.snr_db.iter().enumerate() {
        let config = spec.network_config(snr_db)?;
        let layout = config.layout();
        let samples = with_workers(spec.workers, || {
            fan_out(snr_db, spec.realizations_at(si), &mut report.skipped, |r| sweep_one(spec, &config, r))
        })?;
        info!("sweep: {} realizations at {snr_db} dB", samples.len());
        if samples.is_empty() {
            continue;
        }
        let without: Vec<&VariantSample> = samples.iter().map(|(_, s)| &s.without).collect();
        let with: Vec<&VariantSample> = samples.iter().map(|(_, s)| &s.with).collect();
        report.rows.extend(summarize(snr_db, WITHOUT_BALANCING, &without, &layout));
        report.rows.extend(summarize(snr_db, WITH_BALANCING, &with, &layout));
        let converged: Vec<f64> = samples.iter().map(|(_, s)| f64::from(u8::from(s.converged))).collect();
        let (mean, std_err) = mean_and_se(&converged);
        report.rows.push(SweepRow {
            snr_db,
            variant: WITH_BALANCING,
            metric: "converged".into(),
            mean,
            std_err,
            count: converged.len(),
        });
    }
    let mut csv = CsvOut::create(
        &out.join("sweep.csv"),
        &strings(&["scenario", "seed", "snr_db", "variant", "metric", "mean", "std_err", "count"]),
    )?;
    for row in &report.rows {
        csv.row([
            spec.scenario.clone(),
            spec.seed.to_string(),
            num(row.snr_db),
            row.variant.to_string(),
            row.metric.clone(),
            num(row.mean),
            num(row.std_err),
            row.count.to_string(),
        ])?;
    }
    csv.finish()?;
    write_skipped(out, &report.skipped)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// certify
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    /// `‖T‖_∞ < 1` with unit weights.
    Contractive,
    /// `ρ(T) < 1`: contractive under the Perron weight.
    Feasible,
    Infeasible,
}

impl Verdict {
    pub fn of(cert: &ContractionCertificate) -> Self {
        if cert.contractive {
            Verdict::Contractive
        } else if cert.rho < 1.0 {
            Verdict::Feasible
        } else {
            Verdict::Infeasible
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Contractive => "contractive",
            Verdict::Feasible => "feasible",
            Verdict::Infeasible => "infeasible",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CertifyRow {
    pub snr_db: Option<f64>,
    pub instance: String,
    pub targets: Vec<f64>,
    pub certificate: ContractionCertificate,
}

impl CertifyRow {
    pub fn verdict(&self) -> Verdict {
        Verdict::of(&self.certificate)
    }
}

#[derive(Debug, Clone, Default)]
pub struct CertifyReport {
    pub rows: Vec<CertifyRow>,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum TargetFile {
    Flat(Vec<f64>),
    PerUser(Vec<Vec<f64>>),
}

#[derive(Serialize)]
struct CertifyLine<'a> {
    snr_db: Option<f64>,
    instance: &'a str,
    verdict: Verdict,
    targets: &'a [f64],
    #[serde(flatten)]
    certificate: &'a ContractionCertificate,
}

/// Targets of the first outer iteration, `β^N Σ_l SINR` at equal power split.
pub fn initial_targets(channels: &ChannelSet, bf: &BeamformerSet, config: &NetworkConfig) -> sbal_core::Result<Vec<f64>> {
    if bf.streams() != config.streams {
        return Err(sbal_core::Error::Config("beamformer stream counts do not match the experiment".into()));
    }
    let gains = LinkGains::new(channels, bf)?;
    let pw = PowerAllocation::equal_split(config)?;
    let sinrs = config.layout().split(&gains.sinrs(pw.flat()));
    Ok(update_targets(&sinrs, &config.weights)?.flat())
}

fn read_artifact(dir: &Path, fallback: &NetworkConfig) -> Result<(ChannelSet, BeamformerSet, Vec<f64>)> {
    let read = |name: &str| {
        let path = dir.join(name);
        std::fs::read_to_string(&path).map_err(|e| CliError::io(path, e))
    };
    let channels = ChannelSet::from_json(&read("channels.json")?)?;
    let bf = BeamformerSet::from_json(&read("beamformers.json")?)?;
    bf.check(&channels)?;
    let targets_path = dir.join("targets.json");
    let targets = if targets_path.exists() {
        let parsed: TargetFile = serde_json::from_str(&read("targets.json")?)
            .map_err(|e| CliError::Config(format!("{}: {e}", targets_path.display())))?;
        match parsed {
            TargetFile::Flat(t) => t,
            TargetFile::PerUser(t) => t.concat(),
        }
    } else {
        initial_targets(&channels, &bf, fallback)?
    };
    Ok((channels, bf, targets))
}

/// Directories under `root` (itself included) holding a channels.json, sorted by path.
pub fn artifact_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            CliError::io(path, e.into_io_error().unwrap_or_else(|| std::io::Error::other("directory walk failed")))
        })?;
        if entry.file_type().is_file() && entry.file_name() == "channels.json" {
            dirs.push(entry.path().parent().unwrap_or(root).to_path_buf());
        }
    }
    if dirs.is_empty() {
        return Err(CliError::io(root, std::io::Error::new(std::io::ErrorKind::NotFound, "no channels.json found")));
    }
    Ok(dirs)
}

/// Certifies saved artifacts under `artifacts`, or freshly drawn realizations.
///
/// Without a targets.json the targets of the first outer iteration are used,
/// at the first SNR point of `spec`. Targets are multiplied by `target_scale`.
pub fn cmd_certify(spec: &ExperimentSpec, artifacts: Option<&Path>) -> Result<CertifyReport> {
    spec.validate()?;
    let out = spec.out_dir.as_path();
    ensure_dir(out)?;
    let mut report = CertifyReport::default();
    let scale = spec.target_scale;
    let scaled = |t: Vec<f64>| t.into_iter().map(|x| x * scale).collect::<Vec<_>>();
    match artifacts {
        Some(root) => {
            let fallback = spec.network_config(spec.snr_db[0])?;
            for dir in artifact_dirs(root)? {
                let (channels, bf, targets) = read_artifact(&dir, &fallback)?;
                let targets = scaled(targets);
                let instance = dir.strip_prefix(root).unwrap_or(&dir).display().to_string();
                let instance = if instance.is_empty() { ".".to_string() } else { instance };
                let certificate = certify(&build_map(&channels, &bf, &targets)?, None)?;
                report.rows.push(CertifyRow { snr_db: None, instance, targets, certificate });
            }
        }
        None => {
            for (si, &snr_db) in spec.snr_db.iter().enumerate() {
                let config = spec.network_config(snr_db)?;
                let rows = with_workers(spec.workers, || {
                    fan_out(snr_db, spec.realizations_at(si), &mut report.skipped, |r| {
                        let real = Realization::draw(&config, spec.seed, r)?;
                        let targets = scaled(initial_targets(&real.channels, &real.beamformers, &config)?);
                        let certificate = certify(&build_map(&real.channels, &real.beamformers, &targets)?, None)?;
                        Ok((targets, certificate))
                    })
                })?;
                for (r, (targets, certificate)) in rows {
                    report.rows.push(CertifyRow { snr_db: Some(snr_db), instance: format!("r{:05}", r + 1), targets, certificate });
                }
            }
        }
    }
    let mut csv = CsvOut::create(
        &out.join("certify.csv"),
        &strings(&["scenario", "snr_db", "instance", "c_unit", "c_perron", "rho", "rho_converged", "verdict", "fixed_point"]),
    )?;
    let mut lines = JsonLines::create(&out.join("certify.jsonl"))?;
    for row in &report.rows {
        let c = &row.certificate;
        let fixed = c.fixed_point.as_ref().map(|p| p.iter().map(|x| num(*x)).collect::<Vec<_>>().join(" ")).unwrap_or_default();
        csv.row([
            spec.scenario.clone(),
            row.snr_db.map(num).unwrap_or_default(),
            row.instance.clone(),
            num(c.c),
            num(c.c_perron),
            num(c.rho),
            u8::from(c.rho_converged).to_string(),
            row.verdict().as_str().to_string(),
            fixed,
        ])?;
        lines.push(&CertifyLine {
            snr_db: row.snr_db,
            instance: &row.instance,
            verdict: row.verdict(),
            targets: &row.targets,
            certificate: c,
        })?;
    }
    csv.finish()?;
    lines.finish()?;
    write_skipped(out, &report.skipped)?;
    Ok(report)
}
