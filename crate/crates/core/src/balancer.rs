//! Distributed substream power control and the linear search over SINR targets.
//!
//! The outer loop sets per-substream targets `Γ_{k,l} = β^N_{k,l} S_k` from the
//! SINRs achieved so far (`S_k` is the user's substream-SINR sum), the inner
//! loop runs the capped Yates law `p ← min(Γ δ, budget)` with each user filling
//! its substreams in ascending `δ` order, and the search stops once every
//! user's weighted SINRs agree to within `ε`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::beamforming::{covariances, quadratic_form};
use crate::error::{Error, Result};
use crate::model::{substream_rng, BeamformerSet, CVector, ChannelSet, NetworkConfig, PowerAllocation, StreamLayout};

/// Cross-gain table `G[i][j] = |v_i† H u_j|²` for frozen beamformers.
///
/// With unit-norm receive filters, `v_i† B_i v_i = Σ_{j≠i} p_j G[i][j] + ‖v_i‖²`,
/// so every SINR and `δ` evaluation in the power loops is a dot product.
#[derive(Debug, Clone)]
pub struct LinkGains {
    layout: StreamLayout,
    gain: Vec<f64>,
    noise: Vec<f64>,
}

impl LinkGains {
    pub fn new(channels: &ChannelSet, bf: &BeamformerSet) -> Result<Self> {
        bf.check(channels)?;
        let layout = StreamLayout::new(&bf.streams());
        let n = layout.total();
        let mut gain = vec![0.0; n * n];
        let mut noise = vec![0.0; n];
        for (i, (k, l)) in layout.iter().enumerate() {
            let v: CVector = bf.receiver(k).column(l).into_owned();
            noise[i] = v.norm_squared();
            for tx in 0..channels.users() {
                let row = v.adjoint() * channels.get(k, tx) * bf.precoder(tx);
                for (s, g) in row.iter().enumerate() {
                    gain[i * n + layout.flat(tx, s)] = g.norm_sqr();
                }
            }
        }
        Ok(LinkGains { layout, gain, noise })
    }

    pub fn layout(&self) -> &StreamLayout {
        &self.layout
    }

    /// Gain from source substream `source` into victim `victim` (flat indices).
    pub fn gain(&self, victim: usize, source: usize) -> f64 {
        self.gain[victim * self.layout.total() + source]
    }

    /// `v† B v` for substream `i` under flat powers `p`.
    pub fn interference_plus_noise(&self, i: usize, p: &[f64]) -> f64 {
        let n = self.layout.total();
        let row = &self.gain[i * n..(i + 1) * n];
        let cross: f64 = row.iter().zip(p).enumerate().filter(|(j, _)| *j != i).map(|(_, (g, p))| g * p).sum();
        cross + self.noise[i]
    }

    pub fn sinr(&self, i: usize, p: &[f64]) -> f64 {
        p[i] * self.gain(i, i) / self.interference_plus_noise(i, p)
    }

    pub fn sinrs(&self, p: &[f64]) -> Vec<f64> {
        (0..self.layout.total()).map(|i| self.sinr(i, p)).collect()
    }

    /// `δ_i = v† B v / v† R' v`, independent of the stream's own power.
    pub fn delta(&self, i: usize, p: &[f64]) -> Result<f64> {
        let direct = self.gain(i, i);
        if !(direct > 0.0) {
            let (user, stream) = self.layout.unflat(i);
            return Err(Error::DegenerateStream { user, stream });
        }
        Ok(self.interference_plus_noise(i, p) / direct)
    }

    pub fn deltas(&self, p: &[f64]) -> Result<Vec<f64>> {
        (0..self.layout.total()).map(|i| self.delta(i, p)).collect()
    }
}

/// `δ_{k,l} = v† B v / v† R' v`, evaluated from the covariance matrices.
pub fn delta(channels: &ChannelSet, bf: &BeamformerSet, pw: &PowerAllocation, user: usize, stream: usize) -> Result<f64> {
    let cov = covariances(channels, bf, pw, user, stream)?;
    let v: CVector = bf.receiver(user).column(stream).into_owned();
    let signal = quadratic_form(&cov.unit_signal, &v);
    if !(signal > 0.0) {
        return Err(Error::DegenerateStream { user, stream });
    }
    Ok(quadratic_form(&cov.interference_plus_noise, &v) / signal)
}

/// Uncapped Yates update `I(p) = Γ δ`, elementwise.
pub fn interference_function(deltas: &[f64], targets: &[f64]) -> Vec<f64> {
    deltas.iter().zip(targets).map(|(d, g)| g * d).collect()
}

/// One user's capped power update.
///
/// Substreams are served from lowest to highest `δ` (ties by index); each takes
/// `min(Γ δ, remaining budget)`. The power sum never exceeds `budget`.
pub fn inner_power_step(deltas: &[f64], targets: &[f64], budget: f64) -> Vec<f64> {
    assert_eq!(deltas.len(), targets.len(), "one target per substream");
    let mut remaining_deltas = deltas.to_vec();
    let sentinel = 2.0 * deltas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut powers = vec![0.0; deltas.len()];
    let mut total = 0.0;
    for _ in 0..deltas.len() {
        let mut y = 0;
        for (i, d) in remaining_deltas.iter().enumerate() {
            if *d < remaining_deltas[y] {
                y = i;
            }
        }
        let wanted = targets[y] * deltas[y];
        powers[y] = wanted.min((budget - total).max(0.0));
        total += powers[y];
        remaining_deltas[y] = sentinel;
    }
    // Rounding in the running total can overshoot by a few ulps.
    loop {
        let excess = powers.iter().sum::<f64>() - budget;
        if excess <= 0.0 {
            break;
        }
        let big = (0..powers.len()).fold(0, |a, i| if powers[i] > powers[a] { i } else { a });
        powers[big] = (powers[big] - excess).max(0.0).next_down().max(0.0);
    }
    powers
}

/// Per-user targets derived from achieved SINRs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    /// `Γ_{k,l}`, indexed `[user][stream]`.
    pub targets: Vec<Vec<f64>>,
    /// `Γ^C_k = S_k / Σ_l β_{k,l}`, so that `Γ_{k,l} = β_{k,l} Γ^C_k`.
    pub common: Vec<f64>,
    /// `β^N_{k,l} = β_{k,l} / Σ_l β_{k,l}`.
    pub normalized_weights: Vec<Vec<f64>>,
}

impl TargetState {
    pub fn flat(&self) -> Vec<f64> {
        self.targets.concat()
    }
}

/// `Γ_{k,l} = β^N_{k,l} Σ_l SINR_{k,l}`; for equal weights this is the user's average SINR.
pub fn update_targets(sinrs: &[Vec<f64>], beta: &[Vec<f64>]) -> Result<TargetState> {
    if sinrs.len() != beta.len() {
        return Err(Error::Config(format!("SINRs for {} users, weights for {}", sinrs.len(), beta.len())));
    }
    let mut state = TargetState { targets: vec![], common: vec![], normalized_weights: vec![] };
    for (k, (s, b)) in sinrs.iter().zip(beta).enumerate() {
        if s.len() != b.len() {
            return Err(Error::Config(format!("user {}: {} SINRs, {} weights", k + 1, s.len(), b.len())));
        }
        let budget: f64 = s.iter().sum();
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::Domain(format!("user {}: SINR sum {budget} must be positive", k + 1)));
        }
        let weight_sum: f64 = b.iter().sum();
        let norm: Vec<f64> = b.iter().map(|w| w / weight_sum).collect();
        state.targets.push(norm.iter().map(|w| w * budget).collect());
        state.common.push(budget / weight_sum);
        state.normalized_weights.push(norm);
    }
    Ok(state)
}

/// Which SINRs the minimum in the fairness gap is taken over.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GapMode {
    /// `min_l SINR_{k,l} / β_{k,l}`; zero at every weighted-balanced point.
    #[default]
    Weighted,
    /// `min_l SINR_{k,l}` over unweighted SINRs.
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairnessGap {
    pub per_user: Vec<f64>,
    pub total: f64,
}

/// `Δ_k = mean_l(SINR_{k,l}/β_{k,l}) − min(...)`, floored at zero, and `Σ_k Δ_k`.
pub fn fairness_gap(sinrs: &[Vec<f64>], beta: &[Vec<f64>], mode: GapMode) -> FairnessGap {
    let per_user: Vec<f64> = sinrs
        .iter()
        .zip(beta)
        .map(|(s, b)| {
            let weighted: Vec<f64> = s.iter().zip(b).map(|(s, b)| s / b).collect();
            let mean = weighted.iter().sum::<f64>() / weighted.len() as f64;
            let floor = match mode {
                GapMode::Weighted => &weighted,
                GapMode::Raw => s,
            };
            let min = floor.iter().cloned().fold(f64::INFINITY, f64::min);
            (mean - min).max(0.0)
        })
        .collect();
    let total = per_user.iter().sum();
    FairnessGap { per_user, total }
}

/// Order in which users apply their power updates within one inner sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Schedule {
    /// Every user updates from the previous sweep's powers (Jacobi).
    #[default]
    Synchronous,
    /// Users update one after another in a seeded random order, each seeing
    /// the powers already updated in this sweep.
    Asynchronous { seed: u64 },
}

#[derive(Debug, Clone)]
pub struct InnerLoopOutcome {
    pub powers: PowerAllocation,
    pub iterations: usize,
    /// The summed l1 power change fell to `ε` before the iteration cap.
    pub converged: bool,
    /// Flat power iterates starting with the initialization; empty unless requested.
    pub trace: Vec<Vec<f64>>,
}

/// Inner power-control loop over frozen beamformers.
#[derive(Debug, Clone)]
pub struct PowerController<'a> {
    gains: LinkGains,
    config: &'a NetworkConfig,
    schedule: Schedule,
    record_trace: bool,
}

impl<'a> PowerController<'a> {
    pub fn new(channels: &ChannelSet, bf: &BeamformerSet, config: &'a NetworkConfig) -> Result<Self> {
        config.validate()?;
        channels.check(config)?;
        bf.check(channels)?;
        if bf.streams() != config.streams {
            return Err(Error::Config("beamformer stream counts do not match config".into()));
        }
        Ok(PowerController { gains: LinkGains::new(channels, bf)?, config, schedule: Schedule::default(), record_trace: false })
    }

    pub fn with_schedule(mut self, schedule: Schedule) -> Self {
        self.schedule = schedule;
        self
    }

    pub fn recording_trace(mut self, record: bool) -> Self {
        self.record_trace = record;
        self
    }

    pub fn gains(&self) -> &LinkGains {
        &self.gains
    }

    pub fn config(&self) -> &NetworkConfig {
        self.config
    }

    /// Runs the capped power law from `p_k / d_k` until the summed l1 change is
    /// at most `ε` or `inner_limit` sweeps have run.
    pub fn run(&self, targets: &[f64]) -> Result<InnerLoopOutcome> {
        let start = PowerAllocation::equal_split(self.config)?;
        self.run_from(targets, start.flat().to_vec())
    }

    /// As [`PowerController::run`] but from an arbitrary flat starting point.
    pub fn run_from(&self, targets: &[f64], start: Vec<f64>) -> Result<InnerLoopOutcome> {
        let layout = self.gains.layout();
        if targets.len() != layout.total() || start.len() != layout.total() {
            return Err(Error::Config(format!("expected {} targets and powers", layout.total())));
        }
        if let Some(t) = targets.iter().find(|t| !(**t > 0.0 && t.is_finite())) {
            return Err(Error::Domain(format!("target {t} must be positive")));
        }
        let mut p = start;
        let mut trace = Vec::new();
        if self.record_trace {
            trace.push(p.clone());
        }
        let mut iterations = 0;
        let mut converged = false;
        while iterations < self.config.inner_limit {
            let next = self.sweep(targets, &p, iterations)?;
            iterations += 1;
            let change: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
            p = next;
            if self.record_trace {
                trace.push(p.clone());
            }
            if change <= self.config.epsilon {
                converged = true;
                break;
            }
        }
        let powers = PowerAllocation::from_flat(self.config, p)?;
        Ok(InnerLoopOutcome { powers, iterations, converged, trace })
    }

    fn sweep(&self, targets: &[f64], p: &[f64], sweep: usize) -> Result<Vec<f64>> {
        let layout = self.gains.layout();
        let mut next = p.to_vec();
        match self.schedule {
            Schedule::Synchronous => {
                let deltas = self.gains.deltas(p)?;
                for k in 0..layout.users() {
                    let r = layout.user_range(k);
                    let update = inner_power_step(&deltas[r.clone()], &targets[r.clone()], self.config.power_budget[k]);
                    next[r].copy_from_slice(&update);
                }
            }
            Schedule::Asynchronous { seed } => {
                let mut order: Vec<usize> = (0..layout.users()).collect();
                order.shuffle(&mut substream_rng(seed, sweep as u64));
                for k in order {
                    let r = layout.user_range(k);
                    let deltas = r.clone().map(|i| self.gains.delta(i, &next)).collect::<Result<Vec<_>>>()?;
                    let update = inner_power_step(&deltas, &targets[r.clone()], self.config.power_budget[k]);
                    next[r].copy_from_slice(&update);
                }
            }
        }
        Ok(next)
    }
}

/// Inner loop at fixed targets for frozen beamformers.
pub fn run_inner_loop(
    channels: &ChannelSet,
    bf: &BeamformerSet,
    targets: &TargetState,
    config: &NetworkConfig,
    schedule: Schedule,
) -> Result<InnerLoopOutcome> {
    PowerController::new(channels, bf, config)?.with_schedule(schedule).run(&targets.flat())
}

/// What the linear search needs from one inner power-control run.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub powers: PowerAllocation,
    /// SINRs achieved with `powers`, indexed `[user][stream]`.
    pub sinrs: Vec<Vec<f64>>,
    pub inner_iterations: usize,
    pub inner_converged: bool,
}

/// Runs power control at the given targets and reports the achieved SINRs.
pub trait TargetEvaluator {
    fn evaluate(&mut self, targets: &TargetState) -> Result<Evaluation>;
}

impl TargetEvaluator for PowerController<'_> {
    fn evaluate(&mut self, targets: &TargetState) -> Result<Evaluation> {
        let outcome = self.run(&targets.flat())?;
        let sinrs = self.gains.layout().split(&self.gains.sinrs(outcome.powers.flat()));
        Ok(Evaluation {
            powers: outcome.powers,
            sinrs,
            inner_iterations: outcome.iterations,
            inner_converged: outcome.converged,
        })
    }
}

/// One outer iteration of the linear search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    /// One-based outer iteration number.
    pub iteration: usize,
    pub targets: Vec<Vec<f64>>,
    pub common_targets: Vec<f64>,
    pub sinrs: Vec<Vec<f64>>,
    pub powers: Vec<Vec<f64>>,
    pub gaps: Vec<f64>,
    pub gap_total: f64,
    pub inner_iterations: usize,
    pub inner_converged: bool,
}

#[derive(Debug, Clone)]
pub struct BalanceResult {
    pub initial_sinrs: Vec<Vec<f64>>,
    pub powers: PowerAllocation,
    pub trace: Vec<OuterRecord>,
    /// `Σ_k Δ_k ≤ ε` was reached before the outer cap.
    pub converged: bool,
    pub outer_iters: usize,
    pub inner_iters_total: usize,
    pub fairness_gap: f64,
}

impl BalanceResult {
    pub fn final_sinrs(&self) -> &[Vec<f64>] {
        self.trace.last().map_or(&self.initial_sinrs, |r| &r.sinrs)
    }

    pub fn sinr_trace(&self) -> Vec<Vec<Vec<f64>>> {
        self.trace.iter().map(|r| r.sinrs.clone()).collect()
    }

    pub fn target_trace(&self) -> Vec<Vec<Vec<f64>>> {
        self.trace.iter().map(|r| r.targets.clone()).collect()
    }

    /// One JSON object per outer iteration, newline-terminated.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for record in &self.trace {
            out.push_str(&serde_json::to_string(record).expect("outer record serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BalanceOptions {
    pub schedule: Schedule,
    pub gap_mode: GapMode,
}

/// Linear search over common targets, starting from `initial_sinrs`.
///
/// Stops when `Σ_k Δ_k ≤ epsilon`; reaching `outer_limit` first is reported
/// through `converged = false`, not as an error.
pub fn linear_search<E: TargetEvaluator>(
    initial_sinrs: Vec<Vec<f64>>,
    beta: &[Vec<f64>],
    epsilon: f64,
    outer_limit: usize,
    gap_mode: GapMode,
    evaluator: &mut E,
) -> Result<BalanceResult> {
    let mut sinrs = initial_sinrs.clone();
    let mut trace = Vec::new();
    let mut powers = None;
    let mut inner_iters_total = 0;
    let mut converged = false;
    let mut gap_total = fairness_gap(&sinrs, beta, gap_mode).total;
    for iteration in 1..=outer_limit {
        let targets = update_targets(&sinrs, beta)?;
        let eval = evaluator.evaluate(&targets)?;
        inner_iters_total += eval.inner_iterations;
        sinrs = eval.sinrs;
        let gap = fairness_gap(&sinrs, beta, gap_mode);
        gap_total = gap.total;
        trace.push(OuterRecord {
            iteration,
            targets: targets.targets,
            common_targets: targets.common,
            sinrs: sinrs.clone(),
            powers: eval.powers.per_user(),
            gaps: gap.per_user,
            gap_total: gap.total,
            inner_iterations: eval.inner_iterations,
            inner_converged: eval.inner_converged,
        });
        powers = Some(eval.powers);
        if gap.total <= epsilon {
            converged = true;
            break;
        }
    }
    let powers = powers.ok_or_else(|| Error::Config("outer iteration cap must be at least 1".into()))?;
    Ok(BalanceResult {
        initial_sinrs,
        powers,
        outer_iters: trace.len(),
        trace,
        converged,
        inner_iters_total,
        fairness_gap: gap_total,
    })
}

/// Balances weighted substream SINRs for frozen beamformers.
///
/// The starting SINRs are those of the beamformers at equal power split.
pub fn balance(channels: &ChannelSet, bf: &BeamformerSet, config: &NetworkConfig, options: BalanceOptions) -> Result<BalanceResult> {
    let mut controller = PowerController::new(channels, bf, config)?.with_schedule(options.schedule);
    let layout = config.layout();
    let start = PowerAllocation::equal_split(config)?;
    let initial = layout.split(&controller.gains().sinrs(start.flat()));
    linear_search(initial, &config.weights, config.epsilon, config.outer_limit, options.gap_mode, &mut controller)
}
