//! Network, channel, beamformer and power data model.
//!
//! Everything in the Rust API is zero-based. Files and reports written by
//! the harness are one-based; [`flatten_index`] is the one-based conversion
//! used at those boundaries.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Slack allowed on per-user power sums.
pub const BUDGET_SLACK: f64 = 1e-9;

/// Tolerance on the unit norm of beamformer columns.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Dimensions, budgets, weights and tolerances of a K-user interference channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub users: usize,
    pub tx_antennas: Vec<usize>,
    pub rx_antennas: Vec<usize>,
    pub streams: Vec<usize>,
    /// Per-user total transmit power (linear, unit noise variance).
    pub power_budget: Vec<f64>,
    /// Per-substream priority weights, indexed `[user][stream]`.
    pub weights: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub inner_limit: usize,
    pub outer_limit: usize,
    pub bf_iters: usize,
}

impl NetworkConfig {
    pub const DEFAULT_EPSILON: f64 = 1e-3;
    pub const DEFAULT_INNER_LIMIT: usize = 100;
    pub const DEFAULT_OUTER_LIMIT: usize = 50;
    pub const DEFAULT_BF_ITERS: usize = 16;

    /// Every user gets the same antennas, streams, budget and unit weights.
    pub fn symmetric(users: usize, tx: usize, rx: usize, streams: usize, budget: f64) -> Result<Self> {
        let config = NetworkConfig {
            users,
            tx_antennas: vec![tx; users],
            rx_antennas: vec![rx; users],
            streams: vec![streams; users],
            power_budget: vec![budget; users],
            weights: vec![vec![1.0; streams]; users],
            epsilon: Self::DEFAULT_EPSILON,
            inner_limit: Self::DEFAULT_INNER_LIMIT,
            outer_limit: Self::DEFAULT_OUTER_LIMIT,
            bf_iters: Self::DEFAULT_BF_ITERS,
        };
        config.validate()?;
        Ok(config)
    }

    /// Applies the same per-stream weight pattern to every user.
    pub fn with_weight_pattern(mut self, pattern: &[f64]) -> Result<Self> {
        self.weights = vec![pattern.to_vec(); self.users];
        self.validate()?;
        Ok(self)
    }

    pub fn with_budget(mut self, budget: f64) -> Result<Self> {
        self.power_budget = vec![budget; self.users];
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.users;
        if k == 0 {
            return Err(Error::Config("at least one user is required".into()));
        }
        let lens = [
            ("tx_antennas", self.tx_antennas.len()),
            ("rx_antennas", self.rx_antennas.len()),
            ("streams", self.streams.len()),
            ("power_budget", self.power_budget.len()),
            ("weights", self.weights.len()),
        ];
        for (name, len) in lens {
            if len != k {
                return Err(Error::Config(format!("{name} has {len} entries, expected {k}")));
            }
        }
        for user in 0..k {
            let d = self.streams[user];
            let limit = self.tx_antennas[user].min(self.rx_antennas[user]);
            if d == 0 || d > limit {
                return Err(Error::Config(format!(
                    "user {}: {d} streams with {}x{} antennas",
                    user + 1,
                    self.tx_antennas[user],
                    self.rx_antennas[user]
                )));
            }
            let budget = self.power_budget[user];
            if !(budget > 0.0 && budget.is_finite()) {
                return Err(Error::Config(format!("user {}: power budget {budget} must be positive", user + 1)));
            }
            let w = &self.weights[user];
            if w.len() != d {
                return Err(Error::Config(format!("user {}: {} weights for {d} streams", user + 1, w.len())));
            }
            if let Some(bad) = w.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
                return Err(Error::Config(format!("user {}: weight {bad} must be positive", user + 1)));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }

    pub fn layout(&self) -> StreamLayout {
        StreamLayout::new(&self.streams)
    }
}

/// User-major flat ordering of all substreams.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamLayout {
    streams: Vec<usize>,
    offsets: Vec<usize>,
}

impl StreamLayout {
    pub fn new(streams: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(streams.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for &d in streams {
            acc += d;
            offsets.push(acc);
        }
        StreamLayout { streams: streams.to_vec(), offsets }
    }

    pub fn users(&self) -> usize {
        self.streams.len()
    }

    pub fn streams(&self, user: usize) -> usize {
        self.streams[user]
    }

    pub fn stream_counts(&self) -> &[usize] {
        &self.streams
    }

    pub fn total(&self) -> usize {
        self.offsets[self.streams.len()]
    }

    /// Zero-based flat position of `(user, stream)`.
    pub fn flat(&self, user: usize, stream: usize) -> usize {
        debug_assert!(stream < self.streams[user]);
        self.offsets[user] + stream
    }

    pub fn user_range(&self, user: usize) -> std::ops::Range<usize> {
        self.offsets[user]..self.offsets[user + 1]
    }

    /// Inverse of [`StreamLayout::flat`].
    pub fn unflat(&self, index: usize) -> (usize, usize) {
        let user = self.offsets.partition_point(|&o| o <= index) - 1;
        (user, index - self.offsets[user])
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.streams
            .iter()
            .enumerate()
            .flat_map(|(k, &d)| (0..d).map(move |l| (k, l)))
    }

    /// Splits a flat vector into per-user vectors.
    pub fn split<T: Clone>(&self, flat: &[T]) -> Vec<Vec<T>> {
        (0..self.users()).map(|k| flat[self.user_range(k)].to_vec()).collect()
    }
}

/// One-based flat index `Σ_{m<k} d_m + l` of substream `l` of user `k`.
pub fn flatten_index(user: usize, stream: usize, streams: &[usize]) -> Result<usize> {
    if user == 0 || user > streams.len() {
        return Err(Error::Index(format!("user {user} not in 1..={}", streams.len())));
    }
    let d = streams[user - 1];
    if stream == 0 || stream > d {
        return Err(Error::Index(format!("stream {stream} not in 1..={d} for user {user}")));
    }
    Ok(streams[..user - 1].iter().sum::<usize>() + stream)
}

/// Inverse of [`flatten_index`], one-based on both sides.
pub fn unflatten_index(index: usize, streams: &[usize]) -> Result<(usize, usize)> {
    let total: usize = streams.iter().sum();
    if index == 0 || index > total {
        return Err(Error::Index(format!("flat index {index} not in 1..={total}")));
    }
    let (k, l) = StreamLayout::new(streams).unflat(index - 1);
    Ok((k + 1, l + 1))
}

/// ChaCha8 generator for substream `stream` of `seed`.
///
/// Every consumer of randomness gets its own stream so results do not depend
/// on evaluation order: channel block `(k, j)` uses stream `k * K + j`.
pub fn substream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent child seed, e.g. one per Monte Carlo realization.
pub fn derive_seed(seed: u64, domain: u32, index: u32) -> u64 {
    substream_rng(seed, (u64::from(domain) << 32) | u64::from(index)).random()
}

/// Circularly-symmetric CN(0, 1) sample: real and imaginary parts are N(0, 1/2).
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
}

/// The K×K grid of channel matrices; block `(k, j)` is `N_k × M_j` and maps
/// transmitter `j` to receiver `k`. Noise is unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    users: usize,
    blocks: Vec<CMatrix>,
}

impl ChannelSet {
    /// Builds a channel set from receiver-major blocks, checking dimensions.
    pub fn from_blocks(config: &NetworkConfig, blocks: Vec<CMatrix>) -> Result<Self> {
        config.validate()?;
        let k = config.users;
        if blocks.len() != k * k {
            return Err(Error::Config(format!("{} channel blocks, expected {}", blocks.len(), k * k)));
        }
        for rx in 0..k {
            for tx in 0..k {
                let h = &blocks[rx * k + tx];
                if h.shape() != (config.rx_antennas[rx], config.tx_antennas[tx]) {
                    return Err(Error::Config(format!(
                        "channel ({}, {}) is {}x{}, expected {}x{}",
                        rx + 1,
                        tx + 1,
                        h.nrows(),
                        h.ncols(),
                        config.rx_antennas[rx],
                        config.tx_antennas[tx]
                    )));
                }
            }
        }
        Ok(ChannelSet { users: k, blocks })
    }

    pub fn users(&self) -> usize {
        self.users
    }

    /// Channel from transmitter `tx` to receiver `rx`.
    pub fn get(&self, rx: usize, tx: usize) -> &CMatrix {
        &self.blocks[rx * self.users + tx]
    }

    pub fn rx_antennas(&self, user: usize) -> usize {
        self.get(user, user).nrows()
    }

    pub fn tx_antennas(&self, user: usize) -> usize {
        self.get(user, user).ncols()
    }

    /// Reciprocal network: block `(j, k)` becomes `H_{kj}^†`.
    pub fn reciprocal(&self) -> ChannelSet {
        let k = self.users;
        let mut blocks = Vec::with_capacity(k * k);
        for rx in 0..k {
            for tx in 0..k {
                blocks.push(self.get(tx, rx).adjoint());
            }
        }
        ChannelSet { users: k, blocks }
    }

    /// Checks that the grid matches `config`'s dimensions.
    pub fn check(&self, config: &NetworkConfig) -> Result<()> {
        ChannelSet::from_blocks(config, self.blocks.clone()).map(|_| ())
    }
}

/// Draws i.i.d. CN(0, 1) channels; a pure function of `(config, seed)`.
pub fn generate_channels(config: &NetworkConfig, seed: u64) -> Result<ChannelSet> {
    config.validate()?;
    let k = config.users;
    let mut blocks = Vec::with_capacity(k * k);
    for rx in 0..k {
        for tx in 0..k {
            let mut rng = substream_rng(seed, (rx * k + tx) as u64);
            let (n, m) = (config.rx_antennas[rx], config.tx_antennas[tx]);
            // Row-major draw order so the stream layout matches the file format.
            let mut h = CMatrix::zeros(n, m);
            for r in 0..n {
                for c in 0..m {
                    h[(r, c)] = complex_gaussian(&mut rng);
                }
            }
            blocks.push(h);
        }
    }
    Ok(ChannelSet { users: k, blocks })
}

/// Per-user transmit (`M_k × d_k`) and receive (`N_k × d_k`) filters with unit-norm columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    tx: Vec<CMatrix>,
    rx: Vec<CMatrix>,
}

impl BeamformerSet {
    pub fn new(tx: Vec<CMatrix>, rx: Vec<CMatrix>) -> Result<Self> {
        if tx.len() != rx.len() {
            return Err(Error::Config(format!("{} precoders but {} receivers", tx.len(), rx.len())));
        }
        for (user, (u, v)) in tx.iter().zip(&rx).enumerate() {
            if u.ncols() != v.ncols() || u.ncols() == 0 {
                return Err(Error::Config(format!(
                    "user {}: precoder has {} columns, receiver {}",
                    user + 1,
                    u.ncols(),
                    v.ncols()
                )));
            }
            for (side, m) in [("precoder", u), ("receiver", v)] {
                for (l, col) in m.column_iter().enumerate() {
                    let norm = col.norm();
                    if (norm - 1.0).abs() > UNIT_NORM_TOL {
                        return Err(Error::Config(format!(
                            "user {} {side} column {} has norm {norm}",
                            user + 1,
                            l + 1
                        )));
                    }
                }
            }
        }
        Ok(BeamformerSet { tx, rx })
    }

    /// Random unit-norm columns for every user, drawn from `seed`.
    pub fn random(config: &NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let draw = |rows: usize, cols: usize, stream: u64| {
            let mut rng = substream_rng(seed, stream);
            let mut m = CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(&mut rng));
            normalize_columns(&mut m);
            m
        };
        let k = config.users as u64;
        let tx = (0..config.users)
            .map(|u| draw(config.tx_antennas[u], config.streams[u], u as u64))
            .collect();
        let rx = (0..config.users)
            .map(|u| draw(config.rx_antennas[u], config.streams[u], k + u as u64))
            .collect();
        BeamformerSet::new(tx, rx)
    }

    pub fn users(&self) -> usize {
        self.tx.len()
    }

    pub fn precoder(&self, user: usize) -> &CMatrix {
        &self.tx[user]
    }

    pub fn receiver(&self, user: usize) -> &CMatrix {
        &self.rx[user]
    }

    pub fn streams(&self) -> Vec<usize> {
        self.tx.iter().map(|u| u.ncols()).collect()
    }

    /// Swaps the roles of transmit and receive filters (reciprocal network).
    pub fn swapped(&self) -> BeamformerSet {
        BeamformerSet { tx: self.rx.clone(), rx: self.tx.clone() }
    }

    pub(crate) fn from_parts_unchecked(tx: Vec<CMatrix>, rx: Vec<CMatrix>) -> Self {
        BeamformerSet { tx, rx }
    }

    pub(crate) fn into_parts(self) -> (Vec<CMatrix>, Vec<CMatrix>) {
        (self.tx, self.rx)
    }

    pub fn precoder_set(&self) -> &[CMatrix] {
        &self.tx
    }

    pub fn receiver_set(&self) -> &[CMatrix] {
        &self.rx
    }

    pub fn check(&self, channels: &ChannelSet) -> Result<()> {
        if self.users() != channels.users() {
            return Err(Error::Config(format!(
                "beamformers for {} users, channels for {}",
                self.users(),
                channels.users()
            )));
        }
        for user in 0..self.users() {
            if self.tx[user].nrows() != channels.tx_antennas(user)
                || self.rx[user].nrows() != channels.rx_antennas(user)
            {
                return Err(Error::Config(format!("user {}: beamformer dimensions do not match channels", user + 1)));
            }
        }
        Ok(())
    }
}

pub(crate) fn normalize_columns(m: &mut CMatrix) {
    for mut col in m.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col.unscale_mut(norm);
        }
    }
}

/// Per-substream powers, stored flat in user-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerAllocation {
    layout: StreamLayout,
    budget: Vec<f64>,
    powers: Vec<f64>,
}

impl PowerAllocation {
    /// Splits each user's budget equally across its streams.
    pub fn equal_split(config: &NetworkConfig) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let powers = layout
            .iter()
            .map(|(k, _)| config.power_budget[k] / config.streams[k] as f64)
            .collect();
        Ok(PowerAllocation { layout, budget: config.power_budget.clone(), powers })
    }

    pub fn from_flat(config: &NetworkConfig, powers: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let alloc = PowerAllocation { layout: config.layout(), budget: config.power_budget.clone(), powers };
        alloc.check()?;
        Ok(alloc)
    }

    pub fn from_per_user(config: &NetworkConfig, powers: &[Vec<f64>]) -> Result<Self> {
        Self::from_flat(config, powers.concat())
    }

    pub fn zeros(config: &NetworkConfig) -> Result<Self> {
        Self::from_flat(config, vec![0.0; config.layout().total()])
    }

    fn check(&self) -> Result<()> {
        if self.powers.len() != self.layout.total() {
            return Err(Error::Config(format!(
                "{} powers for {} substreams",
                self.powers.len(),
                self.layout.total()
            )));
        }
        if let Some(p) = self.powers.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::Domain(format!("power {p} must be finite and nonnegative")));
        }
        for k in 0..self.layout.users() {
            let total: f64 = self.user(k).iter().sum();
            if total > self.budget[k] + BUDGET_SLACK {
                return Err(Error::Domain(format!(
                    "user {} uses power {total}, budget {}",
                    k + 1,
                    self.budget[k]
                )));
            }
        }
        Ok(())
    }

    /// Replaces one user's powers; the allocation is unchanged on error.
    pub fn set_user(&mut self, user: usize, powers: &[f64]) -> Result<()> {
        let range = self.layout.user_range(user);
        if powers.len() != range.len() {
            return Err(Error::Config(format!("{} powers for {} streams", powers.len(), range.len())));
        }
        let old: Vec<f64> = self.powers[range.clone()].to_vec();
        self.powers[range.clone()].copy_from_slice(powers);
        if let Err(e) = self.check() {
            self.powers[range].copy_from_slice(&old);
            return Err(e);
        }
        Ok(())
    }

    pub fn layout(&self) -> &StreamLayout {
        &self.layout
    }

    pub fn budget(&self, user: usize) -> f64 {
        self.budget[user]
    }

    pub fn get(&self, user: usize, stream: usize) -> f64 {
        self.powers[self.layout.flat(user, stream)]
    }

    pub fn user(&self, user: usize) -> &[f64] {
        &self.powers[self.layout.user_range(user)]
    }

    pub fn flat(&self) -> &[f64] {
        &self.powers
    }

    pub fn per_user(&self) -> Vec<Vec<f64>> {
        self.layout.split(&self.powers)
    }
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

/// Row-major real/imaginary arrays of one complex matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl From<&CMatrix> for MatrixRecord {
    fn from(m: &CMatrix) -> Self {
        let mut re = Vec::with_capacity(m.len());
        let mut im = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                re.push(m[(r, c)].re);
                im.push(m[(r, c)].im);
            }
        }
        MatrixRecord { rows: m.nrows(), cols: m.ncols(), re, im }
    }
}

impl TryFrom<&MatrixRecord> for CMatrix {
    type Error = Error;

    fn try_from(rec: &MatrixRecord) -> Result<Self> {
        let n = rec.rows * rec.cols;
        if rec.re.len() != n || rec.im.len() != n {
            return Err(Error::Format(format!(
                "{}x{} matrix with {} real and {} imaginary entries",
                rec.rows,
                rec.cols,
                rec.re.len(),
                rec.im.len()
            )));
        }
        Ok(CMatrix::from_fn(rec.rows, rec.cols, |r, c| {
            Complex64::new(rec.re[r * rec.cols + c], rec.im[r * rec.cols + c])
        }))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ChannelSetRecord {
    users: usize,
    /// Receiver-major: entry `k * K + j` is the channel from `j` to `k`.
    channels: Vec<MatrixRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct BeamformerSetRecord {
    users: usize,
    precoders: Vec<MatrixRecord>,
    receivers: Vec<MatrixRecord>,
}

impl ChannelSet {
    /// JSON text; every `f64` is written in shortest round-trip form.
    pub fn to_json(&self) -> String {
        let rec = ChannelSetRecord { users: self.users, channels: self.blocks.iter().map(MatrixRecord::from).collect() };
        serde_json::to_string_pretty(&rec).expect("channel record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: ChannelSetRecord = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let k = rec.users;
        if k == 0 || rec.channels.len() != k * k {
            return Err(Error::Format(format!("{} channel blocks for {k} users", rec.channels.len())));
        }
        let blocks = rec.channels.iter().map(CMatrix::try_from).collect::<Result<Vec<_>>>()?;
        for rx in 0..k {
            for tx in 0..k {
                let h = &blocks[rx * k + tx];
                if h.nrows() != blocks[rx * k].nrows() || h.ncols() != blocks[tx].ncols() {
                    return Err(Error::Format(format!("channel ({}, {}) has inconsistent shape", rx + 1, tx + 1)));
                }
            }
        }
        Ok(ChannelSet { users: k, blocks })
    }
}

impl BeamformerSet {
    pub fn to_json(&self) -> String {
        let rec = BeamformerSetRecord {
            users: self.users(),
            precoders: self.tx.iter().map(MatrixRecord::from).collect(),
            receivers: self.rx.iter().map(MatrixRecord::from).collect(),
        };
        serde_json::to_string_pretty(&rec).expect("beamformer record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: BeamformerSetRecord = serde_json::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        if rec.precoders.len() != rec.users || rec.receivers.len() != rec.users {
            return Err(Error::Format(format!("beamformer record does not cover {} users", rec.users)));
        }
        let tx = rec.precoders.iter().map(CMatrix::try_from).collect::<Result<Vec<_>>>()?;
        let rx = rec.receivers.iter().map(CMatrix::try_from).collect::<Result<Vec<_>>>()?;
        BeamformerSet::new(tx, rx).map_err(|e| Error::Format(e.to_string()))
    }
}
