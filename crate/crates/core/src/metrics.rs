//! Sum-rate and uncoded QPSK bit error rates over the full interference channel.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_1_SQRT_2;

use crate::beamforming::all_sinrs;
use crate::error::{Error, Result};
use crate::model::{complex_gaussian, substream_rng, BeamformerSet, CVector, ChannelSet, PowerAllocation};

/// `Σ log2(1 + SINR)` in bits per channel use.
pub fn sum_rate(sinrs: &[f64]) -> Result<f64> {
    if let Some(bad) = sinrs.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Domain(format!("SINR {bad} must be nonnegative")));
    }
    Ok(sinrs.iter().map(|s| (1.0 + s).log2()).sum())
}

/// Gray-mapped unit-energy QPSK: bit 0 picks the real sign, bit 1 the imaginary sign.
pub fn qpsk_map(bits: (u8, u8)) -> Complex64 {
    let axis = |b: u8| if b == 0 { FRAC_1_SQRT_2 } else { -FRAC_1_SQRT_2 };
    Complex64::new(axis(bits.0), axis(bits.1))
}

/// Per-component sign decision.
pub fn qpsk_demap(symbol: Complex64) -> (u8, u8) {
    (u8::from(symbol.re < 0.0), u8::from(symbol.im < 0.0))
}

/// One channel use: symbols, transmit vectors, noise, and received vectors.
#[derive(Debug, Clone)]
pub struct LinkRealization {
    pub bits: Vec<Vec<(u8, u8)>>,
    pub symbols: Vec<Vec<Complex64>>,
    /// `x_j = U_j √P_j d_j`
    pub transmitted: Vec<CVector>,
    pub noise: Vec<CVector>,
    /// `y_k = Σ_j H_kj x_j + z_k`
    pub received: Vec<CVector>,
}

impl LinkRealization {
    /// Draws one channel use; `noise = false` zeroes the receiver noise.
    pub fn draw<R: Rng + ?Sized>(
        channels: &ChannelSet,
        bf: &BeamformerSet,
        pw: &PowerAllocation,
        noise: bool,
        rng: &mut R,
    ) -> Self {
        let users = channels.users();
        let mut bits = Vec::with_capacity(users);
        let mut symbols = Vec::with_capacity(users);
        let mut transmitted = Vec::with_capacity(users);
        for j in 0..users {
            let d = pw.layout().streams(j);
            let b: Vec<(u8, u8)> = (0..d).map(|_| (rng.random_range(0..2u8), rng.random_range(0..2u8))).collect();
            let s: Vec<Complex64> = b.iter().map(|&b| qpsk_map(b)).collect();
            let scaled = CVector::from_iterator(d, s.iter().enumerate().map(|(l, s)| s * pw.get(j, l).sqrt()));
            transmitted.push(bf.precoder(j) * scaled);
            bits.push(b);
            symbols.push(s);
        }
        let noise: Vec<CVector> = (0..users)
            .map(|k| {
                let n = channels.rx_antennas(k);
                if noise {
                    CVector::from_fn(n, |_, _| complex_gaussian(rng))
                } else {
                    CVector::zeros(n)
                }
            })
            .collect();
        let received = (0..users)
            .map(|k| {
                let mut y = noise[k].clone();
                for (j, x) in transmitted.iter().enumerate() {
                    y += channels.get(k, j) * x;
                }
                y
            })
            .collect();
        LinkRealization { bits, symbols, transmitted, noise, received }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkOptions {
    pub noise: bool,
}

impl Default for LinkOptions {
    fn default() -> Self {
        LinkOptions { noise: true }
    }
}

/// Channel uses per RNG substream; block `b` draws from `substream_rng(seed, b)`.
pub const SYMBOL_BLOCK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Analytic SINRs, flat in user-major order.
    pub sinr: Vec<f64>,
    /// Per-user `Σ_l log2(1 + SINR_{k,l})`.
    pub user_rates: Vec<f64>,
    pub sum_rate: f64,
    pub bits: Vec<u64>,
    pub bit_errors: Vec<u64>,
    pub ber: Vec<f64>,
    pub aggregate_ber: f64,
    /// Sample signal power over sample interference-plus-noise power after filtering.
    pub empirical_sinr: Vec<f64>,
}

/// One CSV row per substream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub scenario: String,
    pub seed: u64,
    pub snr_db: f64,
    pub k: usize,
    pub l: usize,
    pub sinr: f64,
    pub rate: f64,
    pub ber: f64,
    pub bits: u64,
}

impl MetricReport {
    /// Rows with one-based `(k, l)`; `streams` gives each user's substream count.
    pub fn rows(&self, scenario: &str, seed: u64, snr_db: f64, streams: &[usize]) -> Vec<MetricRow> {
        let layout = crate::model::StreamLayout::new(streams);
        layout
            .iter()
            .enumerate()
            .map(|(i, (k, l))| MetricRow {
                scenario: scenario.to_string(),
                seed,
                snr_db,
                k: k + 1,
                l: l + 1,
                sinr: self.sinr[i],
                rate: (1.0 + self.sinr[i]).log2(),
                ber: self.ber[i],
                bits: self.bits[i],
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct BlockStats {
    errors: Vec<u64>,
    signal: Vec<f64>,
    impairment: Vec<f64>,
}

/// Monte Carlo uncoded BER with linear per-substream detection.
///
/// Each substream is detected by a hard decision on `v† y_k`, de-rotated by the
/// phase of its effective gain `v† H_kk u √p`. Deterministic in `seed` and
/// independent of thread count.
pub fn simulate_ber(
    channels: &ChannelSet,
    bf: &BeamformerSet,
    pw: &PowerAllocation,
    n_symbols: usize,
    seed: u64,
    options: LinkOptions,
) -> Result<MetricReport> {
    if n_symbols == 0 {
        return Err(Error::Domain("at least one symbol is required".into()));
    }
    let sinr = all_sinrs(channels, bf, pw)?;
    let layout = pw.layout().clone();
    let streams = layout.total();
    let gains: Vec<Complex64> = layout
        .iter()
        .map(|(k, l)| {
            let h = channels.get(k, k) * bf.precoder(k).column(l);
            bf.receiver(k).column(l).dotc(&h) * pw.get(k, l).sqrt()
        })
        .collect();

    let blocks = n_symbols.div_ceil(SYMBOL_BLOCK);
    let stats: Vec<BlockStats> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = substream_rng(seed, b as u64);
            let count = SYMBOL_BLOCK.min(n_symbols - b * SYMBOL_BLOCK);
            let mut st = BlockStats { errors: vec![0; streams], signal: vec![0.0; streams], impairment: vec![0.0; streams] };
            for _ in 0..count {
                let link = LinkRealization::draw(channels, bf, pw, options.noise, &mut rng);
                for (i, (k, l)) in layout.iter().enumerate() {
                    let r = bf.receiver(k).column(l).dotc(&link.received[k]);
                    let decided = qpsk_demap(gains[i].conj() * r);
                    let sent = link.bits[k][l];
                    st.errors[i] += u64::from(decided.0 != sent.0) + u64::from(decided.1 != sent.1);
                    let wanted = gains[i] * link.symbols[k][l];
                    st.signal[i] += wanted.norm_sqr();
                    st.impairment[i] += (r - wanted).norm_sqr();
                }
            }
            st
        })
        .collect();

    let mut bit_errors = vec![0u64; streams];
    let mut signal = vec![0.0; streams];
    let mut impairment = vec![0.0; streams];
    for st in &stats {
        for i in 0..streams {
            bit_errors[i] += st.errors[i];
            signal[i] += st.signal[i];
            impairment[i] += st.impairment[i];
        }
    }
    let bits_per_stream = 2 * n_symbols as u64;
    let bits = vec![bits_per_stream; streams];
    let ber: Vec<f64> = bit_errors.iter().map(|e| *e as f64 / bits_per_stream as f64).collect();
    let aggregate_ber = bit_errors.iter().sum::<u64>() as f64 / (bits_per_stream * streams as u64) as f64;
    let empirical_sinr = signal.iter().zip(&impairment).map(|(s, n)| s / n).collect();
    let user_rates = (0..layout.users())
        .map(|k| sum_rate(&sinr[layout.user_range(k)]))
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport {
        sum_rate: user_rates.iter().sum(),
        user_rates,
        sinr,
        bits,
        bit_errors,
        ber,
        aggregate_ber,
        empirical_sinr,
    })
}
