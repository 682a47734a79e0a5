//! Per-substream covariances, SINR, and alternating max-SINR filter design.

use nalgebra::Cholesky;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{BeamformerSet, CMatrix, CVector, ChannelSet, NetworkConfig, PowerAllocation};

/// Covariances seen by substream `(k, l)` at receiver `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBundle {
    /// `R = p H_kk u u† H_kk†`
    pub signal: CMatrix,
    /// `R' = H_kk u u† H_kk†`
    pub unit_signal: CMatrix,
    /// `Q`: every other substream, including the user's own.
    pub interference: CMatrix,
    /// `B = Q + I`
    pub interference_plus_noise: CMatrix,
}

fn check_inputs(channels: &ChannelSet, bf: &BeamformerSet, pw: &PowerAllocation) -> Result<()> {
    bf.check(channels)?;
    if bf.streams() != pw.layout().stream_counts() {
        return Err(Error::Config(format!(
            "beamformer streams {:?} do not match power layout {:?}",
            bf.streams(),
            pw.layout().stream_counts()
        )));
    }
    Ok(())
}

fn check_stream(pw: &PowerAllocation, user: usize, stream: usize) -> Result<()> {
    let layout = pw.layout();
    if user >= layout.users() || stream >= layout.streams(user) {
        return Err(Error::Index(format!("stream ({user}, {stream}) out of range (zero-based)")));
    }
    Ok(())
}

/// Effective channel `H_{rx,tx} u_{tx,s}` of transmit column `s`.
fn effective_channel(channels: &ChannelSet, bf: &BeamformerSet, rx: usize, tx: usize, s: usize) -> CVector {
    channels.get(rx, tx) * bf.precoder(tx).column(s)
}

fn outer(h: &CVector) -> CMatrix {
    h * h.adjoint()
}

/// Total received covariance `Σ_j H_kj U_j P_j U_j† H_kj†` at receiver `k`.
pub fn received_covariance(channels: &ChannelSet, bf: &BeamformerSet, pw: &PowerAllocation, user: usize) -> CMatrix {
    let n = channels.rx_antennas(user);
    let mut total = CMatrix::zeros(n, n);
    for tx in 0..channels.users() {
        for s in 0..pw.layout().streams(tx) {
            let p = pw.get(tx, s);
            if p == 0.0 {
                continue;
            }
            let h = effective_channel(channels, bf, user, tx, s);
            total += outer(&h) * Complex64::from(p);
        }
    }
    total
}

pub fn covariances(
    channels: &ChannelSet,
    bf: &BeamformerSet,
    pw: &PowerAllocation,
    user: usize,
    stream: usize,
) -> Result<CovarianceBundle> {
    check_inputs(channels, bf, pw)?;
    check_stream(pw, user, stream)?;
    let n = channels.rx_antennas(user);
    let mut interference = CMatrix::zeros(n, n);
    for tx in 0..channels.users() {
        for s in 0..pw.layout().streams(tx) {
            let p = pw.get(tx, s);
            if (tx, s) == (user, stream) || p == 0.0 {
                continue;
            }
            let h = effective_channel(channels, bf, user, tx, s);
            interference += outer(&h) * Complex64::from(p);
        }
    }
    let unit_signal = outer(&effective_channel(channels, bf, user, user, stream));
    let signal = &unit_signal * Complex64::from(pw.get(user, stream));
    let interference_plus_noise = &interference + CMatrix::identity(n, n);
    Ok(CovarianceBundle { signal, unit_signal, interference, interference_plus_noise })
}

/// `v† A v` for Hermitian `A`; the imaginary part is rounding noise.
pub(crate) fn quadratic_form(a: &CMatrix, v: &CVector) -> f64 {
    v.dotc(&(a * v)).re
}

pub fn sinr(channels: &ChannelSet, bf: &BeamformerSet, pw: &PowerAllocation, user: usize, stream: usize) -> Result<f64> {
    let cov = covariances(channels, bf, pw, user, stream)?;
    let v: CVector = bf.receiver(user).column(stream).into_owned();
    if v.norm() == 0.0 {
        return Err(Error::Domain(format!("zero receive filter for user {}, stream {}", user + 1, stream + 1)));
    }
    let num = quadratic_form(&cov.signal, &v).max(0.0);
    let den = quadratic_form(&cov.interference_plus_noise, &v);
    Ok(num / den)
}

/// SINR of every substream, flat in user-major order.
pub fn all_sinrs(channels: &ChannelSet, bf: &BeamformerSet, pw: &PowerAllocation) -> Result<Vec<f64>> {
    pw.layout().iter().map(|(k, l)| sinr(channels, bf, pw, k, l)).collect()
}

/// Max-SINR receive filter `B⁻¹ h / ‖B⁻¹ h‖` for Hermitian positive-definite `B`.
pub fn mmse_receive_filter(b: &CMatrix, h_eff: &CVector) -> Result<CVector> {
    if !b.is_square() || b.nrows() != h_eff.len() {
        return Err(Error::Config(format!(
            "covariance is {}x{}, channel has {} entries",
            b.nrows(),
            b.ncols(),
            h_eff.len()
        )));
    }
    let chol = Cholesky::new(b.clone())
        .ok_or_else(|| Error::LinearSolve("interference-plus-noise covariance is not positive definite".into()))?;
    let w = chol.solve(h_eff);
    let norm = w.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::LinearSolve(format!("receive filter has norm {norm}")));
    }
    Ok(w.unscale(norm))
}

/// Recomputes every receive filter with all transmit filters and powers held.
fn receive_filters(channels: &ChannelSet, bf: &BeamformerSet, pw: &PowerAllocation) -> Result<Vec<CMatrix>> {
    let mut receivers = Vec::with_capacity(channels.users());
    for user in 0..channels.users() {
        let n = channels.rx_antennas(user);
        let total = received_covariance(channels, bf, pw, user) + CMatrix::identity(n, n);
        let d = pw.layout().streams(user);
        let mut v = CMatrix::zeros(n, d);
        for l in 0..d {
            let h = effective_channel(channels, bf, user, user, l);
            let b = &total - outer(&h) * Complex64::from(pw.get(user, l));
            v.set_column(l, &mmse_receive_filter(&b, &h)?);
        }
        receivers.push(v);
    }
    Ok(receivers)
}

/// Forward half-step: max-SINR receive filters for the current precoders.
pub fn update_receivers(channels: &ChannelSet, bf: &BeamformerSet, pw: &PowerAllocation) -> Result<BeamformerSet> {
    check_inputs(channels, bf, pw)?;
    let rx = receive_filters(channels, bf, pw)?;
    Ok(BeamformerSet::from_parts_unchecked(bf.precoder_set().to_vec(), rx))
}

/// Reverse half-step: the same receive update in the reciprocal network, where
/// the current receive filters transmit with the same per-substream powers.
pub fn update_precoders(channels: &ChannelSet, bf: &BeamformerSet, pw: &PowerAllocation) -> Result<BeamformerSet> {
    update_precoders_with(&channels.reciprocal(), bf, pw)
}

fn update_precoders_with(reciprocal: &ChannelSet, bf: &BeamformerSet, pw: &PowerAllocation) -> Result<BeamformerSet> {
    let reverse = bf.swapped();
    check_inputs(reciprocal, &reverse, pw)?;
    let tx = receive_filters(reciprocal, &reverse, pw)?;
    Ok(BeamformerSet::from_parts_unchecked(tx, bf.receiver_set().to_vec()))
}

fn alternate_once(channels: &ChannelSet, reciprocal: &ChannelSet, bf: &BeamformerSet, pw: &PowerAllocation) -> Result<BeamformerSet> {
    let bf = update_receivers(channels, bf, pw)?;
    update_precoders_with(reciprocal, &bf, pw)
}

/// Result of [`max_sinr_alternate_traced`].
#[derive(Debug, Clone)]
pub struct MaxSinrOutcome {
    pub beamformers: BeamformerSet,
    /// Flat forward SINRs after each alternation (design powers).
    pub sinr_trace: Vec<Vec<f64>>,
}

/// Alternating max-SINR design from a random unit-norm start.
///
/// Runs `config.bf_iters` forward/reverse alternations at equal per-substream
/// design power `p_k / d_k`.
pub fn max_sinr_alternate(channels: &ChannelSet, config: &NetworkConfig, init_seed: u64) -> Result<BeamformerSet> {
    Ok(run_alternation(channels, config, init_seed, false)?.beamformers)
}

pub fn max_sinr_alternate_traced(channels: &ChannelSet, config: &NetworkConfig, init_seed: u64) -> Result<MaxSinrOutcome> {
    run_alternation(channels, config, init_seed, true)
}

fn run_alternation(channels: &ChannelSet, config: &NetworkConfig, init_seed: u64, trace: bool) -> Result<MaxSinrOutcome> {
    channels.check(config)?;
    let pw = PowerAllocation::equal_split(config)?;
    let reciprocal = channels.reciprocal();
    let mut bf = BeamformerSet::random(config, init_seed)?;
    let mut sinr_trace = Vec::new();
    for _ in 0..config.bf_iters {
        bf = alternate_once(channels, &reciprocal, &bf, &pw)?;
        if trace {
            sinr_trace.push(all_sinrs(channels, &bf, &pw)?);
        }
    }
    let (tx, rx) = bf.into_parts();
    Ok(MaxSinrOutcome { beamformers: BeamformerSet::new(tx, rx)?, sinr_trace })
}

/// Reorders each user's substreams by ascending SINR under `pw`.
///
/// Substream labels out of max-SINR design are arbitrary; sorting makes
/// stream 1 the weakest, which is what per-substream weights refer to.
/// Powers must be equal within each user for the SINRs to be preserved.
pub fn order_streams_by_sinr(channels: &ChannelSet, bf: &BeamformerSet, pw: &PowerAllocation) -> Result<BeamformerSet> {
    let sinrs = pw.layout().split(&all_sinrs(channels, bf, pw)?);
    let mut tx = Vec::with_capacity(bf.users());
    let mut rx = Vec::with_capacity(bf.users());
    for (user, user_sinrs) in sinrs.iter().enumerate() {
        let mut order: Vec<usize> = (0..user_sinrs.len()).collect();
        order.sort_by(|&a, &b| user_sinrs[a].total_cmp(&user_sinrs[b]));
        tx.push(bf.precoder(user).select_columns(&order));
        rx.push(bf.receiver(user).select_columns(&order));
    }
    BeamformerSet::new(tx, rx)
}

/// Max-SINR design followed by ascending stream ordering; the pipeline entry point.
pub fn design_beamformers(channels: &ChannelSet, config: &NetworkConfig, init_seed: u64) -> Result<BeamformerSet> {
    let bf = max_sinr_alternate(channels, config, init_seed)?;
    order_streams_by_sinr(channels, &bf, &PowerAllocation::equal_split(config)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::generate_channels;
    use rand::Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn scalar_setup(p: f64) -> (ChannelSet, BeamformerSet, PowerAllocation) {
        let config = NetworkConfig::symmetric(1, 1, 1, 1, 10.0).unwrap();
        let one = CMatrix::from_element(1, 1, c(1.0, 0.0));
        let ch = ChannelSet::from_blocks(&config, vec![one.clone()]).unwrap();
        let bf = BeamformerSet::new(vec![one.clone()], vec![one]).unwrap();
        let pw = PowerAllocation::from_flat(&config, vec![p]).unwrap();
        (ch, bf, pw)
    }

    #[test]
    fn scalar_covariances_and_sinr() {
        let (ch, bf, pw) = scalar_setup(4.0);
        let cov = covariances(&ch, &bf, &pw, 0, 0).unwrap();
        assert_eq!(cov.signal[(0, 0)], c(4.0, 0.0));
        assert_eq!(cov.interference[(0, 0)], c(0.0, 0.0));
        assert_eq!(cov.interference_plus_noise[(0, 0)], c(1.0, 0.0));
        assert_eq!(sinr(&ch, &bf, &pw, 0, 0).unwrap(), 4.0);
        let (ch, bf, pw) = scalar_setup(0.0);
        assert_eq!(sinr(&ch, &bf, &pw, 0, 0).unwrap(), 0.0);
        assert!(matches!(covariances(&ch, &bf, &pw, 0, 1), Err(Error::Index(_))));
    }

    #[test]
    fn zero_power_gives_identity_noise() {
        let config = NetworkConfig::symmetric(3, 4, 4, 2, 10.0).unwrap();
        let ch = generate_channels(&config, 2).unwrap();
        let bf = BeamformerSet::random(&config, 2).unwrap();
        let pw = PowerAllocation::zeros(&config).unwrap();
        for (k, l) in pw.layout().clone().iter() {
            let cov = covariances(&ch, &bf, &pw, k, l).unwrap();
            assert_eq!(cov.interference, CMatrix::zeros(4, 4));
            assert_eq!(cov.interference_plus_noise, CMatrix::identity(4, 4));
        }
    }

    #[test]
    fn mmse_filter_examples() {
        let b = CMatrix::identity(2, 2);
        let h = CVector::from_vec(vec![c(3.0, 0.0), c(0.0, 0.0)]);
        let v = mmse_receive_filter(&b, &h).unwrap();
        assert!((v[0] - c(1.0, 0.0)).norm() < 1e-15 && v[1].norm() < 1e-15);

        let b = CMatrix::from_diagonal(&CVector::from_vec(vec![c(1.0, 0.0), c(4.0, 0.0)]));
        let h = CVector::from_vec(vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let v = mmse_receive_filter(&b, &h).unwrap();
        let norm = (1.0f64 + 0.0625).sqrt();
        assert!((v[0].re - 1.0 / norm).abs() < 1e-15);
        assert!((v[1].re - 0.25 / norm).abs() < 1e-15);

        let singular = CMatrix::zeros(2, 2);
        assert!(matches!(mmse_receive_filter(&singular, &h), Err(Error::LinearSolve(_))));
    }

    #[test]
    fn mmse_filter_beats_random_filters() {
        let mut rng = crate::model::substream_rng(99, 0);
        for _ in 0..100 {
            let a = CMatrix::from_fn(4, 4, |_, _| crate::model::complex_gaussian(&mut rng));
            let b = &a * a.adjoint() + CMatrix::identity(4, 4);
            let h = CVector::from_fn(4, |_, _| crate::model::complex_gaussian(&mut rng));
            let r = &h * h.adjoint();
            let quotient = |v: &CVector| quadratic_form(&r, v) / quadratic_form(&b, v);
            let best = quotient(&mmse_receive_filter(&b, &h).unwrap());
            for _ in 0..1000 {
                let mut v = CVector::from_fn(4, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
                v.unscale_mut(v.norm());
                assert!(quotient(&v) <= best * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn zero_iterations_return_initialization() {
        let mut config = NetworkConfig::symmetric(3, 4, 4, 2, 10.0).unwrap();
        config.bf_iters = 0;
        let ch = generate_channels(&config, 4).unwrap();
        let bf = max_sinr_alternate(&ch, &config, 17).unwrap();
        assert_eq!(bf, BeamformerSet::random(&config, 17).unwrap());
    }

    #[test]
    fn ordering_sorts_sinrs_ascending() {
        let config = NetworkConfig::symmetric(3, 4, 4, 2, 10.0).unwrap();
        let ch = generate_channels(&config, 8).unwrap();
        let pw = PowerAllocation::equal_split(&config).unwrap();
        let raw = max_sinr_alternate(&ch, &config, 8).unwrap();
        let sorted = order_streams_by_sinr(&ch, &raw, &pw).unwrap();
        let mut before = all_sinrs(&ch, &raw, &pw).unwrap();
        let after = all_sinrs(&ch, &sorted, &pw).unwrap();
        for k in 0..3 {
            assert!(after[2 * k] <= after[2 * k + 1]);
        }
        let mut after_sorted = after.clone();
        before.sort_by(f64::total_cmp);
        after_sorted.sort_by(f64::total_cmp);
        for (a, b) in before.iter().zip(&after_sorted) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
