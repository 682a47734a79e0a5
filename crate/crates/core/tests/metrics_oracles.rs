use num_complex::Complex64;
use proptest::prelude::*;
use sbal_core::metrics::*;
use sbal_core::model::*;
use sbal_core::scenarios::{three_user_config, Realization};
use statrs::function::erf::erfc;

fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Single 1x1 link with unit gain; SINR equals the transmit power.
fn scalar_link(power: f64) -> (NetworkConfig, ChannelSet, BeamformerSet, PowerAllocation) {
    let config = NetworkConfig::symmetric(1, 1, 1, 1, power).unwrap();
    let one = CMatrix::from_element(1, 1, Complex64::new(1.0, 0.0));
    let ch = ChannelSet::from_blocks(&config, vec![one.clone()]).unwrap();
    let bf = BeamformerSet::new(vec![one.clone()], vec![one]).unwrap();
    let pw = PowerAllocation::equal_split(&config).unwrap();
    (config, ch, bf, pw)
}

#[test]
fn awgn_ber_matches_gray_qpsk_closed_form() {
    for ebn0_db in [0.0, 2.0, 4.0] {
        let gamma_b = 10f64.powf(ebn0_db / 10.0);
        // Unit-energy symbols, unit noise: Es/N0 = p and Eb/N0 = p / 2.
        let (_, ch, bf, pw) = scalar_link(2.0 * gamma_b);
        let report = simulate_ber(&ch, &bf, &pw, 500_000, 11, LinkOptions::default()).unwrap();
        assert_eq!(report.bits[0], 1_000_000);
        let expected = q_function((2.0 * gamma_b).sqrt());
        let sigma = (expected * (1.0 - expected) / 1e6).sqrt();
        assert!(
            (report.ber[0] - expected).abs() <= 3.0 * sigma,
            "Eb/N0 {ebn0_db} dB: {} vs {expected}",
            report.ber[0]
        );
    }
}

#[test]
fn noiseless_scalar_link_is_error_free() {
    let (_, ch, bf, pw) = scalar_link(0.01);
    let report = simulate_ber(&ch, &bf, &pw, 5000, 1, LinkOptions { noise: false }).unwrap();
    assert_eq!(report.bit_errors[0], 0);
}

#[test]
fn empirical_sinr_tracks_analytic_value() {
    let config = three_user_config(10.0, &[1.0, 1.0]).unwrap();
    let pw = PowerAllocation::equal_split(&config).unwrap();
    for r in 0..3 {
        let real = Realization::draw(&config, 12, r).unwrap();
        let report = simulate_ber(&real.channels, &real.beamformers, &pw, 100_000, 5 + r as u64, LinkOptions::default()).unwrap();
        for (emp, analytic) in report.empirical_sinr.iter().zip(&report.sinr) {
            assert!((emp - analytic).abs() <= 0.03 * analytic, "{emp} vs {analytic}");
        }
    }
}

#[test]
fn ber_estimates_agree_across_seeds() {
    let config = three_user_config(5.0, &[1.0, 1.0]).unwrap();
    let real = Realization::draw(&config, 13, 0).unwrap();
    let pw = PowerAllocation::equal_split(&config).unwrap();
    let a = simulate_ber(&real.channels, &real.beamformers, &pw, 50_000, 100, LinkOptions::default()).unwrap();
    let b = simulate_ber(&real.channels, &real.beamformers, &pw, 50_000, 200, LinkOptions::default()).unwrap();
    assert_ne!(a.bit_errors, b.bit_errors);
    for i in 0..a.ber.len() {
        let n = a.bits[i] as f64;
        let pooled = 0.5 * (a.ber[i] + b.ber[i]);
        let se = (2.0 * pooled * (1.0 - pooled) / n).sqrt();
        assert!((a.ber[i] - b.ber[i]).abs() <= 4.0 * se.max(1.0 / n));
    }
    let again = simulate_ber(&real.channels, &real.beamformers, &pw, 50_000, 100, LinkOptions::default()).unwrap();
    assert_eq!(a.bit_errors, again.bit_errors);
}

#[test]
fn rows_are_one_based_and_consistent() {
    let config = three_user_config(10.0, &[1.0, 1.0]).unwrap();
    let real = Realization::draw(&config, 14, 0).unwrap();
    let pw = PowerAllocation::equal_split(&config).unwrap();
    let report = simulate_ber(&real.channels, &real.beamformers, &pw, 2048, 3, LinkOptions::default()).unwrap();
    let rows = report.rows("three-user", 14, 10.0, &config.streams);
    assert_eq!(rows.len(), 6);
    assert_eq!((rows[0].k, rows[0].l), (1, 1));
    assert_eq!((rows[5].k, rows[5].l), (3, 2));
    let total: f64 = rows.iter().map(|r| r.rate).sum();
    assert!((total - report.sum_rate).abs() < 1e-12);
}

proptest! {
    #[test]
    fn sum_rate_is_monotone_in_every_sinr(
        sinrs in prop::collection::vec(0.0f64..100.0, 1..8),
        which in 0usize..8,
        bump in 1e-6f64..50.0,
    ) {
        let i = which % sinrs.len();
        let mut raised = sinrs.clone();
        raised[i] += bump;
        prop_assert!(sum_rate(&raised).unwrap() > sum_rate(&sinrs).unwrap());
    }

    #[test]
    fn qpsk_demap_inverts_map(b0 in 0u8..2, b1 in 0u8..2, scale in 0.01f64..100.0) {
        prop_assert_eq!(qpsk_demap(qpsk_map((b0, b1)) * scale), (b0, b1));
    }
}
