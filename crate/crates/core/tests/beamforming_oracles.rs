use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use sbal_core::beamforming::*;
use sbal_core::model::*;
use sbal_core::scenarios::{three_user_config, Realization};

fn random_setup(seed: u64) -> (NetworkConfig, ChannelSet, BeamformerSet, PowerAllocation) {
    let config = three_user_config(10.0, &[1.0, 1.0]).unwrap();
    let ch = generate_channels(&config, seed).unwrap();
    let bf = BeamformerSet::random(&config, seed + 1000).unwrap();
    let pw = PowerAllocation::from_flat(&config, vec![1.5, 3.0, 4.5, 0.5, 2.0, 7.0]).unwrap();
    (config, ch, bf, pw)
}

/// `v† H u` by explicit scalar loops.
fn bilinear(v: &[Complex64], h: &DMatrix<Complex64>, u: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for r in 0..h.nrows() {
        for c in 0..h.ncols() {
            acc += v[r].conj() * h[(r, c)] * u[c];
        }
    }
    acc
}

fn column(m: &CMatrix, c: usize) -> Vec<Complex64> {
    m.column(c).iter().copied().collect()
}

#[test]
fn interference_plus_signal_equals_total_covariance() {
    for seed in 0..5 {
        let (_, ch, bf, pw) = random_setup(seed);
        for (k, l) in pw.layout().clone().iter() {
            let cov = covariances(&ch, &bf, &pw, k, l).unwrap();
            // Direct summation over every transmitted substream.
            let mut total = CMatrix::zeros(4, 4);
            for j in 0..3 {
                for s in 0..2 {
                    let h = ch.get(k, j) * bf.precoder(j).column(s);
                    for r in 0..4 {
                        for c in 0..4 {
                            total[(r, c)] += h[r] * h[c].conj() * pw.get(j, s);
                        }
                    }
                }
            }
            let diff = &cov.interference + &cov.signal - &total;
            assert!(diff.iter().all(|x| x.norm() < 1e-10));
            let scaled = &cov.unit_signal * Complex64::from(pw.get(k, l)) - &cov.signal;
            assert!(scaled.iter().all(|x| x.norm() < 1e-10));
            for m in [&cov.signal, &cov.unit_signal, &cov.interference, &cov.interference_plus_noise] {
                assert!((m - m.adjoint()).iter().all(|x| x.norm() < 1e-12));
            }
        }
    }
}

#[test]
fn sinr_matches_term_by_term_accumulation() {
    for seed in 0..10 {
        let (_, ch, bf, pw) = random_setup(seed);
        for (k, l) in pw.layout().clone().iter() {
            let v = column(bf.receiver(k), l);
            let own = bilinear(&v, ch.get(k, k), &column(bf.precoder(k), l)).norm_sqr() * pw.get(k, l);
            let mut impairment: f64 = v.iter().map(|x| x.norm_sqr()).sum();
            for j in 0..3 {
                for s in 0..2 {
                    if (j, s) != (k, l) {
                        impairment += bilinear(&v, ch.get(k, j), &column(bf.precoder(j), s)).norm_sqr() * pw.get(j, s);
                    }
                }
            }
            let expected = own / impairment;
            let got = sinr(&ch, &bf, &pw, k, l).unwrap();
            assert!((got - expected).abs() <= 1e-10 * expected, "{got} vs {expected}");
        }
    }
}

#[test]
fn single_user_design_finds_dominant_singular_pair() {
    let mut config = NetworkConfig::symmetric(1, 2, 2, 1, 3.0).unwrap();
    config.bf_iters = 16;
    let c = |re, im| Complex64::new(re, im);
    let h = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.5), c(0.3, -0.4), c(-0.6, 0.2), c(0.9, 0.1)]);
    let ch = ChannelSet::from_blocks(&config, vec![h.clone()]).unwrap();
    let sigma1 = h.clone().svd(false, false).singular_values[0];
    for seed in 0..5 {
        let bf = max_sinr_alternate(&ch, &config, seed).unwrap();
        let pw = PowerAllocation::equal_split(&config).unwrap();
        let got = sinr(&ch, &bf, &pw, 0, 0).unwrap();
        let expected = 3.0 * sigma1 * sigma1;
        assert!((got - expected).abs() <= 1e-6 * expected, "{got} vs {expected}");
    }
}

#[test]
fn half_steps_never_lower_any_sinr() {
    for seed in 0..20 {
        let (_, ch, mut bf, pw) = random_setup(seed);
        let reciprocal = ch.reciprocal();
        for _ in 0..4 {
            let before = all_sinrs(&ch, &bf, &pw).unwrap();
            bf = update_receivers(&ch, &bf, &pw).unwrap();
            let after = all_sinrs(&ch, &bf, &pw).unwrap();
            for (a, b) in after.iter().zip(&before) {
                assert!(*a >= b * (1.0 - 1e-12));
            }
            let before = all_sinrs(&reciprocal, &bf.swapped(), &pw).unwrap();
            bf = update_precoders(&ch, &bf, &pw).unwrap();
            let after = all_sinrs(&reciprocal, &bf.swapped(), &pw).unwrap();
            for (a, b) in after.iter().zip(&before) {
                assert!(*a >= b * (1.0 - 1e-12));
            }
        }
        for k in 0..3 {
            for m in [bf.precoder(k), bf.receiver(k)] {
                for col in m.column_iter() {
                    assert!((col.norm() - 1.0).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn design_is_deterministic() {
    let config = three_user_config(10.0, &[1.0, 1.0]).unwrap();
    let ch = generate_channels(&config, 3).unwrap();
    assert_eq!(max_sinr_alternate(&ch, &config, 9).unwrap(), max_sinr_alternate(&ch, &config, 9).unwrap());
}

#[test]
fn traced_design_records_every_alternation() {
    let config = three_user_config(10.0, &[1.0, 1.0]).unwrap();
    let ch = generate_channels(&config, 3).unwrap();
    let out = max_sinr_alternate_traced(&ch, &config, 9).unwrap();
    assert_eq!(out.sinr_trace.len(), 16);
    assert_eq!(out.beamformers, max_sinr_alternate(&ch, &config, 9).unwrap());
    // Sum-SINR of the final design is far above the random start.
    let pw = PowerAllocation::equal_split(&config).unwrap();
    let start: f64 = all_sinrs(&ch, &BeamformerSet::random(&config, 9).unwrap(), &pw).unwrap().iter().sum();
    let end: f64 = out.sinr_trace.last().unwrap().iter().sum();
    assert!(end > 3.0 * start);
}

#[test]
fn design_sinrs_match_reported_magnitudes() {
    // Pre-balancing SINRs at 10 dB are of order 5-25, weak stream first.
    let config = three_user_config(10.0, &[1.0, 1.0]).unwrap();
    let pw = PowerAllocation::equal_split(&config).unwrap();
    let (mut weak, mut strong) = (0.0, 0.0);
    let n = 200;
    for r in 0..n {
        let real = Realization::draw(&config, 77, r).unwrap();
        let s = all_sinrs(&real.channels, &real.beamformers, &pw).unwrap();
        for k in 0..3 {
            assert!(s[2 * k] <= s[2 * k + 1]);
            weak += s[2 * k];
            strong += s[2 * k + 1];
        }
    }
    let (weak, strong) = (weak / (3 * n) as f64, strong / (3 * n) as f64);
    assert!((5.0..=25.0).contains(&weak), "mean weak-stream SINR {weak}");
    assert!((5.0..=25.0).contains(&strong), "mean strong-stream SINR {strong}");
    assert!(strong / weak > 1.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sinr_is_invariant_to_receiver_scaling(seed in 0u64..1000, re in -3.0f64..3.0, im in -3.0f64..3.0) {
        prop_assume!(re.abs() + im.abs() > 1e-3);
        let (_, ch, bf, pw) = random_setup(seed);
        let scale = Complex64::new(re, im);
        // Scale each receive filter, then renormalize through a raw quotient.
        for (k, l) in pw.layout().clone().iter() {
            let cov = covariances(&ch, &bf, &pw, k, l).unwrap();
            let v: CVector = bf.receiver(k).column(l).into_owned();
            let w = &v * scale;
            let q = |x: &CVector| x.dotc(&(&cov.signal * x)).re / x.dotc(&(&cov.interference_plus_noise * x)).re;
            let base = sinr(&ch, &bf, &pw, k, l).unwrap();
            prop_assert!((q(&w) - base).abs() <= 1e-10 * base.max(1e-12));
        }
    }
}
