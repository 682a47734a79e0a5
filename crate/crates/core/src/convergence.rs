//! Affine form of the interference function and contraction certificates.
//!
//! For frozen unit-norm filters the update `I(p) = Γ δ(p)` is affine,
//! `I(p) = T p + N`, with `T[i][j] = Γ_i G_i^j / G_i^i` off the diagonal and
//! `N_i = Γ_i / G_i^i`. A weighted max-norm `‖T‖_∞^v < 1` certifies a unique
//! fixed point reached at linear rate `c = ‖T‖_∞^v`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BeamformerSet, ChannelSet, StreamLayout};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearInterferenceMap {
    pub t: DMatrix<f64>,
    pub n: DVector<f64>,
    /// `gains[(i, j)] = |v_i† H u_j|²` in flat substream order.
    pub gains: DMatrix<f64>,
}

impl LinearInterferenceMap {
    /// Builds `T` and `N` from a cross-gain table and flat targets.
    pub fn from_gains(gains: DMatrix<f64>, targets: &[f64]) -> Result<Self> {
        let dim = gains.nrows();
        if !gains.is_square() || targets.len() != dim {
            return Err(Error::Config(format!(
                "{}x{} gain table with {} targets",
                gains.nrows(),
                gains.ncols(),
                targets.len()
            )));
        }
        let mut t = DMatrix::zeros(dim, dim);
        let mut n = DVector::zeros(dim);
        for i in 0..dim {
            let direct = gains[(i, i)];
            if !(direct > 0.0) {
                return Err(Error::DegenerateStream { user: 0, stream: i });
            }
            n[i] = targets[i] / direct;
            for j in 0..dim {
                if j != i {
                    t[(i, j)] = targets[i] * gains[(i, j)] / direct;
                }
            }
        }
        Ok(LinearInterferenceMap { t, n, gains })
    }

    pub fn dim(&self) -> usize {
        self.n.len()
    }

    /// `T p + N`.
    pub fn apply(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.t * p + &self.n
    }
}

/// Builds the affine map for beamformers `bf` at flat targets.
pub fn build_map(channels: &ChannelSet, bf: &BeamformerSet, targets: &[f64]) -> Result<LinearInterferenceMap> {
    bf.check(channels)?;
    let layout = StreamLayout::new(&bf.streams());
    let dim = layout.total();
    let mut gains = DMatrix::zeros(dim, dim);
    for (i, (k, l)) in layout.iter().enumerate() {
        let v = bf.receiver(k).column(l);
        for (j, (tx, s)) in layout.iter().enumerate() {
            let h = channels.get(k, tx) * bf.precoder(tx).column(s);
            gains[(i, j)] = v.dotc(&h).norm_sqr();
        }
    }
    LinearInterferenceMap::from_gains(gains, targets).map_err(|e| match e {
        Error::DegenerateStream { stream, .. } => {
            let (user, stream) = layout.unflat(stream);
            Error::DegenerateStream { user, stream }
        }
        other => other,
    })
}

/// Induced weighted max-norm `max_i (Σ_j T_ij v_j) / v_i`.
pub fn weighted_max_norm(t: &DMatrix<f64>, v: &DVector<f64>) -> Result<f64> {
    if !t.is_square() || t.nrows() != v.len() {
        return Err(Error::Config(format!("{}x{} matrix with weight of length {}", t.nrows(), t.ncols(), v.len())));
    }
    if let Some(bad) = v.iter().find(|x| !(**x > 0.0 && x.is_finite())) {
        return Err(Error::Domain(format!("weight entry {bad} must be positive")));
    }
    let tv = t * v;
    Ok(tv.iter().zip(v.iter()).map(|(a, b)| a / b).fold(0.0, f64::max))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralRadius {
    pub rho: f64,
    /// Positive approximate Perron vector, max-normalized.
    pub vector: DVector<f64>,
    pub iterations: usize,
    /// False when the iteration cap was reached; `rho` is then the best estimate.
    pub converged: bool,
}

pub const SPECTRAL_TOL: f64 = 1e-10;
pub const SPECTRAL_MAX_ITERS: usize = 10_000;

/// Perron root of a nonnegative square matrix by power iteration.
///
/// Iterates on `T + I`, whose dominant eigenvalue `ρ + 1` is strictly largest
/// in modulus even when `T` is periodic, from the all-ones vector. Every
/// iterate stays positive, so the Collatz–Wielandt ratios `(T x)_i / x_i`
/// bracket `ρ`; the loop stops once the bracket or the estimate settles.
pub fn spectral_radius(t: &DMatrix<f64>) -> Result<SpectralRadius> {
    if !t.is_square() {
        return Err(Error::Config(format!("{}x{} matrix is not square", t.nrows(), t.ncols())));
    }
    if t.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::Domain("matrix must be nonnegative".into()));
    }
    let dim = t.nrows();
    if dim == 0 {
        return Ok(SpectralRadius { rho: 0.0, vector: DVector::zeros(0), iterations: 0, converged: true });
    }
    let mut x = DVector::from_element(dim, 1.0);
    let mut estimate = f64::INFINITY;
    for iteration in 1..=SPECTRAL_MAX_ITERS {
        let tx = t * &x;
        let (lo, hi) = tx
            .iter()
            .zip(x.iter())
            .map(|(a, b)| a / b)
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r), hi.max(r)));
        let next = &tx + &x;
        let scale = next.max();
        let new_estimate = scale - 1.0;
        x = next / scale;
        let tol = SPECTRAL_TOL * hi.max(1.0);
        if hi - lo <= tol {
            return Ok(SpectralRadius { rho: 0.5 * (hi + lo), vector: x, iterations: iteration, converged: true });
        }
        if (new_estimate - estimate).abs() <= tol * 1e-2 {
            return Ok(SpectralRadius { rho: new_estimate.clamp(lo, hi), vector: x, iterations: iteration, converged: true });
        }
        estimate = new_estimate;
    }
    Ok(SpectralRadius { rho: estimate, vector: x, iterations: SPECTRAL_MAX_ITERS, converged: false })
}

/// Solves `(I − T) p = N` directly.
pub fn fixed_point_direct(map: &LinearInterferenceMap) -> Result<DVector<f64>> {
    let radius = spectral_radius(&map.t)?;
    if radius.rho >= 1.0 {
        return Err(Error::Infeasible { rho: radius.rho });
    }
    let dim = map.dim();
    let a = DMatrix::identity(dim, dim) - &map.t;
    let p = a
        .lu()
        .solve(&map.n)
        .ok_or_else(|| Error::LinearSolve("I - T is singular".into()))?;
    if p.iter().any(|x| !(*x > 0.0)) {
        return Err(Error::LinearSolve("fixed point is not strictly positive".into()));
    }
    Ok(p)
}

/// Contraction certificate of an affine interference map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionCertificate {
    /// `‖T‖_∞^v` for the weight below.
    pub c: f64,
    pub weights: Vec<f64>,
    /// `‖T‖_∞^v` with the Perron vector as weight.
    pub c_perron: f64,
    pub rho: f64,
    pub rho_converged: bool,
    pub contractive: bool,
    pub fixed_point: Option<Vec<f64>>,
}

impl ContractionCertificate {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("certificate serializes")
    }
}

/// Certifies `map` with weight `v` (all-ones when `None`).
pub fn certify(map: &LinearInterferenceMap, v: Option<DVector<f64>>) -> Result<ContractionCertificate> {
    let v = v.unwrap_or_else(|| DVector::from_element(map.dim(), 1.0));
    let c = weighted_max_norm(&map.t, &v)?;
    let radius = spectral_radius(&map.t)?;
    let c_perron = if radius.vector.iter().all(|x| *x > 0.0) {
        weighted_max_norm(&map.t, &radius.vector)?
    } else {
        f64::INFINITY
    };
    let contractive = c < 1.0;
    let fixed_point = if contractive || radius.rho < 1.0 {
        Some(fixed_point_direct(map)?.iter().copied().collect())
    } else {
        None
    };
    Ok(ContractionCertificate {
        c,
        weights: v.iter().copied().collect(),
        c_perron,
        rho: radius.rho,
        rho_converged: radius.converged,
        contractive,
        fixed_point,
    })
}

/// Weighted max-norm of a vector, `max_i |x_i| / v_i`.
pub fn weighted_vector_norm(x: &[f64], v: &[f64]) -> f64 {
    x.iter().zip(v).map(|(a, b)| a.abs() / b).fold(0.0, f64::max)
}

/// Checks `‖pⁿ − p*‖_∞^v ≤ cⁿ ‖p⁰ − p*‖_∞^v (1 + 1e-6)` along an uncapped trace.
///
/// Returns false for non-contractive certificates or ones without a fixed point.
pub fn convergence_rate_check(trace: &[Vec<f64>], cert: &ContractionCertificate) -> bool {
    let Some(fixed) = cert.fixed_point.as_ref() else {
        return false;
    };
    if !cert.contractive || trace.is_empty() {
        return false;
    }
    let err = |p: &[f64]| {
        let diff: Vec<f64> = p.iter().zip(fixed).map(|(a, b)| a - b).collect();
        weighted_vector_norm(&diff, &cert.weights)
    };
    let e0 = err(&trace[0]);
    trace.iter().enumerate().all(|(n, p)| {
        let bound = cert.c.powi(n as i32) * e0 * (1.0 + 1e-6);
        // Absolute floor for rounding once the error is at machine precision.
        err(p) <= bound + 1e-12 * fixed.iter().cloned().fold(0.0, f64::max)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_map() -> LinearInterferenceMap {
        let gains = DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, 2.0]);
        LinearInterferenceMap::from_gains(gains, &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn hand_instance_map() {
        let map = hand_map();
        assert_eq!(map.t, DMatrix::from_row_slice(2, 2, &[0.0, 0.1, 0.05, 0.0]));
        assert_eq!(map.n, DVector::from_vec(vec![1.0, 0.5]));
    }

    #[test]
    fn orthogonal_system_has_zero_t() {
        let gains = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0, 0.5]));
        let map = LinearInterferenceMap::from_gains(gains, &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(map.t, DMatrix::zeros(3, 3));
        assert_eq!(map.n, DVector::from_vec(vec![0.5, 0.5, 6.0]));
        let zero = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(LinearInterferenceMap::from_gains(zero, &[1.0, 1.0]), Err(Error::DegenerateStream { .. })));
    }

    #[test]
    fn norms_and_radius() {
        let map = hand_map();
        let ones = DVector::from_element(2, 1.0);
        assert!((weighted_max_norm(&map.t, &ones).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(weighted_max_norm(&DMatrix::zeros(3, 3), &DVector::from_vec(vec![1.0, 2.0, 3.0])).unwrap(), 0.0);
        assert!(matches!(
            weighted_max_norm(&map.t, &DVector::from_vec(vec![1.0, 0.0])),
            Err(Error::Domain(_))
        ));

        let r = spectral_radius(&map.t).unwrap();
        assert!(r.converged);
        assert!((r.rho - 0.005f64.sqrt()).abs() < 1e-9, "rho = {}", r.rho);
        let zero = spectral_radius(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(zero.rho, 0.0);
        assert!(spectral_radius(&DMatrix::from_element(2, 2, -1.0)).is_err());
    }

    #[test]
    fn hand_fixed_point() {
        // (I - T)^{-1} N with det = 1 - 0.005.
        let det = 0.995;
        let expected = [(1.0 + 0.1 * 0.5) / det, (0.5 + 0.05 * 1.0) / det];
        let p = fixed_point_direct(&hand_map()).unwrap();
        assert!((p[0] - expected[0]).abs() < 1e-14 && (p[1] - expected[1]).abs() < 1e-14);
        assert!((p[0] - 1.055_276_381_909_547_7).abs() < 1e-12);
        assert!((p[1] - 0.552_763_819_095_477_4).abs() < 1e-12);

        let gains = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]));
        let map = LinearInterferenceMap::from_gains(gains, &[1.0, 1.0]).unwrap();
        assert_eq!(fixed_point_direct(&map).unwrap(), DVector::from_vec(vec![1.0, 0.5]));

        let gains = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let map = LinearInterferenceMap::from_gains(gains, &[2.0, 2.0]).unwrap();
        assert!(matches!(fixed_point_direct(&map), Err(Error::Infeasible { .. })));
    }

    #[test]
    fn rate_check_examples() {
        let map = hand_map();
        let cert = certify(&map, None).unwrap();
        assert!(cert.contractive);
        assert!((cert.c - 0.1).abs() < 1e-15);
        let fixed = cert.fixed_point.clone().unwrap();
        assert!(convergence_rate_check(&vec![fixed.clone(); 5], &cert));

        let mut p = DVector::zeros(2);
        let mut trace = vec![p.iter().copied().collect::<Vec<_>>()];
        let mut prev_err = f64::INFINITY;
        for _ in 0..20 {
            p = map.apply(&p);
            let err = weighted_vector_norm((&p - DVector::from_vec(fixed.clone())).as_slice(), &[1.0, 1.0]);
            assert!(err <= 0.1 * prev_err.min(1e3) + 1e-15);
            prev_err = err;
            trace.push(p.iter().copied().collect());
        }
        assert!(convergence_rate_check(&trace, &cert));
        // A trace that moves away from the fixed point fails.
        let bad = vec![vec![0.0, 0.0], vec![5.0, 5.0]];
        assert!(!convergence_rate_check(&bad, &cert));
    }

    #[test]
    fn scaled_targets_break_contraction() {
        let cert = certify(&LinearInterferenceMap::from_gains(hand_map().gains, &[100.0, 100.0]).unwrap(), None).unwrap();
        assert!(!cert.contractive);
        assert!((cert.c - 10.0).abs() < 1e-12);
        assert!(cert.fixed_point.is_none());
    }
}
