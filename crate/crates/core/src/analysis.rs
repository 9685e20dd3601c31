//! Closed-form results for the pairwise error dynamics.
//!
//! State `x = [e, Δ̂ − 1/f̄]` evolves as `x(h+1) = F·x(h)` with
//! `F = [[1 − β − αBf̄, Bf̄], [−α, 1]]`.

use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("variance unbounded at alpha={alpha}: denominator {denominator} is not positive")]
    UnboundedVariance { alpha: f64, denominator: f64 },
    #[error("least-squares fit needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("least-squares fit is degenerate: all local readings are equal")]
    DegenerateSamples,
    #[error("sample lists differ in length: {remote} remote vs {local} local")]
    LengthMismatch { remote: usize, local: usize },
    #[error("invalid analysis parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorDynamics {
    pub beta: f64,
    pub alpha: f64,
    pub beacon_period: f64,
    pub true_freq: f64,
}

impl ErrorDynamics {
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let bf = self.beacon_period * self.true_freq;
        [[1.0 - self.beta - self.alpha * bf, bf], [-self.alpha, 1.0]]
    }

    /// Roots of `z² − (2 − β − αBf̄)z + (1 − β)`, larger modulus first.
    pub fn eigenvalues(&self) -> (Complex64, Complex64) {
        let b = 2.0 - self.beta - self.alpha * self.beacon_period * self.true_freq;
        let c = 1.0 - self.beta;
        let disc = Complex64::new(b * b - 4.0 * c, 0.0).sqrt();
        let z1 = (Complex64::new(b, 0.0) + disc) / 2.0;
        let z2 = (Complex64::new(b, 0.0) - disc) / 2.0;
        if z1.norm() >= z2.norm() {
            (z1, z2)
        } else {
            (z2, z1)
        }
    }

    pub fn spectral_radius(&self) -> f64 {
        self.eigenvalues().0.norm()
    }

    pub fn is_stable(&self) -> bool {
        self.spectral_radius() < 1.0
    }
}

/// Open interval of stabilizing `α` for a given `β`; `None` when
/// `β ∉ (0, 2)`.
pub fn stability_region(beta: f64, beacon_period: f64, true_freq: f64) -> Option<(f64, f64)> {
    if beta > 0.0 && beta < 2.0 {
        Some((0.0, 2.0 * (2.0 - beta) / (true_freq * beacon_period)))
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stability {
    Stable,
    Unstable,
}

pub fn classify(beta: f64, alpha: f64, beacon_period: f64, true_freq: f64) -> Stability {
    match stability_region(beta, beacon_period, true_freq) {
        Some((lo, hi)) if alpha > lo && alpha < hi => Stability::Stable,
        _ => Stability::Unstable,
    }
}

/// Gain minimizing the spectral radius, and that radius `√|1 − β|`.
pub fn optimal_alpha(beta: f64, beacon_period: f64, true_freq: f64) -> (f64, f64) {
    (
        (2.0 - beta) / (true_freq * beacon_period),
        (1.0 - beta).abs().sqrt(),
    )
}

/// Residual error of the proportional-only loop (`α = 0`).
pub fn proportional_only_steady_state(
    beta: f64,
    beacon_period: f64,
    true_freq: f64,
    nominal_freq: f64,
) -> f64 {
    beacon_period * (true_freq - nominal_freq) / (beta * nominal_freq)
}

/// Noise intensities: timestamp noise `σ_v²` (s²) and frequency jitter
/// `σ_w²` ((ticks/s)²), together with the nominal frequency that relates
/// them to the dimensionless `η_t`, `η_w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub sigma_v2: f64,
    pub sigma_w2: f64,
    pub nominal_freq: f64,
}

impl NoiseSpec {
    pub fn new(sigma_v2: f64, sigma_w2: f64, nominal_freq: f64) -> Result<Self, AnalysisError> {
        if !(sigma_v2 >= 0.0 && sigma_w2 >= 0.0) {
            return Err(AnalysisError::InvalidParameter(
                "noise variances must be non-negative".into(),
            ));
        }
        if !(nominal_freq > 0.0) {
            return Err(AnalysisError::InvalidParameter(
                "nominal frequency must be positive".into(),
            ));
        }
        Ok(NoiseSpec {
            sigma_v2,
            sigma_w2,
            nominal_freq,
        })
    }

    pub fn from_etas(eta_t: f64, eta_w: f64, nominal_freq: f64) -> Result<Self, AnalysisError> {
        Self::new(
            (eta_t / nominal_freq).powi(2),
            (eta_w * nominal_freq).powi(2),
            nominal_freq,
        )
    }

    pub fn eta_t(&self) -> f64 {
        self.sigma_v2.sqrt() * self.nominal_freq
    }

    pub fn eta_w(&self) -> f64 {
        self.sigma_w2.sqrt() / self.nominal_freq
    }
}

/// Asymptotic mean-square pairwise error for `β = 1`.
pub fn steady_state_variance(
    alpha: f64,
    beacon_period: f64,
    nominal_freq: f64,
    noise: &NoiseSpec,
) -> Result<f64, AnalysisError> {
    let (b, f) = (beacon_period, nominal_freq);
    let et2 = noise.eta_t().powi(2);
    let ew2 = noise.eta_w().powi(2);
    let denominator = 2.0 * b * f - alpha * b * b * f * f * (1.0 + ew2);
    if denominator <= 0.0 {
        return Err(AnalysisError::UnboundedVariance { alpha, denominator });
    }
    let integrator = 2.0 * alpha * b * b * (et2 + ew2 * f * f * b * b) * (1.0 + ew2) / denominator;
    Ok(integrator + et2 / (f * f) + 2.0 * ew2 * b * b)
}

/// Mean-square error `d` hops from the reference on a flooded line.
pub fn multihop_variance(hops: u32, base: f64) -> f64 {
    f64::from(hops) * base
}

/// Straight line `remote ≈ intercept + slope·(local − x_ref)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LineFit {
    /// Seconds per local tick.
    pub slope: f64,
    /// Fitted remote time at `x_ref`.
    pub intercept: f64,
    /// Centering point of the local readings.
    pub x_ref: f64,
}

impl LineFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.intercept + self.slope * (x - self.x_ref)
    }
}

/// Least-squares line through `(local_i, remote_i)`. Local readings are
/// centered before solving the normal equations so that large tick counts
/// do not destroy precision.
pub fn least_squares_pairwise(remote: &[f64], local: &[f64]) -> Result<LineFit, AnalysisError> {
    if remote.len() != local.len() {
        return Err(AnalysisError::LengthMismatch {
            remote: remote.len(),
            local: local.len(),
        });
    }
    let n = local.len();
    if n < 2 {
        return Err(AnalysisError::TooFewSamples(n));
    }
    let nf = n as f64;
    let x_ref = local.iter().sum::<f64>() / nf;
    let y_mean = remote.iter().sum::<f64>() / nf;
    let (sxx, sxy) = local
        .iter()
        .zip(remote)
        .fold((0.0, 0.0), |(sxx, sxy), (&x, &y)| {
            let dx = x - x_ref;
            (sxx + dx * dx, sxy + dx * (y - y_mean))
        });
    if sxx == 0.0 {
        return Err(AnalysisError::DegenerateSamples);
    }
    Ok(LineFit {
        slope: sxy / sxx,
        intercept: y_mean,
        x_ref,
    })
}

/// Corrections `(u', u'')` that put a clock reading `local` ticks onto the
/// fitted line: `u''` is the rate, `u'` the estimate at `local = 0`.
pub fn least_squares_corrections(fit: &LineFit) -> (f64, f64) {
    (fit.eval(0.0), fit.slope)
}

/// Rounds needed for a geometric decay with ratio `radius` to shrink an
/// error to 10%. `Some(1)` at radius 0 (settles in one round); `None` if the
/// dynamics do not decay.
pub fn iterations_to_decay(radius: f64) -> Option<u64> {
    if radius <= 0.0 {
        Some(1)
    } else if radius < 1.0 {
        Some(((0.1f64).ln() / radius.ln()).ceil().max(1.0) as u64)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub scaled_alpha: f64,
    pub spectral_radius: f64,
    pub iterations_90: Option<u64>,
    pub stability: Stability,
}

/// Spectral radius and settling rounds for each `α`.
pub fn alpha_sweep(
    beta: f64,
    beacon_period: f64,
    true_freq: f64,
    alphas: &[f64],
) -> Vec<SweepRow> {
    alphas
        .iter()
        .map(|&alpha| {
            let dynamics = ErrorDynamics {
                beta,
                alpha,
                beacon_period,
                true_freq,
            };
            let radius = dynamics.spectral_radius();
            SweepRow {
                alpha,
                scaled_alpha: alpha * beacon_period * true_freq,
                spectral_radius: radius,
                iterations_90: iterations_to_decay(radius),
                stability: classify(beta, alpha, beacon_period, true_freq),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const F: f64 = 1e6;
    const B: f64 = 30.0;

    fn dynamics(beta: f64, alpha: f64) -> ErrorDynamics {
        ErrorDynamics {
            beta,
            alpha,
            beacon_period: B,
            true_freq: F,
        }
    }

    #[test]
    fn matrix_entries() {
        let m = dynamics(0.5, 1e-8).matrix();
        assert_eq!(m, [[1.0 - 0.5 - 1e-8 * 3e7, 3e7], [-1e-8, 1.0]]);
    }

    #[test]
    fn deadbeat_double_root() {
        let (z1, z2) = dynamics(1.0, 1.0 / (F * B)).eigenvalues();
        assert!(z1.norm() < 1e-7 && z2.norm() < 1e-7);
    }

    #[test]
    fn proportional_only_roots() {
        let (z1, z2) = dynamics(1.0, 0.0).eigenvalues();
        assert_eq!(z1, Complex64::new(1.0, 0.0));
        assert_eq!(z2, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn half_deadbeat_gain() {
        let (z1, z2) = dynamics(1.0, 0.5 / (F * B)).eigenvalues();
        assert!((z1.re - 0.5).abs() < 1e-12 && z1.im == 0.0);
        assert!(z2.norm() < 1e-12);
    }

    #[test]
    fn stability_interval() {
        let (lo, hi) = stability_region(1.0, B, F).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - 6.6667e-8).abs() < 1e-12);
        let (_, narrow) = stability_region(2.0 - 1e-9, B, F).unwrap();
        assert!(narrow < 1e-15);
        assert!(stability_region(0.0, B, F).is_none());
        assert!(stability_region(2.0, B, F).is_none());
        assert_eq!(classify(1.0, 3.33e-7, B, F), Stability::Unstable);
        assert_eq!(classify(1.0, 3.33e-8, B, F), Stability::Stable);
    }

    #[test]
    fn optimal_gain_values() {
        let (a, r) = optimal_alpha(1.0, B, F);
        assert!((a - 3.33e-8).abs() < 0.005e-8);
        assert_eq!(r, 0.0);
        let (_, r) = optimal_alpha(0.5, B, F);
        assert!((r - 0.5f64.sqrt()).abs() < 1e-15);
        let (a, r) = optimal_alpha(2.0 - 1e-12, B, F);
        assert!(a < 1e-18 && (r - 1.0).abs() < 1e-6);
    }

    #[test]
    fn proportional_only_offsets() {
        assert_eq!(proportional_only_steady_state(1.0, B, F, F), 0.0);
        let fbar = F * (1.0 + 100e-6);
        assert!((proportional_only_steady_state(1.0, B, fbar, F) - 0.003).abs() < 1e-12);
        assert!((proportional_only_steady_state(0.5, B, fbar, F) - 0.006).abs() < 1e-12);
    }

    #[test]
    fn variance_floor_at_zero_gain() {
        let n = NoiseSpec::from_etas(1.0, 1e-7, F).unwrap();
        let v = steady_state_variance(0.0, B, F, &n).unwrap();
        let floor = 1.0 / (F * F) + 2.0 * 1e-14 * B * B;
        assert!((v - floor).abs() < 1e-12 * floor);
    }

    #[test]
    fn variance_increasing_on_caption_settings() {
        let n = NoiseSpec::new(5e-4, 1e-8, F).unwrap();
        let a_star = 1.0 / (F * B);
        let vals: Vec<f64> = (1..=5)
            .map(|k| steady_state_variance(a_star * k as f64 / 5.0, B, F, &n).unwrap())
            .collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]), "{vals:?}");
    }

    #[test]
    fn variance_unbounded_past_denominator() {
        let n = NoiseSpec::from_etas(1.0, 1e-7, F).unwrap();
        let err = steady_state_variance(3.0 / (F * B), B, F, &n).unwrap_err();
        assert!(matches!(err, AnalysisError::UnboundedVariance { .. }));
    }

    #[test]
    fn eta_round_trip() {
        let n = NoiseSpec::from_etas(1.3, 2e-7, F).unwrap();
        assert!((n.eta_t() - 1.3).abs() < 1e-12);
        assert!((n.eta_w() - 2e-7).abs() < 1e-18);
    }

    #[test]
    fn multihop_linear() {
        assert_eq!(multihop_variance(1, 2.5e-12), 2.5e-12);
        assert_eq!(multihop_variance(2, 2.5e-12), 5e-12);
        assert_eq!(multihop_variance(19, 1.0), 19.0);
    }

    #[test]
    fn two_sample_fit_recovers_relative_rate() {
        let fbar = F * (1.0 + 37e-6);
        // remote = reference seconds, local = ticks of the drifting clock
        let fit = least_squares_pairwise(&[0.0, B], &[0.0, B * fbar]).unwrap();
        let (u0, u1) = least_squares_corrections(&fit);
        assert!(u0.abs() < 1e-12);
        assert!((u1 - 1.0 / fbar).abs() < 1e-12 / fbar);
        // closed form: (1/f̂)·(s_i(1) − s_i(0))/(s_j(1) − s_j(0))
        let closed = (1.0 / F) * (B * F) / (B * fbar);
        assert!((u1 - closed).abs() < 1e-12 * closed);
    }

    #[test]
    fn identical_clocks_fit_identity() {
        let xs: Vec<f64> = (0..8).map(|k| k as f64 * B * F).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x / F).collect();
        let fit = least_squares_pairwise(&ys, &xs).unwrap();
        let (u0, u1) = least_squares_corrections(&fit);
        assert!(u0.abs() < 1e-9);
        assert!((u1 * F - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_fits_rejected() {
        assert_eq!(
            least_squares_pairwise(&[1.0], &[1.0]).unwrap_err(),
            AnalysisError::TooFewSamples(1)
        );
        assert_eq!(
            least_squares_pairwise(&[1.0, 2.0], &[5.0, 5.0]).unwrap_err(),
            AnalysisError::DegenerateSamples
        );
    }

    #[test]
    fn iteration_counts() {
        assert_eq!(iterations_to_decay(0.0), Some(1));
        assert_eq!(iterations_to_decay(0.5), Some(4));
        assert_eq!(iterations_to_decay(0.1), Some(1));
        assert_eq!(iterations_to_decay(1.0), None);
    }

    #[test]
    fn sweep_is_u_shaped() {
        let a_star = 1.0 / (F * B);
        let alphas: Vec<f64> = (1..=30).map(|k| a_star * k as f64 / 10.0).collect();
        let rows = alpha_sweep(1.0, B, F, &alphas);
        let radii: Vec<f64> = rows.iter().map(|r| r.spectral_radius).collect();
        let min_at = radii
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(min_at, 9);
        assert!(radii[..=min_at].windows(2).all(|w| w[1] <= w[0]));
        assert!(radii[min_at..].windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(rows[9].iterations_90, Some(1));
        assert_eq!(rows[29].stability, Stability::Unstable);
    }

    proptest! {
        #[test]
        fn roots_satisfy_characteristic_polynomial(beta in 0.01f64..1.99, k in 0.0f64..4.0) {
            let d = dynamics(beta, k / (F * B));
            let b = 2.0 - beta - k;
            let c = 1.0 - beta;
            let (z1, z2) = d.eigenvalues();
            for z in [z1, z2] {
                let p = z * z - z * b + c;
                prop_assert!(p.norm() < 1e-9);
            }
            // trace and determinant of F
            let m = d.matrix();
            prop_assert!(((z1 + z2).re - (m[0][0] + m[1][1])).abs() < 1e-9);
            prop_assert!(((z1 * z2).re - (m[0][0] * m[1][1] - m[0][1] * m[1][0])).abs() < 1e-6);
        }

        #[test]
        fn region_matches_radius(beta in 0.05f64..1.95, k in 0.001f64..6.0) {
            let alpha = k / (F * B);
            let stable = classify(beta, alpha, B, F) == Stability::Stable;
            let r = dynamics(beta, alpha).spectral_radius();
            let hi = 2.0 * (2.0 - beta);
            // skip a thin shell around the boundary
            if (k - hi).abs() > 1e-6 {
                prop_assert_eq!(stable, r < 1.0);
            }
        }

        #[test]
        fn variance_nondecreasing(eta_t in 0.0f64..10.0, eta_w in 0.0f64..1e-6, k1 in 0.0f64..1.9, k2 in 0.0f64..1.9) {
            let n = NoiseSpec::from_etas(eta_t, eta_w, F).unwrap();
            let (lo, hi) = if k1 <= k2 { (k1, k2) } else { (k2, k1) };
            let v1 = steady_state_variance(lo / (F * B), B, F, &n).unwrap();
            let v2 = steady_state_variance(hi / (F * B), B, F, &n).unwrap();
            prop_assert!(v2 >= v1 * (1.0 - 1e-12));
        }

        #[test]
        fn noiseless_fit_recovers_line(
            offset in -100.0f64..100.0, ppm in -200.0f64..200.0,
            start in 0.0f64..1e9, n in 2usize..12,
        ) {
            let rate = (1.0 + ppm * 1e-6) / F;
            let xs: Vec<f64> = (0..n).map(|k| start + k as f64 * B * F).collect();
            let ys: Vec<f64> = xs.iter().map(|x| offset + rate * x).collect();
            let fit = least_squares_pairwise(&ys, &xs).unwrap();
            prop_assert!((fit.slope - rate).abs() <= 1e-12 * rate);
            for &x in &xs {
                let y = offset + rate * x;
                prop_assert!((fit.eval(x) - y).abs() <= 1e-12 * y.abs().max(1.0) * 10.0);
            }
        }
    }
}
