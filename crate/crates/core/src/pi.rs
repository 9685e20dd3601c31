//! Proportional-integral correction law and the adaptive integral gain.
//!
//! Errors follow the receiver's convention `e = t̂_remote − t̂_local`, so a
//! positive error means the local clock is behind and both corrections are
//! added: `t̂ += β·e`, `Δ̂ += α·e`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PiError {
    #[error("invalid controller parameter: {0}")]
    InvalidParameter(String),
}

/// Quantities the default gains are derived from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiParams {
    /// Beacon period `B`, seconds.
    pub beacon_period: f64,
    /// Nominal frequency `f̂`, ticks/second.
    pub nominal_freq: f64,
    /// Worst-case frequency offset `Δf_max`, ticks/second.
    pub drift_bound: f64,
}

impl PiParams {
    pub fn new(beacon_period: f64, nominal_freq: f64, drift_bound: f64) -> Result<Self, PiError> {
        let p = PiParams {
            beacon_period,
            nominal_freq,
            drift_bound,
        };
        p.validate()?;
        Ok(p)
    }

    /// Drift bound given in parts per million of the nominal frequency.
    pub fn from_ppm(beacon_period: f64, nominal_freq: f64, ppm: f64) -> Result<Self, PiError> {
        Self::new(beacon_period, nominal_freq, ppm * 1e-6 * nominal_freq)
    }

    pub fn validate(&self) -> Result<(), PiError> {
        if !(self.beacon_period > 0.0 && self.beacon_period.is_finite()) {
            return Err(PiError::InvalidParameter(format!(
                "beacon period must be positive, got {}",
                self.beacon_period
            )));
        }
        if !(self.nominal_freq > 0.0 && self.nominal_freq.is_finite()) {
            return Err(PiError::InvalidParameter(format!(
                "nominal frequency must be positive, got {}",
                self.nominal_freq
            )));
        }
        if !(self.drift_bound >= 0.0 && self.drift_bound < self.nominal_freq) {
            return Err(PiError::InvalidParameter(format!(
                "drift bound must lie in [0, f̂), got {}",
                self.drift_bound
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiDesign {
    pub beta: f64,
    pub alpha_max: f64,
    pub e_max: f64,
}

/// `β = 1`, `α_max = 1/(f̂·B)` (deadbeat), `e_max = 2·(Δf_max/f̂)·B`.
pub fn design_defaults(params: &PiParams) -> PiDesign {
    let PiParams {
        beacon_period: b,
        nominal_freq: f,
        drift_bound: df,
    } = *params;
    PiDesign {
        beta: 1.0,
        alpha_max: 1.0 / (f * b),
        e_max: 2.0 * (df / f) * b,
    }
}

/// How `α` evolves from one correction to the next.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GainSchedule {
    /// The adaptive rule with its `e_max` gate.
    #[default]
    Adaptive,
    /// Constant `α`, integrator never gated. Used to study the linear dynamics.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGainState {
    beta: f64,
    alpha: f64,
    alpha_max: f64,
    e_max: f64,
    prev_error: Option<f64>,
    integrator_active: bool,
    schedule: GainSchedule,
}

impl PiGainState {
    /// Adaptive gains at cold start: `α = 0`, no previous error.
    pub fn adaptive(beta: f64, alpha_max: f64, e_max: f64) -> Result<Self, PiError> {
        check_beta(beta)?;
        if !(alpha_max >= 0.0 && alpha_max.is_finite()) {
            return Err(PiError::InvalidParameter(format!(
                "alpha_max must be non-negative, got {alpha_max}"
            )));
        }
        if !(e_max >= 0.0) {
            return Err(PiError::InvalidParameter(format!(
                "e_max must be non-negative, got {e_max}"
            )));
        }
        Ok(PiGainState {
            beta,
            alpha: 0.0,
            alpha_max,
            e_max,
            prev_error: None,
            integrator_active: false,
            schedule: GainSchedule::Adaptive,
        })
    }

    pub fn from_design(design: &PiDesign) -> Result<Self, PiError> {
        Self::adaptive(design.beta, design.alpha_max, design.e_max)
    }

    /// Constant gains with the integrator always on.
    pub fn fixed(beta: f64, alpha: f64) -> Result<Self, PiError> {
        check_beta(beta)?;
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(PiError::InvalidParameter(format!(
                "alpha must be non-negative, got {alpha}"
            )));
        }
        Ok(PiGainState {
            beta,
            alpha,
            alpha_max: alpha,
            e_max: f64::INFINITY,
            prev_error: None,
            integrator_active: true,
            schedule: GainSchedule::Fixed,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn alpha_max(&self) -> f64 {
        self.alpha_max
    }
    pub fn e_max(&self) -> f64 {
        self.e_max
    }
    pub fn prev_error(&self) -> Option<f64> {
        self.prev_error
    }
    pub fn integrator_active(&self) -> bool {
        self.integrator_active
    }
    pub fn schedule(&self) -> GainSchedule {
        self.schedule
    }

    /// Back to the cold-start state (`α = 0`, no history).
    pub fn reset(&mut self) {
        if self.schedule == GainSchedule::Adaptive {
            self.alpha = 0.0;
            self.integrator_active = false;
        }
        self.prev_error = None;
    }

    /// Same state with a different current `α`; intended for tests and
    /// hand-built scenarios.
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha.clamp(0.0, self.alpha_max);
        self
    }

    pub fn with_prev_error(mut self, prev: Option<f64>) -> Self {
        self.prev_error = prev;
        self
    }
}

fn check_beta(beta: f64) -> Result<(), PiError> {
    if beta > 0.0 && beta <= 1.0 {
        Ok(())
    } else {
        Err(PiError::InvalidParameter(format!(
            "beta must lie in (0, 1], got {beta}"
        )))
    }
}

/// Next integral gain under the adaptive schedule.
///
/// `e_prev = None` (no history yet) counts as out of band.
pub fn adapt_alpha(e_now: f64, e_prev: Option<f64>, gains: &PiGainState) -> f64 {
    if gains.schedule == GainSchedule::Fixed {
        return gains.alpha;
    }
    if e_now.abs() > gains.e_max {
        return 0.0;
    }
    let prev = match e_prev {
        Some(p) if p.abs() <= gains.e_max => p,
        _ => return gains.alpha_max,
    };
    let alpha_prev = gains.alpha;
    let lambda = if prev == 0.0 || e_now == prev {
        1.0
    } else {
        let ratio = (prev / (e_now - prev)).abs();
        if alpha_prev > 0.0 {
            ratio.min(gains.alpha_max / alpha_prev)
        } else {
            ratio
        }
    };
    (lambda * alpha_prev).clamp(0.0, gains.alpha_max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiOutput {
    pub u_offset: f64,
    pub u_rate: f64,
    pub gains: PiGainState,
}

/// Corrections for one measured error. The integral term uses the gain
/// produced by this very sample, so the first in-band error is corrected
/// with `α_max`.
pub fn pi_update(error: f64, gains: &PiGainState) -> PiOutput {
    let alpha = adapt_alpha(error, gains.prev_error, gains);
    let in_band = error.abs() <= gains.e_max;
    let mut next = *gains;
    next.alpha = alpha;
    next.prev_error = Some(error);
    next.integrator_active = in_band;
    PiOutput {
        u_offset: gains.beta * error,
        u_rate: if in_band { alpha * error } else { 0.0 },
        gains: next,
    }
}

/// Raw error plus the expected in-flight time `γ̄`, expressed in the local
/// logical timescale (`γ̄·f̂·Δ̂`).
pub fn delay_compensated_error(
    t_remote: f64,
    t_local_at_rx: f64,
    mean_delay: f64,
    rate: f64,
    nominal_freq: f64,
) -> f64 {
    t_remote - t_local_at_rx + mean_delay * nominal_freq * rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table1() -> PiGainState {
        let p = PiParams::from_ppm(30.0, 1e6, 100.0).unwrap();
        PiGainState::from_design(&design_defaults(&p)).unwrap()
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(f64::MIN_POSITIVE)
    }

    #[test]
    fn defaults_for_table_parameters() {
        let d = design_defaults(&PiParams::from_ppm(30.0, 1e6, 100.0).unwrap());
        assert_eq!(d.beta, 1.0);
        assert!(close(d.e_max, 0.006, 1e-12));
        // published to three significant digits
        assert!((d.alpha_max - 3.33e-8).abs() < 0.005e-8);
    }

    #[test]
    fn defaults_unit_normalization() {
        let d = design_defaults(&PiParams::new(1.0, 1.0, 0.0).unwrap());
        assert_eq!((d.beta, d.alpha_max, d.e_max), (1.0, 1.0, 0.0));
    }

    #[test]
    fn defaults_sixty_second_period() {
        let d = design_defaults(&PiParams::from_ppm(60.0, 1e6, 50.0).unwrap());
        // 1/(1e6*60) and 2*50e-6*60 evaluated by hand
        assert!(close(d.alpha_max, 1.0 / 6e7, 1e-12));
        assert!((d.alpha_max - 1.667e-8).abs() < 0.0005e-8);
        assert!(close(d.e_max, 0.006, 1e-12));
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(PiParams::new(0.0, 1e6, 1.0).is_err());
        assert!(PiParams::new(30.0, -1.0, 1.0).is_err());
        assert!(PiParams::new(30.0, 1e6, 1e6).is_err());
        assert!(PiGainState::adaptive(0.0, 1e-8, 0.006).is_err());
        assert!(PiGainState::adaptive(1.5, 1e-8, 0.006).is_err());
    }

    #[test]
    fn in_band_update() {
        let g = table1().with_alpha(3.33e-8).with_prev_error(Some(-0.004));
        let out = pi_update(-0.004, &g);
        assert_eq!(out.u_offset, -0.004);
        assert!(close(out.u_rate, -1.332e-10, 1e-9));
    }

    #[test]
    fn zero_error_keeps_gain() {
        let g = table1().with_alpha(1e-8).with_prev_error(Some(3e-6));
        let out = pi_update(0.0, &g);
        assert_eq!((out.u_offset, out.u_rate), (0.0, 0.0));
        assert_eq!(out.gains.alpha(), 1e-8);
    }

    #[test]
    fn out_of_band_error_disables_integrator() {
        let g = table1().with_alpha(2e-8).with_prev_error(Some(1e-6));
        let out = pi_update(0.01, &g);
        assert_eq!(out.u_offset, 0.01);
        assert_eq!(out.u_rate, 0.0);
        assert_eq!(out.gains.alpha(), 0.0);
        assert!(!out.gains.integrator_active());
    }

    #[test]
    fn reentry_sets_alpha_max() {
        let g = table1();
        assert_eq!(adapt_alpha(0.002, Some(0.01), &g), g.alpha_max());
        assert_eq!(adapt_alpha(0.002, None, &g), g.alpha_max());
    }

    #[test]
    fn constant_drift_saturates() {
        let g = table1();
        let g = g.with_alpha(g.alpha_max());
        // λ = min(10, 1)
        assert_eq!(adapt_alpha(9e-6, Some(10e-6), &g), g.alpha_max());
    }

    #[test]
    fn alternating_sign_halves_gain() {
        let g = table1();
        let g = g.with_alpha(g.alpha_max());
        // λ = |2 / (-2 - 2)| = 0.5
        let a = adapt_alpha(-2e-6, Some(2e-6), &g);
        assert!(close(a, 0.5 * g.alpha_max(), 1e-12));
    }

    #[test]
    fn equal_errors_guard() {
        let g = table1().with_alpha(1e-8);
        assert_eq!(adapt_alpha(4e-6, Some(4e-6), &g), 1e-8);
        assert_eq!(adapt_alpha(4e-6, Some(0.0), &g), 1e-8);
    }

    #[test]
    fn cold_start_trajectory() {
        let mut g = table1();
        for e in [0.05, 0.03, 0.01] {
            g = pi_update(e, &g).gains;
            assert_eq!(g.alpha(), 0.0);
        }
        g = pi_update(0.001, &g).gains;
        assert_eq!(g.alpha(), g.alpha_max());
    }

    #[test]
    fn fixed_schedule_ignores_band() {
        let g = PiGainState::fixed(0.5, 1e-8).unwrap();
        let out = pi_update(10.0, &g);
        assert_eq!(out.u_offset, 5.0);
        assert_eq!(out.u_rate, 1e-7);
        assert_eq!(out.gains.alpha(), 1e-8);
    }

    #[test]
    fn delay_compensation() {
        assert_eq!(delay_compensated_error(10.0, 9.5, 0.0, 1e-6, 1e6), 0.5);
        let e = delay_compensated_error(10.0, 10.0005, 500e-6, 1e-6, 1e6);
        assert!(e.abs() < 1e-12);
        let term = delay_compensated_error(0.0, 0.0, 100e-6, 1.5e-6, 1e6);
        assert!(close(term, 150e-6, 1e-12));
    }

    proptest! {
        #[test]
        fn offset_correction_contracts(beta in 0.01f64..=1.0, e in -1.0f64..1.0) {
            let g = PiGainState::adaptive(beta, 3.33e-8, 0.006).unwrap();
            let out = pi_update(e, &g);
            // remaining difference after the offset step
            prop_assert!((e - out.u_offset).abs() <= e.abs());
        }

        #[test]
        fn gate_soundness(errs in proptest::collection::vec(-0.02f64..0.02, 1..60)) {
            let mut g = PiGainState::adaptive(1.0, 3.33e-8, 0.006).unwrap();
            for e in errs {
                let out = pi_update(e, &g);
                if out.u_rate != 0.0 {
                    prop_assert!(e.abs() <= 0.006);
                }
                prop_assert!(out.gains.alpha() >= 0.0 && out.gains.alpha() <= 3.33e-8);
                if e.abs() > 0.006 {
                    prop_assert_eq!(out.gains.alpha(), 0.0);
                }
                g = out.gains;
            }
        }

        #[test]
        fn alternating_errors_decay(mag in 1e-7f64..1e-3, n in 2usize..30) {
            let mut g = PiGainState::adaptive(1.0, 3.33e-8, 0.006).unwrap();
            g = pi_update(mag, &g).gains;
            let mut last = g.alpha();
            for k in 1..n {
                let e = if k % 2 == 0 { mag } else { -mag };
                g = pi_update(e, &g).gains;
                prop_assert!(g.alpha() < last);
                last = g.alpha();
            }
        }

        #[test]
        fn constant_errors_hold_cap(mag in -1e-3f64..1e-3, n in 1usize..30) {
            let mut g = PiGainState::adaptive(1.0, 3.33e-8, 0.006).unwrap();
            for _ in 0..n {
                g = pi_update(mag, &g).gains;
                prop_assert_eq!(g.alpha(), 3.33e-8);
            }
        }

        #[test]
        fn deterministic_trajectory(errs in proptest::collection::vec(-0.01f64..0.01, 1..40)) {
            let run = || {
                let mut g = PiGainState::adaptive(1.0, 3.33e-8, 0.006).unwrap();
                errs.iter().map(|&e| { g = pi_update(e, &g).gains; g.alpha() }).collect::<Vec<_>>()
            };
            prop_assert_eq!(run(), run());
        }
    }
}
