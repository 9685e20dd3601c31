//! Round-based reference/follower pair.
//!
//! The reference transmits its hardware-derived time `s₁/f̂` at absolute
//! times `hB`; the follower receives it instantly with additive noise and
//! applies one PI correction per round. This is the setting the closed-form
//! pairwise analysis describes, built from the same clock and controller
//! code as the network simulator.

use rand_distr::{Distribution, Normal};

use crate::clock::{HardwareClock, JitterModel, LogicalClockState};
use crate::pi::{pi_update, PiGainState};

use super::{stream_rng, SimError};

#[derive(Debug, Clone, PartialEq)]
pub struct PairwiseConfig {
    pub nominal_freq: f64,
    pub beacon_period: f64,
    pub ref_freq: f64,
    pub node_freq: f64,
    /// Applied to both oscillators, held for one period.
    pub jitter: JitterModel,
    /// Standard deviation of the received-time noise, seconds.
    pub timestamp_noise: f64,
    pub gains: PiGainState,
    /// Follower's logical time at `t = 0`.
    pub initial_offset: f64,
    /// Follower's initial rate multiplier.
    pub initial_rate: f64,
    /// `(round, new follower frequency)`: from `round·B` onwards.
    pub freq_step: Option<(u64, f64)>,
    pub rounds: u64,
    pub seed: u64,
    pub tick_quantization: bool,
}

impl PairwiseConfig {
    /// Ideal clocks at `f̂`, no noise, follower starting in sync.
    pub fn new(nominal_freq: f64, beacon_period: f64, gains: PiGainState, rounds: u64) -> Self {
        PairwiseConfig {
            nominal_freq,
            beacon_period,
            ref_freq: nominal_freq,
            node_freq: nominal_freq,
            jitter: JitterModel::None,
            timestamp_noise: 0.0,
            gains,
            initial_offset: 0.0,
            initial_rate: 1.0 / nominal_freq,
            freq_step: None,
            rounds,
            seed: 0,
            tick_quantization: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairwiseRound {
    pub round: u64,
    /// `t̂_follower − t̂_reference` just before the correction.
    pub true_error: f64,
    /// Noisy `t̂_remote − t̂_local` the controller acted on.
    pub measured_error: f64,
    /// Follower rate multiplier before the correction.
    pub rate: f64,
    /// Integral gain after the correction.
    pub alpha: f64,
    pub clamped: bool,
}

/// Rounds `0..rounds`; round `h` happens at `t = hB`.
pub fn simulate_pair(cfg: &PairwiseConfig) -> Result<Vec<PairwiseRound>, SimError> {
    let f = cfg.nominal_freq;
    let b = cfg.beacon_period;
    let mut reference =
        HardwareClock::new(f, cfg.ref_freq, cfg.jitter, b, stream_rng(cfg.seed, 1))?;
    let mut follower =
        HardwareClock::new(f, cfg.node_freq, cfg.jitter, b, stream_rng(cfg.seed, 2))?;
    let mut noise_rng = stream_rng(cfg.seed, 0);
    let noise = (cfg.timestamp_noise > 0.0)
        .then(|| Normal::new(0.0, cfg.timestamp_noise))
        .transpose()
        .map_err(|e| SimError::InvalidConfig(format!("timestamp noise: {e}")))?;
    let mut logical = LogicalClockState::with_anchor(f, cfg.initial_offset, cfg.initial_rate, 0.0);
    let mut gains = cfg.gains;
    let read = |clock: &mut HardwareClock, t: f64| -> Result<f64, SimError> {
        Ok(if cfg.tick_quantization {
            clock.read(t)? as f64
        } else {
            clock.read_continuous(t)?
        })
    };

    let mut out = Vec::with_capacity(cfg.rounds as usize);
    for h in 0..cfg.rounds {
        let t = h as f64 * b;
        if let Some((step_round, new_freq)) = cfg.freq_step {
            if step_round == h {
                follower.set_true_freq(t, new_freq)?;
            }
        }
        let t_ref = read(&mut reference, t)? / f;
        let s = read(&mut follower, t)?;
        let t_local = logical.read_logical(s)?;
        let v = noise.map_or(0.0, |n| n.sample(&mut noise_rng));
        let measured = t_ref + v - t_local;
        let step = pi_update(measured, &gains);
        let corrected = logical.apply_correction(s, step.u_offset, step.u_rate)?;
        out.push(PairwiseRound {
            round: h,
            true_error: t_local - t_ref,
            measured_error: measured,
            rate: logical.rate(),
            alpha: step.gains.alpha(),
            clamped: corrected.clamped,
        });
        logical = corrected.state;
        gains = step.gains;
    }
    Ok(out)
}
