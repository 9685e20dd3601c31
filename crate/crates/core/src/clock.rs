//! Hardware oscillators and the logical clocks built on top of them.
//!
//! A [`HardwareClock`] integrates a piecewise-constant frequency
//! `f̄ + w_k`, where the jitter `w_k` is redrawn once per hold interval
//! (one beacon period). Reads are floor-quantized to integer ticks, or
//! returned unquantized through [`HardwareClock::read_continuous`].
//!
//! A [`LogicalClockState`] turns tick readings into a time estimate
//! `t̂ = t̂₀ + Δ̂·(s − s₀)` and is only ever changed through
//! [`LogicalClockState::apply_correction`].

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClockError {
    #[error("non-monotone hardware read: requested t={requested} s, last read at t={last} s")]
    NonMonotoneRead { requested: f64, last: f64 },
    #[error("tick reading {ticks} precedes the logical clock anchor {anchor}")]
    TicksBeforeAnchor { ticks: f64, anchor: f64 },
    #[error("invalid clock parameter: {0}")]
    InvalidParameter(String),
}

/// Per-round frequency jitter `w`, in ticks/second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum JitterModel {
    None,
    /// Uniform on `[-half_width, half_width]`.
    Uniform { half_width: f64 },
    Gaussian { std_dev: f64 },
}

impl JitterModel {
    /// Uniform jitter with the given standard deviation (half-width `√3·σ`).
    pub fn uniform_with_std(std_dev: f64) -> Self {
        JitterModel::Uniform {
            half_width: std_dev * 3f64.sqrt(),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            JitterModel::None => 0.0,
            JitterModel::Uniform { half_width } => half_width * half_width / 3.0,
            JitterModel::Gaussian { std_dev } => std_dev * std_dev,
        }
    }

    pub fn is_none(&self) -> bool {
        self.variance() == 0.0
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            JitterModel::None => 0.0,
            JitterModel::Uniform { half_width } if half_width > 0.0 => {
                rng.random_range(-half_width..=half_width)
            }
            JitterModel::Gaussian { std_dev } if std_dev > 0.0 => Normal::new(0.0, std_dev)
                .expect("finite positive std")
                .sample(rng),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: f64,
    end: f64,
    ticks: f64,
    base_freq: f64,
    jitter: f64,
}

impl Segment {
    fn rate(&self) -> f64 {
        self.base_freq + self.jitter
    }

    fn ticks_at(&self, t: f64) -> f64 {
        self.ticks + self.rate() * (t - self.start)
    }

    fn end_ticks(&self) -> f64 {
        self.ticks_at(self.end)
    }
}

/// A free-running oscillator and its tick counter.
///
/// The counter is zero at `origin` (power-on). Jitter is drawn from the
/// clock's own random stream once per hold interval, so the realized
/// frequency profile does not depend on how often or in which order the
/// clock is queried.
#[derive(Debug, Clone)]
pub struct HardwareClock {
    nominal_freq: f64,
    true_freq: f64,
    jitter: JitterModel,
    hold: f64,
    origin: f64,
    rng: ChaCha8Rng,
    segments: VecDeque<Segment>,
    next_hold: u64,
    last_read: f64,
    accumulated_ticks: u64,
}

impl HardwareClock {
    /// `hold` is the jitter hold interval; it is ignored without jitter.
    pub fn new(
        nominal_freq: f64,
        true_freq: f64,
        jitter: JitterModel,
        hold: f64,
        rng: ChaCha8Rng,
    ) -> Result<Self, ClockError> {
        if !(nominal_freq > 0.0 && nominal_freq.is_finite()) {
            return Err(ClockError::InvalidParameter(format!(
                "nominal frequency must be positive, got {nominal_freq}"
            )));
        }
        if !(true_freq > 0.0 && true_freq.is_finite()) {
            return Err(ClockError::InvalidParameter(format!(
                "true frequency must be positive, got {true_freq}"
            )));
        }
        if !jitter.is_none() && !(hold > 0.0 && hold.is_finite()) {
            return Err(ClockError::InvalidParameter(format!(
                "jitter hold interval must be positive, got {hold}"
            )));
        }
        let mut clock = HardwareClock {
            nominal_freq,
            true_freq,
            jitter,
            hold: if jitter.is_none() { f64::INFINITY } else { hold },
            origin: 0.0,
            rng,
            segments: VecDeque::new(),
            next_hold: 0,
            last_read: 0.0,
            accumulated_ticks: 0,
        };
        clock.restart(0.0);
        Ok(clock)
    }

    /// Jitter-free clock, convenient for tests and desk calculations.
    pub fn ideal(nominal_freq: f64, true_freq: f64) -> Result<Self, ClockError> {
        Self::new(
            nominal_freq,
            true_freq,
            JitterModel::None,
            f64::INFINITY,
            ChaCha8Rng::seed_from_u64(0),
        )
    }

    pub fn nominal_freq(&self) -> f64 {
        self.nominal_freq
    }

    pub fn true_freq(&self) -> f64 {
        self.true_freq
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn accumulated_ticks(&self) -> u64 {
        self.accumulated_ticks
    }

    /// Resets the counter to zero at absolute time `origin` (a power cycle).
    /// The oscillator keeps its frequency and its random stream.
    pub fn restart(&mut self, origin: f64) {
        self.origin = origin;
        self.last_read = origin;
        self.accumulated_ticks = 0;
        self.next_hold = 0;
        self.segments.clear();
        self.push_hold_interval();
    }

    fn push_hold_interval(&mut self) {
        let (start, ticks) = match self.segments.back() {
            Some(last) => (last.end, last.end_ticks()),
            None => (self.origin, 0.0),
        };
        let k = self.next_hold;
        self.next_hold += 1;
        let end = if self.hold.is_finite() {
            self.origin + (k + 1) as f64 * self.hold
        } else {
            f64::INFINITY
        };
        let mut jitter = self.jitter.sample(&mut self.rng);
        // Keep the oscillator running forward whatever the jitter tail does.
        if self.true_freq + jitter <= 0.0 {
            jitter = -0.5 * self.true_freq;
        }
        self.segments.push_back(Segment {
            start,
            end,
            ticks,
            base_freq: self.true_freq,
            jitter,
        });
    }

    fn extend_to_time(&mut self, t: f64) {
        while self.segments.back().is_some_and(|s| s.end <= t) {
            self.push_hold_interval();
        }
    }

    fn segment_index(&self, t: f64) -> usize {
        self.segments
            .partition_point(|s| s.start <= t)
            .saturating_sub(1)
    }

    /// Unquantized counter value at absolute time `t`.
    pub fn read_continuous(&mut self, t: f64) -> Result<f64, ClockError> {
        if t < self.last_read {
            return Err(ClockError::NonMonotoneRead {
                requested: t,
                last: self.last_read,
            });
        }
        self.extend_to_time(t);
        let idx = self.segment_index(t);
        let ticks = self.segments[idx].ticks_at(t).max(0.0);
        self.segments.drain(..idx);
        self.last_read = t;
        Ok(ticks)
    }

    /// Integer counter value at absolute time `t`.
    pub fn read(&mut self, t: f64) -> Result<u64, ClockError> {
        let exact = self.read_continuous(t)?;
        // A few ulps of slack so that values which are integral in exact
        // arithmetic do not floor to the integer below.
        let ticks = (exact + exact * 4.0 * f64::EPSILON).floor() as u64;
        self.accumulated_ticks = self.accumulated_ticks.max(ticks);
        Ok(self.accumulated_ticks)
    }

    /// Earliest absolute time at which the (unquantized) counter reaches
    /// `target`. Does not count as a read.
    pub fn time_of_ticks(&mut self, target: f64) -> f64 {
        let mut idx = self.segment_index(self.last_read);
        loop {
            while idx >= self.segments.len() {
                self.push_hold_interval();
            }
            let seg = self.segments[idx];
            if seg.end_ticks() >= target {
                let t = seg.start + (target - seg.ticks) / seg.rate();
                return t.max(self.last_read);
            }
            idx += 1;
        }
    }

    /// Changes the true frequency from absolute time `t` onwards. Jitter
    /// already drawn for future hold intervals is kept.
    pub fn set_true_freq(&mut self, t: f64, new_freq: f64) -> Result<(), ClockError> {
        if !(new_freq > 0.0 && new_freq.is_finite()) {
            return Err(ClockError::InvalidParameter(format!(
                "true frequency must be positive, got {new_freq}"
            )));
        }
        if t < self.last_read {
            return Err(ClockError::NonMonotoneRead {
                requested: t,
                last: self.last_read,
            });
        }
        self.extend_to_time(t);
        let idx = self.segment_index(t);
        let mut seg = self.segments[idx];
        let ticks_at_t = seg.ticks_at(t);
        let mut tail = seg;
        tail.start = t;
        tail.ticks = ticks_at_t;
        tail.base_freq = new_freq;
        seg.end = t;
        let mut rebuilt: Vec<Segment> = Vec::with_capacity(self.segments.len() - idx + 1);
        if seg.end > seg.start {
            rebuilt.push(seg);
        }
        rebuilt.push(tail);
        let mut ticks = tail.end_ticks();
        for s in self.segments.iter().skip(idx + 1) {
            let mut s = *s;
            s.ticks = ticks;
            s.base_freq = new_freq;
            ticks = s.end_ticks();
            rebuilt.push(s);
        }
        self.segments.truncate(idx);
        self.segments.extend(rebuilt);
        self.true_freq = new_freq;
        Ok(())
    }
}

/// Software clock: `t̂(s) = t̂₀ + Δ̂·(s − s₀)` between corrections.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogicalClockState {
    anchor_estimate: f64,
    rate: f64,
    anchor_ticks: f64,
    min_rate: f64,
    max_rate: f64,
}

/// Result of [`LogicalClockState::apply_correction`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corrected {
    pub state: LogicalClockState,
    /// The requested rate fell outside `[0.5/f̂, 2/f̂]` and was clamped.
    pub clamped: bool,
}

impl LogicalClockState {
    /// Power-on state: `t̂ = 0` at `s = 0`, `Δ̂ = 1/f̂`.
    pub fn new(nominal_freq: f64) -> Self {
        Self::with_anchor(nominal_freq, 0.0, 1.0 / nominal_freq, 0.0)
    }

    pub fn with_anchor(
        nominal_freq: f64,
        anchor_estimate: f64,
        rate: f64,
        anchor_ticks: f64,
    ) -> Self {
        LogicalClockState {
            anchor_estimate,
            rate,
            anchor_ticks,
            min_rate: 0.5 / nominal_freq,
            max_rate: 2.0 / nominal_freq,
        }
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn anchor_ticks(&self) -> f64 {
        self.anchor_ticks
    }

    pub fn anchor_estimate(&self) -> f64 {
        self.anchor_estimate
    }

    pub fn rate_bounds(&self) -> (f64, f64) {
        (self.min_rate, self.max_rate)
    }

    pub fn read_logical(&self, s_now: f64) -> Result<f64, ClockError> {
        if s_now < self.anchor_ticks {
            return Err(ClockError::TicksBeforeAnchor {
                ticks: s_now,
                anchor: self.anchor_ticks,
            });
        }
        Ok(self.anchor_estimate + self.rate * (s_now - self.anchor_ticks))
    }

    /// Shifts the value at `s_now` by `u_offset` and the slope by `u_rate`.
    pub fn apply_correction(
        &self,
        s_now: f64,
        u_offset: f64,
        u_rate: f64,
    ) -> Result<Corrected, ClockError> {
        let now = self.read_logical(s_now)?;
        let wanted = self.rate + u_rate;
        let rate = wanted.clamp(self.min_rate, self.max_rate);
        Ok(Corrected {
            state: LogicalClockState {
                anchor_estimate: now + u_offset,
                rate,
                anchor_ticks: s_now,
                ..*self
            },
            clamped: rate != wanted,
        })
    }
}
