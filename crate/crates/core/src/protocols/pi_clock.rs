use crate::clock::LogicalClockState;
use crate::pi::{delay_compensated_error, pi_update, PiGainState};

use super::{NodeObservation, ProtocolError, ProtocolParams};

/// A logical clock driven by the PI law, shared by the PI protocols.
#[derive(Debug, Clone)]
pub(crate) struct PiClock {
    pub clock: LogicalClockState,
    pub gains: PiGainState,
    nominal_freq: f64,
    mean_delay: f64,
    last_error: Option<f64>,
    clamps: u64,
}

impl PiClock {
    pub fn new(params: &ProtocolParams) -> Result<Self, ProtocolError> {
        params.validate()?;
        Ok(PiClock {
            clock: LogicalClockState::new(params.nominal_freq),
            gains: params.gains()?,
            nominal_freq: params.nominal_freq,
            mean_delay: params.mean_delay_estimate,
            last_error: None,
            clamps: 0,
        })
    }

    pub fn now(&self, ticks: f64) -> Result<f64, ProtocolError> {
        Ok(self.clock.read_logical(ticks)?)
    }

    /// `t̂_remote − t̂_local`, with the expected delay added back.
    pub fn error_to(&self, remote: f64, ticks: f64) -> Result<f64, ProtocolError> {
        let local = self.now(ticks)?;
        Ok(delay_compensated_error(
            remote,
            local,
            self.mean_delay,
            self.clock.rate(),
            self.nominal_freq,
        ))
    }

    pub fn correct(&mut self, error: f64, ticks: f64) -> Result<(), ProtocolError> {
        let out = pi_update(error, &self.gains);
        let corrected = self.clock.apply_correction(ticks, out.u_offset, out.u_rate)?;
        self.clamps += u64::from(corrected.clamped);
        self.clock = corrected.state;
        self.gains = out.gains;
        self.last_error = Some(error);
        Ok(())
    }

    pub fn observe(&self, ticks: f64) -> Result<NodeObservation, ProtocolError> {
        Ok(NodeObservation {
            t_hat: self.now(ticks)?,
            delta_hat: self.clock.rate(),
            alpha: Some(self.gains.alpha()),
            last_error: self.last_error,
        })
    }

    pub fn clamps(&self) -> u64 {
        self.clamps
    }
}
