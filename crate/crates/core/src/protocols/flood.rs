use serde::{Deserialize, Serialize};

use super::pi_clock::PiClock;
use super::{NodeObservation, Payload, ProtocolError, ProtocolParams, Reaction, SyncProtocol};

/// When a node relays the newest flood round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardMode {
    /// Every node broadcasts at its own beacon.
    AtBeacon,
    /// Only the reference beacons; others relay right after accepting a
    /// new round.
    Immediate,
}

/// PI synchronization to a reference node whose time is flooded with a
/// sequence number. Only the first copy of each round is used.
#[derive(Debug, Clone)]
pub struct FloodPiSync {
    pi: PiClock,
    seq: u64,
    is_reference: bool,
    mode: ForwardMode,
    forward_delay: f64,
}

impl FloodPiSync {
    pub fn new(
        params: &ProtocolParams,
        is_reference: bool,
        mode: ForwardMode,
    ) -> Result<Self, ProtocolError> {
        Ok(FloodPiSync {
            pi: PiClock::new(params)?,
            seq: 0,
            is_reference,
            mode,
            forward_delay: params.forward_delay,
        })
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    pub fn rate(&self) -> f64 {
        self.pi.clock.rate()
    }

    pub fn alpha(&self) -> f64 {
        self.pi.gains.alpha()
    }
}

impl SyncProtocol for FloodPiSync {
    fn logical_time(&self, ticks: f64) -> Result<f64, ProtocolError> {
        self.pi.now(ticks)
    }

    fn on_receive(&mut self, payload: &Payload, ticks: f64) -> Result<Reaction, ProtocolError> {
        let fresh = matches!(payload.seq, Some(s) if s > self.seq);
        if self.is_reference || !fresh {
            return Ok(Reaction::Quiet);
        }
        let e = self.pi.error_to(payload.time_estimate, ticks)?;
        self.pi.correct(e, ticks)?;
        self.seq = payload.seq.unwrap_or(self.seq);
        Ok(match self.mode {
            ForwardMode::AtBeacon => Reaction::Quiet,
            ForwardMode::Immediate => Reaction::ForwardAfter(self.forward_delay),
        })
    }

    fn on_beacon(&mut self, _ticks: f64) -> Result<Reaction, ProtocolError> {
        if self.is_reference {
            self.seq += 1;
            return Ok(Reaction::Broadcast);
        }
        Ok(match self.mode {
            ForwardMode::AtBeacon => Reaction::Broadcast,
            ForwardMode::Immediate => Reaction::Quiet,
        })
    }

    fn payload(&self, ticks: f64) -> Result<Payload, ProtocolError> {
        // The reference's clock is never corrected, so this is s/f̂ there.
        Ok(Payload {
            time_estimate: self.pi.now(ticks)?,
            seq: Some(self.seq),
        })
    }

    fn observe(&self, ticks: f64) -> Result<NodeObservation, ProtocolError> {
        self.pi.observe(ticks)
    }

    fn rate_clamps(&self) -> u64 {
        self.pi.clamps()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ProtocolParams {
        ProtocolParams::with_defaults(30.0, 1e6, 100.0)
    }

    fn msg(t: f64, seq: u64) -> Payload {
        Payload {
            time_estimate: t,
            seq: Some(seq),
        }
    }

    #[test]
    fn stale_round_discarded() {
        let mut p = FloodPiSync::new(&params(), false, ForwardMode::AtBeacon).unwrap();
        p.on_receive(&msg(1.0, 1), 1e6).unwrap();
        let before = p.logical_time(2e6).unwrap();
        p.on_receive(&msg(5.0, 1), 2e6).unwrap();
        assert_eq!(p.logical_time(2e6).unwrap(), before);
        assert_eq!(p.seq(), 1);
    }

    #[test]
    fn fresh_round_jumps_and_integrates() {
        let prm = params();
        let mut p = FloodPiSync::new(&prm, false, ForwardMode::AtBeacon).unwrap();
        let s = 30e6;
        p.on_receive(&msg(30.000003, 4), s).unwrap();
        assert!((p.logical_time(s).unwrap() - 30.000003).abs() < 1e-12);
        assert!((p.rate() - (1e-6 + prm.alpha_max * 3e-6)).abs() < 1e-22);
        assert_eq!(p.seq(), 4);
    }

    #[test]
    fn reference_counts_rounds_and_ignores_input() {
        let mut r = FloodPiSync::new(&params(), true, ForwardMode::AtBeacon).unwrap();
        for k in 1..=3 {
            assert_eq!(r.on_beacon(k as f64 * 30e6).unwrap(), Reaction::Broadcast);
        }
        assert_eq!(r.seq(), 3);
        r.on_receive(&msg(1000.0, 99), 100e6).unwrap();
        assert_eq!(r.logical_time(100e6).unwrap(), 100.0);
        assert_eq!(r.payload(120e6).unwrap(), msg(120.0, 3));
    }

    #[test]
    fn follower_rebroadcasts_unchanged_state() {
        let mut p = FloodPiSync::new(&params(), false, ForwardMode::AtBeacon).unwrap();
        assert_eq!(p.on_beacon(30e6).unwrap(), Reaction::Broadcast);
        assert_eq!(p.payload(30e6).unwrap(), msg(30.0, 0));
    }

    #[test]
    fn pulse_forwards_only_fresh_rounds() {
        let mut p = FloodPiSync::new(&params(), false, ForwardMode::Immediate).unwrap();
        assert_eq!(p.on_beacon(30e6).unwrap(), Reaction::Quiet);
        assert_eq!(
            p.on_receive(&msg(30.0, 1), 30e6).unwrap(),
            Reaction::ForwardAfter(0.003)
        );
        assert_eq!(p.on_receive(&msg(30.0, 1), 30e6).unwrap(), Reaction::Quiet);
    }

    #[test]
    fn unsequenced_payload_ignored() {
        let mut p = FloodPiSync::new(&params(), false, ForwardMode::AtBeacon).unwrap();
        let m = Payload {
            time_estimate: 3.0,
            seq: None,
        };
        p.on_receive(&m, 1e6).unwrap();
        assert_eq!(p.logical_time(1e6).unwrap(), 1.0);
    }
}
