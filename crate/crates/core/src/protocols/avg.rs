use super::pi_clock::PiClock;
use super::{NodeObservation, Payload, ProtocolError, ProtocolParams, Reaction, SyncProtocol};

/// Fully distributed PI synchronization. Errors to every neighbour heard
/// during a period are averaged and applied once, at the node's beacon.
#[derive(Debug, Clone)]
pub struct AvgPiSync {
    pi: PiClock,
    sum: f64,
    num: u32,
}

impl AvgPiSync {
    pub fn new(params: &ProtocolParams) -> Result<Self, ProtocolError> {
        Ok(AvgPiSync {
            pi: PiClock::new(params)?,
            sum: 0.0,
            num: 0,
        })
    }

    pub fn pending(&self) -> (f64, u32) {
        (self.sum, self.num)
    }

    pub fn rate(&self) -> f64 {
        self.pi.clock.rate()
    }

    pub fn alpha(&self) -> f64 {
        self.pi.gains.alpha()
    }
}

impl SyncProtocol for AvgPiSync {
    fn logical_time(&self, ticks: f64) -> Result<f64, ProtocolError> {
        self.pi.now(ticks)
    }

    fn on_receive(&mut self, payload: &Payload, ticks: f64) -> Result<Reaction, ProtocolError> {
        self.sum += self.pi.error_to(payload.time_estimate, ticks)?;
        self.num += 1;
        Ok(Reaction::Quiet)
    }

    fn on_beacon(&mut self, ticks: f64) -> Result<Reaction, ProtocolError> {
        if self.num > 0 {
            let e = self.sum / f64::from(self.num);
            self.pi.correct(e, ticks)?;
            self.sum = 0.0;
            self.num = 0;
        }
        Ok(Reaction::Broadcast)
    }

    fn payload(&self, ticks: f64) -> Result<Payload, ProtocolError> {
        Ok(Payload {
            time_estimate: self.pi.now(ticks)?,
            seq: None,
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

    fn msg(t: f64) -> Payload {
        Payload {
            time_estimate: t,
            seq: None,
        }
    }

    #[test]
    fn receipt_accumulates() {
        let mut p = AvgPiSync::new(&params()).unwrap();
        let s = 10e6; // local t̂ = 10 s
        assert_eq!(p.on_receive(&msg(10.000002), s).unwrap(), Reaction::Quiet);
        let (sum, num) = p.pending();
        assert!((sum - 2e-6).abs() < 1e-12 && num == 1);
        p.on_receive(&msg(9.999996), s).unwrap();
        let (sum, num) = p.pending();
        assert!((sum + 2e-6).abs() < 1e-12 && num == 2);
        // nothing applied yet
        assert_eq!(p.logical_time(s).unwrap(), 10.0);
    }

    #[test]
    fn beacon_applies_average() {
        let prm = params();
        let mut p = AvgPiSync::new(&prm).unwrap();
        let s = 30e6;
        p.on_receive(&msg(30.000001), s).unwrap();
        p.on_receive(&msg(30.000003), s).unwrap();
        assert_eq!(p.on_beacon(s).unwrap(), Reaction::Broadcast);
        // first in-band error: α jumps to α_max and is applied to e = 2 µs
        assert!((p.logical_time(s).unwrap() - 30.000002).abs() < 1e-12);
        let expected_rate = 1e-6 + prm.alpha_max * 2e-6;
        assert!((p.rate() - expected_rate).abs() < 1e-22);
        assert_eq!(p.pending(), (0.0, 0));
    }

    #[test]
    fn empty_period_only_broadcasts() {
        let mut p = AvgPiSync::new(&params()).unwrap();
        assert_eq!(p.on_beacon(30e6).unwrap(), Reaction::Broadcast);
        assert_eq!(p.logical_time(30e6).unwrap(), 30.0);
        assert_eq!(p.rate(), 1e-6);
        assert_eq!(p.payload(30e6).unwrap(), msg(30.0));
    }

    #[test]
    fn large_average_skips_integrator() {
        let mut p = AvgPiSync::new(&params()).unwrap();
        let s = 30e6;
        p.on_receive(&msg(30.01), s).unwrap();
        p.on_beacon(s).unwrap();
        assert!((p.logical_time(s).unwrap() - 30.01).abs() < 1e-12);
        assert_eq!(p.rate(), 1e-6);
        assert_eq!(p.alpha(), 0.0);
    }
}
