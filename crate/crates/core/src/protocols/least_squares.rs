use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::analysis::{least_squares_pairwise, LineFit};

use super::flood::ForwardMode;
use super::{NodeObservation, Payload, ProtocolError, ProtocolParams, Reaction, SyncProtocol};

/// Where the fitted line is pinned between refits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LsAnchor {
    /// Through the newest table entry with the fitted slope.
    Newest,
    /// The regression line itself (through the table centroid), as FTSP
    /// computes global time.
    #[default]
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LsEntry {
    pub local_ticks: f64,
    pub remote_time: f64,
}

/// Regression-table synchronization to a flooded reference, in the style of
/// FTSP (relay at beacon) or PulseSync (relay on receipt).
#[derive(Debug, Clone)]
pub struct LsBaseline {
    table: VecDeque<LsEntry>,
    capacity: usize,
    fit: Option<LineFit>,
    anchor: LsAnchor,
    throwout: Option<f64>,
    rejected_in_row: u32,
    seq: u64,
    is_reference: bool,
    mode: ForwardMode,
    forward_delay: f64,
    nominal_freq: f64,
    mean_delay: f64,
    last_error: Option<f64>,
    clamps: u64,
}

/// Consecutive outliers after which the table is assumed stale.
const MAX_REJECTED_IN_ROW: u32 = 3;

impl LsBaseline {
    pub fn new(
        params: &ProtocolParams,
        is_reference: bool,
        mode: ForwardMode,
    ) -> Result<Self, ProtocolError> {
        params.validate()?;
        Ok(LsBaseline {
            table: VecDeque::with_capacity(params.table_size),
            capacity: params.table_size,
            fit: None,
            anchor: params.ls_anchor,
            throwout: params.ls_throwout,
            rejected_in_row: 0,
            seq: 0,
            is_reference,
            mode,
            forward_delay: params.forward_delay,
            nominal_freq: params.nominal_freq,
            mean_delay: params.mean_delay_estimate,
            last_error: None,
            clamps: 0,
        })
    }

    pub fn table(&self) -> impl Iterator<Item = &LsEntry> {
        self.table.iter()
    }

    pub fn fit(&self) -> Option<LineFit> {
        self.fit
    }

    pub fn seq(&self) -> u64 {
        self.seq
    }

    fn rate(&self) -> f64 {
        self.fit.map_or(1.0 / self.nominal_freq, |f| f.slope)
    }

    fn estimate(&self, ticks: f64) -> f64 {
        let Some(newest) = self.table.back() else {
            return ticks / self.nominal_freq;
        };
        match (self.fit, self.anchor) {
            (Some(fit), LsAnchor::Regression) => fit.eval(ticks),
            (Some(fit), LsAnchor::Newest) => {
                newest.remote_time + fit.slope * (ticks - newest.local_ticks)
            }
            (None, _) => newest.remote_time + (ticks - newest.local_ticks) / self.nominal_freq,
        }
    }

    fn refit(&mut self) {
        if self.table.len() < 2 {
            self.fit = None;
            return;
        }
        let (remote, local): (Vec<f64>, Vec<f64>) = self
            .table
            .iter()
            .map(|e| (e.remote_time, e.local_ticks))
            .unzip();
        // A degenerate table keeps the previous fit.
        if let Ok(mut fit) = least_squares_pairwise(&remote, &local) {
            let (lo, hi) = (0.5 / self.nominal_freq, 2.0 / self.nominal_freq);
            if !(lo..=hi).contains(&fit.slope) {
                fit.slope = fit.slope.clamp(lo, hi);
                self.clamps += 1;
            }
            self.fit = Some(fit);
        }
    }

    fn push(&mut self, entry: LsEntry) {
        if self.table.len() == self.capacity {
            self.table.pop_front();
        }
        self.table.push_back(entry);
        self.refit();
    }
}

impl SyncProtocol for LsBaseline {
    fn logical_time(&self, ticks: f64) -> Result<f64, ProtocolError> {
        Ok(self.estimate(ticks))
    }

    fn on_receive(&mut self, payload: &Payload, ticks: f64) -> Result<Reaction, ProtocolError> {
        let fresh = matches!(payload.seq, Some(s) if s > self.seq);
        if self.is_reference || !fresh {
            return Ok(Reaction::Quiet);
        }
        let remote = payload.time_estimate + self.mean_delay;
        let error = remote - self.estimate(ticks);
        self.last_error = Some(error);
        self.seq = payload.seq.unwrap_or(self.seq);
        let outlier = self.fit.is_some() && self.throwout.is_some_and(|lim| error.abs() > lim);
        if outlier {
            self.rejected_in_row += 1;
            if self.rejected_in_row < MAX_REJECTED_IN_ROW {
                return Ok(Reaction::Quiet);
            }
            self.table.clear();
            self.fit = None;
        }
        self.rejected_in_row = 0;
        self.push(LsEntry {
            local_ticks: ticks,
            remote_time: remote,
        });
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
            ForwardMode::AtBeacon if !self.table.is_empty() => Reaction::Broadcast,
            _ => Reaction::Quiet,
        })
    }

    fn payload(&self, ticks: f64) -> Result<Payload, ProtocolError> {
        Ok(Payload {
            time_estimate: self.estimate(ticks),
            seq: Some(self.seq),
        })
    }

    fn observe(&self, ticks: f64) -> Result<NodeObservation, ProtocolError> {
        Ok(NodeObservation {
            t_hat: self.estimate(ticks),
            delta_hat: self.rate(),
            alpha: None,
            last_error: self.last_error,
        })
    }

    fn rate_clamps(&self) -> u64 {
        self.clamps
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
    fn two_noiseless_samples_recover_rate() {
        let fbar = 1e6 * (1.0 + 40e-6);
        let mut p = LsBaseline::new(&params(), false, ForwardMode::AtBeacon).unwrap();
        // local clock started 2 s after the reference
        for k in 1..=2u64 {
            let t = k as f64 * 30.0;
            p.on_receive(&msg(t, k), (t - 2.0) * fbar).unwrap();
        }
        let oracle = least_squares_pairwise(&[30.0, 60.0], &[28.0 * fbar, 58.0 * fbar]).unwrap();
        let fit = p.fit().unwrap();
        assert!((fit.slope - oracle.slope).abs() < 1e-12 * oracle.slope);
        assert!((fit.slope * fbar - 1.0).abs() < 1e-12);
        let later = 1000.0;
        assert!((p.logical_time((later - 2.0) * fbar).unwrap() - later).abs() < 1e-9);
    }

    #[test]
    fn fifo_eviction() {
        let mut p = LsBaseline::new(&params(), false, ForwardMode::AtBeacon).unwrap();
        for k in 1..=9u64 {
            let t = k as f64 * 30.0;
            p.on_receive(&msg(t, k), t * 1e6).unwrap();
        }
        let locals: Vec<f64> = p.table().map(|e| e.local_ticks).collect();
        assert_eq!(locals.len(), 8);
        assert_eq!(locals[0], 60e6);
        assert_eq!(locals[7], 270e6);
    }

    #[test]
    fn seq_gating_and_degenerate_fit() {
        let mut p = LsBaseline::new(&params(), false, ForwardMode::Immediate).unwrap();
        assert_eq!(
            p.on_receive(&msg(30.0, 1), 30e6).unwrap(),
            Reaction::ForwardAfter(0.003)
        );
        assert_eq!(p.on_receive(&msg(31.0, 1), 30e6).unwrap(), Reaction::Quiet);
        assert_eq!(p.table().count(), 1);
        // same local reading twice: no usable fit, previous state kept
        p.on_receive(&msg(30.5, 2), 30e6).unwrap();
        assert!(p.fit().is_none());
    }

    #[test]
    fn regression_anchor_uses_centroid() {
        let mut prm = params();
        prm.ls_anchor = LsAnchor::Regression;
        let mut p = LsBaseline::new(&prm, false, ForwardMode::AtBeacon).unwrap();
        // noisy third point pulls the regression line but not the newest anchor
        for (k, noise) in [(1u64, 0.0), (2, 0.0), (3, 3e-6)] {
            let t = k as f64 * 30.0;
            p.on_receive(&msg(t + noise, k), t * 1e6).unwrap();
        }
        let at = p.logical_time(90e6).unwrap();
        assert!((at - 90.0).abs() < 3e-6 && (at - 90.000003).abs() > 1e-7);
    }

    #[test]
    fn throwout_discards_outliers() {
        let mut prm = params();
        prm.ls_throwout = Some(1e-3);
        let mut p = LsBaseline::new(&prm, false, ForwardMode::AtBeacon).unwrap();
        for k in 1..=3u64 {
            let t = k as f64 * 30.0;
            p.on_receive(&msg(t, k), t * 1e6).unwrap();
        }
        p.on_receive(&msg(120.5, 4), 120e6).unwrap();
        assert_eq!(p.table().count(), 3);
        assert_eq!(p.seq(), 4);
    }

    #[test]
    fn reference_beacons_hardware_time() {
        let mut r = LsBaseline::new(&params(), true, ForwardMode::Immediate).unwrap();
        assert_eq!(r.on_beacon(30e6).unwrap(), Reaction::Broadcast);
        assert_eq!(r.payload(30e6).unwrap(), msg(30.0, 1));
        r.on_receive(&msg(99.0, 7), 31e6).unwrap();
        assert_eq!(r.logical_time(31e6).unwrap(), 31.0);
    }
}
