use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::metrics::MetricsSample;
use crate::protocols::NodeObservation;
use crate::topology::NodeId;

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeRecord {
    pub time: f64,
    pub node: NodeId,
    pub obs: NodeObservation,
}

/// Message accounting. `sent = delivered + lost + undeliverable + in_flight`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct Counters {
    pub beacons: u64,
    pub sent: u64,
    pub delivered: u64,
    pub lost: u64,
    /// Receiver was off when the message arrived.
    pub undeliverable: u64,
    /// Still scheduled when the run ended.
    pub in_flight: u64,
    pub rate_clamps: u64,
}

impl Counters {
    pub fn reconciles(&self) -> bool {
        self.sent == self.delivered + self.lost + self.undeliverable + self.in_flight
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceLog {
    pub metrics: Vec<MetricsSample>,
    pub nodes: Vec<NodeRecord>,
    pub counters: Counters,
    pub warnings: Vec<String>,
    /// Drawn true frequency of each node at start, ticks/s.
    pub true_freqs: Vec<f64>,
    /// Initial power-up time of each node.
    pub start_times: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsRow {
    time_s: String,
    mgs_us: String,
    ags_us: String,
    mls_us: String,
    als_us: String,
}

/// One row of the node stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRow {
    pub time_s: f64,
    pub node_id: u32,
    pub t_hat_s: f64,
    pub delta_hat: f64,
    pub alpha: Option<f64>,
    pub last_error_us: Option<f64>,
}

fn us(seconds: f64) -> String {
    format!("{:.3}", seconds * 1e6)
}

impl TraceLog {
    pub fn write_metrics_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        for m in &self.metrics {
            w.serialize(MetricsRow {
                time_s: format!("{}", m.time),
                mgs_us: us(m.mgs),
                ags_us: us(m.ags),
                mls_us: us(m.mls),
                als_us: us(m.als),
            })?;
        }
        if self.metrics.is_empty() {
            w.write_record(["time_s", "mgs_us", "ags_us", "mls_us", "als_us"])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_nodes_csv<W: Write>(&self, out: W) -> Result<(), SimError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "time_s",
            "node_id",
            "t_hat_s",
            "delta_hat",
            "alpha",
            "last_error_us",
        ])?;
        for r in &self.nodes {
            w.write_record([
                format!("{}", r.time),
                r.node.to_string(),
                format!("{:.12}", r.obs.t_hat),
                format!("{:e}", r.obs.delta_hat),
                r.obs.alpha.map(|a| format!("{a:e}")).unwrap_or_default(),
                r.obs.last_error.map(us).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Parses a node stream written by [`TraceLog::write_nodes_csv`].
pub fn read_nodes_csv<R: Read>(input: R) -> Result<Vec<NodeRow>, SimError> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize()
        .map(|row| row.map_err(SimError::from))
        .collect()
}
