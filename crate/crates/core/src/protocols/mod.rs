//! Node-level synchronization protocols behind a common trait, looked up by
//! name in a [`ProtocolRegistry`].
//!
//! Handlers receive only the message payload and the local hardware reading
//! at the moment of the event; the sender's identity is never exposed.

mod avg;
mod flood;
mod least_squares;
mod pi_clock;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::ClockError;
use crate::pi::{GainSchedule, PiError};
use crate::topology::NodeId;

pub use avg::AvgPiSync;
pub use flood::{FloodPiSync, ForwardMode};
pub use least_squares::{LsAnchor, LsBaseline, LsEntry};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Gains(#[from] PiError),
    #[error("unknown protocol {name:?}; available: {available}")]
    Unknown { name: String, available: String },
    #[error("invalid protocol parameter: {0}")]
    InvalidParameter(String),
}

/// What travels over the air.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    /// Sender's logical time at transmission, seconds.
    pub time_estimate: f64,
    /// Flood round; absent for protocols that do not flood.
    pub seq: Option<u64>,
}

/// A payload tagged with its sender for tracing. Handlers only ever see
/// the payload.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncMessage {
    pub payload: Payload,
    pub sender: NodeId,
}

/// What the engine should do after a handler returns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reaction {
    Quiet,
    /// Transmit the current payload now.
    Broadcast,
    /// Transmit the then-current payload after the given number of seconds.
    ForwardAfter(f64),
}

/// Snapshot of a node for traces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeObservation {
    pub t_hat: f64,
    pub delta_hat: f64,
    pub alpha: Option<f64>,
    pub last_error: Option<f64>,
}

/// Per-node protocol state machine. `ticks` is the node's hardware counter
/// at the instant of the event.
pub trait SyncProtocol: Send {
    fn logical_time(&self, ticks: f64) -> Result<f64, ProtocolError>;
    fn on_receive(&mut self, payload: &Payload, ticks: f64) -> Result<Reaction, ProtocolError>;
    fn on_beacon(&mut self, ticks: f64) -> Result<Reaction, ProtocolError>;
    fn payload(&self, ticks: f64) -> Result<Payload, ProtocolError>;
    fn observe(&self, ticks: f64) -> Result<NodeObservation, ProtocolError>;
    /// Corrections whose rate had to be clamped.
    fn rate_clamps(&self) -> u64 {
        0
    }
}

/// Tunables shared by all protocols. Unused fields are ignored by
/// protocols that do not need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    pub beta: f64,
    pub alpha_max: f64,
    pub e_max: f64,
    pub schedule: GainSchedule,
    pub beacon_period: f64,
    pub nominal_freq: f64,
    /// Regression table size for least-squares baselines.
    pub table_size: usize,
    /// Processing delay before a pulse is forwarded, seconds.
    pub forward_delay: f64,
    /// A priori mean message delay `γ̄` added back to measured errors.
    pub mean_delay_estimate: f64,
    pub reference: NodeId,
    pub ls_anchor: LsAnchor,
    /// Samples further than this from the current fit are discarded.
    pub ls_throwout: Option<f64>,
}

impl ProtocolParams {
    /// Defaults derived from `B`, `f̂` and the drift bound in ppm.
    pub fn with_defaults(beacon_period: f64, nominal_freq: f64, drift_ppm: f64) -> Self {
        ProtocolParams {
            beta: 1.0,
            alpha_max: 1.0 / (nominal_freq * beacon_period),
            e_max: 2.0 * drift_ppm * 1e-6 * beacon_period,
            schedule: GainSchedule::Adaptive,
            beacon_period,
            nominal_freq,
            table_size: 8,
            forward_delay: 0.003,
            mean_delay_estimate: 0.0,
            reference: NodeId(1),
            ls_anchor: LsAnchor::Regression,
            ls_throwout: None,
        }
    }

    pub fn validate(&self) -> Result<(), ProtocolError> {
        let bad = |m: String| Err(ProtocolError::InvalidParameter(m));
        if !(self.beacon_period > 0.0) {
            return bad(format!("beacon_period must be positive, got {}", self.beacon_period));
        }
        if !(self.nominal_freq > 0.0) {
            return bad(format!("nominal_freq must be positive, got {}", self.nominal_freq));
        }
        if self.table_size < 2 {
            return bad(format!("table_size must be at least 2, got {}", self.table_size));
        }
        if !(self.forward_delay >= 0.0) {
            return bad(format!("forward_delay must be non-negative, got {}", self.forward_delay));
        }
        if !(self.mean_delay_estimate >= 0.0) {
            return bad(format!(
                "mean_delay_estimate must be non-negative, got {}",
                self.mean_delay_estimate
            ));
        }
        crate::pi::PiGainState::adaptive(self.beta, self.alpha_max, self.e_max)?;
        Ok(())
    }

    pub(crate) fn gains(&self) -> Result<crate::pi::PiGainState, ProtocolError> {
        Ok(match self.schedule {
            GainSchedule::Adaptive => {
                crate::pi::PiGainState::adaptive(self.beta, self.alpha_max, self.e_max)?
            }
            GainSchedule::Fixed => crate::pi::PiGainState::fixed(self.beta, self.alpha_max)?,
        })
    }
}

/// Identity of the node a protocol instance runs on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeContext {
    pub id: NodeId,
    pub is_reference: bool,
}

pub trait ProtocolFactory: Send + Sync {
    fn name(&self) -> &'static str;
    fn description(&self) -> &'static str;
    fn create(
        &self,
        node: NodeContext,
        params: &ProtocolParams,
    ) -> Result<Box<dyn SyncProtocol>, ProtocolError>;
    /// Whether one node acts as the time source.
    fn uses_reference(&self) -> bool {
        true
    }
}

type BuildFn = fn(NodeContext, &ProtocolParams) -> Result<Box<dyn SyncProtocol>, ProtocolError>;

struct FnFactory {
    name: &'static str,
    description: &'static str,
    uses_reference: bool,
    build: BuildFn,
}

impl ProtocolFactory for FnFactory {
    fn name(&self) -> &'static str {
        self.name
    }
    fn description(&self) -> &'static str {
        self.description
    }
    fn create(
        &self,
        node: NodeContext,
        params: &ProtocolParams,
    ) -> Result<Box<dyn SyncProtocol>, ProtocolError> {
        (self.build)(node, params)
    }
    fn uses_reference(&self) -> bool {
        self.uses_reference
    }
}

/// Name-keyed table of protocol factories.
pub struct ProtocolRegistry {
    factories: BTreeMap<String, Box<dyn ProtocolFactory>>,
}

impl fmt::Debug for ProtocolRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}

impl Default for ProtocolRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ProtocolRegistry {
    pub fn empty() -> Self {
        ProtocolRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register(FnFactory {
            name: "avg-pisync",
            description: "fully distributed PI sync: averages neighbour errors once per period",
            uses_reference: false,
            build: |_node, p| {
                Ok(Box::new(AvgPiSync::new(p)?) as Box<dyn SyncProtocol>)
            },
        });
        r.register(FnFactory {
            name: "flood-pisync",
            description: "PI sync on a reference flood relayed at each node's own beacon",
            uses_reference: true,
            build: |node, p| {
                Ok(Box::new(FloodPiSync::new(p, node.is_reference, ForwardMode::AtBeacon)?)
                    as Box<dyn SyncProtocol>)
            },
        });
        r.register(FnFactory {
            name: "pulse-pisync",
            description: "PI sync on a reference pulse forwarded immediately on receipt",
            uses_reference: true,
            build: |node, p| {
                Ok(Box::new(FloodPiSync::new(p, node.is_reference, ForwardMode::Immediate)?)
                    as Box<dyn SyncProtocol>)
            },
        });
        r.register(FnFactory {
            name: "ls-flood",
            description: "least-squares regression baseline, flood relayed at each beacon",
            uses_reference: true,
            build: |node, p| {
                Ok(Box::new(LsBaseline::new(p, node.is_reference, ForwardMode::AtBeacon)?)
                    as Box<dyn SyncProtocol>)
            },
        });
        r.register(FnFactory {
            name: "ls-pulse",
            description: "least-squares regression baseline, pulse forwarded on receipt",
            uses_reference: true,
            build: |node, p| {
                Ok(Box::new(LsBaseline::new(p, node.is_reference, ForwardMode::Immediate)?)
                    as Box<dyn SyncProtocol>)
            },
        });
        r
    }

    /// Adds or replaces a factory under its own name.
    pub fn register<F: ProtocolFactory + 'static>(&mut self, factory: F) {
        self.factories
            .insert(factory.name().to_string(), Box::new(factory));
    }

    pub fn get(&self, name: &str) -> Result<&dyn ProtocolFactory, ProtocolError> {
        self.factories
            .get(name)
            .map(|b| b.as_ref())
            .ok_or_else(|| ProtocolError::Unknown {
                name: name.to_string(),
                available: self.names().collect::<Vec<_>>().join(", "),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &dyn ProtocolFactory> {
        self.factories.values().map(|b| b.as_ref())
    }
}
