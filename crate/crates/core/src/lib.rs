//! Proportional-integral clock synchronization for wireless sensor
//! networks.
//!
//! * [`clock`]: hardware oscillators and logical clocks
//! * [`pi`]: the PI correction law and adaptive integral gain
//! * [`analysis`]: closed-form error dynamics, stability, variance
//! * [`topology`], [`netsim`]: graphs and the discrete-event simulator
//! * [`protocols`]: AvgPISync, FloodPISync, PulsePISync and least-squares
//!   baselines, registered by name
//! * [`metrics`], [`experiment`]: skew metrics and config-driven runs

// Validation uses `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod clock;
pub mod experiment;
pub mod metrics;
pub mod netsim;
pub mod pi;
pub mod protocols;
pub mod topology;

pub use protocols::ProtocolRegistry;
pub use topology::{NodeId, Topology};
