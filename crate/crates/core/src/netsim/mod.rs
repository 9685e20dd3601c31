//! Deterministic discrete-event network simulator.
//!
//! Randomness comes from one master seed. Stream 0 of the ChaCha generator
//! drives setup (per-node drift draws, then start-time draws, in node
//! order) and afterwards every channel draw in event dequeue order; node
//! `i`'s oscillator jitter uses stream `i`.

mod channel;
mod event;
pub mod pairwise;
mod trace;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{ClockError, HardwareClock, JitterModel};
use crate::metrics::compute_metrics;
use crate::protocols::{
    NodeContext, Payload, ProtocolError, ProtocolFactory, ProtocolParams, ProtocolRegistry,
    Reaction, SyncMessage, SyncProtocol,
};
use crate::topology::{NodeId, Topology};

pub use channel::{ChannelModel, DelayJitter, Link};
pub use event::{EventKind, EventQueue, SimEvent};
pub use trace::{read_nodes_csv, Counters, NodeRecord, NodeRow, TraceLog};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("lifecycle schedule: {0}")]
    Schedule(String),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Pi(#[from] crate::pi::PiError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum LifecycleEvent {
    PowerOff { time: f64, node: u32 },
    PowerOn { time: f64, node: u32 },
    /// New true frequency given as an offset from nominal in ppm.
    FreqStep { time: f64, node: u32, ppm: f64 },
}

impl LifecycleEvent {
    pub fn time(&self) -> f64 {
        match *self {
            LifecycleEvent::PowerOff { time, .. }
            | LifecycleEvent::PowerOn { time, .. }
            | LifecycleEvent::FreqStep { time, .. } => time,
        }
    }

    pub fn node(&self) -> u32 {
        match *self {
            LifecycleEvent::PowerOff { node, .. }
            | LifecycleEvent::PowerOn { node, .. }
            | LifecycleEvent::FreqStep { node, .. } => node,
        }
    }
}

/// Validated lifecycle events, sorted by time (stable for equal times).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Schedule {
    events: Vec<LifecycleEvent>,
}

impl Schedule {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn events(&self) -> &[LifecycleEvent] {
        &self.events
    }
}

/// Checks times and on/off alternation. Nodes count as powered from the
/// start, so a power-on needs an earlier power-off of the same node.
pub fn schedule_lifecycle(
    events: &[LifecycleEvent],
    node_count: u32,
    duration: f64,
) -> Result<Schedule, SimError> {
    let mut sorted = events.to_vec();
    sorted.sort_by(|a, b| a.time().total_cmp(&b.time()));
    let mut on = vec![true; node_count as usize];
    for ev in &sorted {
        let (t, n) = (ev.time(), ev.node());
        if !(0.0..=duration).contains(&t) {
            return Err(SimError::Schedule(format!(
                "event at t={t} s on node {n} lies outside [0, {duration}]"
            )));
        }
        if n == 0 || n > node_count {
            return Err(SimError::Schedule(format!(
                "node {n} does not exist (1..={node_count})"
            )));
        }
        let slot = &mut on[(n - 1) as usize];
        match ev {
            LifecycleEvent::PowerOff { .. } if !*slot => {
                return Err(SimError::Schedule(format!(
                    "node {n} powered off at t={t} s while already off"
                )))
            }
            LifecycleEvent::PowerOn { .. } if *slot => {
                return Err(SimError::Schedule(format!(
                    "node {n} powered on at t={t} s without being powered off"
                )))
            }
            LifecycleEvent::PowerOff { .. } => *slot = false,
            LifecycleEvent::PowerOn { .. } => *slot = true,
            LifecycleEvent::FreqStep { ppm, .. } if !(ppm.abs() < 1e6) => {
                return Err(SimError::Schedule(format!(
                    "frequency step of {ppm} ppm on node {n} is not physical"
                )))
            }
            LifecycleEvent::FreqStep { .. } => {}
        }
    }
    Ok(Schedule { events: sorted })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClockSetup {
    /// Each node's frequency offset is uniform on `±drift_ppm`.
    pub drift_ppm: f64,
    /// Fixed per-node offsets in ppm, overriding the random draw.
    pub drifts_ppm: Option<Vec<f64>>,
    pub jitter: JitterModel,
}

impl Default for ClockSetup {
    fn default() -> Self {
        ClockSetup {
            drift_ppm: 50.0,
            drifts_ppm: None,
            jitter: JitterModel::uniform_with_std(0.1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartTimes {
    /// Uniform on `[0, max]`.
    Staggered { max: f64 },
    Explicit(Vec<f64>),
}

impl Default for StartTimes {
    fn default() -> Self {
        StartTimes::Staggered { max: 120.0 }
    }
}

/// Everything [`run`] needs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub topology: Topology,
    pub protocol: String,
    pub params: ProtocolParams,
    pub clocks: ClockSetup,
    pub channel: ChannelModel,
    pub schedule: Schedule,
    pub start: StartTimes,
    /// Listen-only time after a scheduled power-on, in beacon periods.
    pub warmup_periods: f64,
    pub duration: f64,
    pub sample_interval: f64,
    pub seed: u64,
    /// Hardware reads return whole ticks.
    pub tick_quantization: bool,
    /// Keep per-node records at every sample.
    pub record_nodes: bool,
}

impl Scenario {
    /// Defaults for `B = 30 s`, `f̂ = 1 MHz`, parameters designed for a
    /// ±100 ppm rating and node offsets drawn on ±50 ppm.
    pub fn new(topology: Topology, protocol: &str) -> Self {
        Scenario {
            topology,
            protocol: protocol.to_string(),
            params: ProtocolParams::with_defaults(30.0, 1e6, 100.0),
            clocks: ClockSetup::default(),
            channel: ChannelModel::default(),
            schedule: Schedule::empty(),
            start: StartTimes::default(),
            warmup_periods: 3.0,
            duration: 3600.0,
            sample_interval: 30.0,
            seed: 0,
            tick_quantization: true,
            record_nodes: true,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return bad(format!("duration must be non-negative, got {}", self.duration));
        }
        if !(self.sample_interval > 0.0) {
            return bad(format!(
                "sample interval must be positive, got {}",
                self.sample_interval
            ));
        }
        if !(self.warmup_periods >= 0.0) {
            return bad(format!(
                "warm-up must be non-negative, got {}",
                self.warmup_periods
            ));
        }
        let n = self.topology.node_count() as usize;
        if let Some(d) = &self.clocks.drifts_ppm {
            if d.len() != n {
                return bad(format!("{} drift values for {n} nodes", d.len()));
            }
        }
        if !(self.clocks.drift_ppm >= 0.0 && self.clocks.drift_ppm < 1e6) {
            return bad(format!("drift bound {} ppm is not physical", self.clocks.drift_ppm));
        }
        match &self.start {
            StartTimes::Explicit(v) if v.len() != n => {
                return bad(format!("{} start times for {n} nodes", v.len()))
            }
            StartTimes::Explicit(v) if v.iter().any(|t| !(*t >= 0.0)) => {
                return bad("start times must be non-negative".into())
            }
            StartTimes::Staggered { max } if !(*max >= 0.0) => {
                return bad(format!("start stagger must be non-negative, got {max}"))
            }
            _ => {}
        }
        if self.params.reference.0 == 0 || self.params.reference.0 > self.topology.node_count() {
            return bad(format!(
                "reference node {} is not in the topology",
                self.params.reference
            ));
        }
        self.channel.validate()?;
        self.params.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Power {
    Pending,
    On,
    Off,
}

struct Node {
    id: NodeId,
    clock: HardwareClock,
    protocol: Option<Box<dyn SyncProtocol>>,
    power: Power,
    /// Invalidates queued beacons.
    beacon_epoch: u64,
    /// Invalidates queued relays across power cycles.
    life: u64,
    next_beacon: u64,
    warmup_until: f64,
    clamps_retired: u64,
}

struct Engine<'a> {
    sc: &'a Scenario,
    factory: &'a dyn ProtocolFactory,
    nodes: Vec<Node>,
    queue: EventQueue,
    rng: ChaCha8Rng,
    trace: TraceLog,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Runs one scenario to completion.
pub fn run(sc: &Scenario, registry: &ProtocolRegistry) -> Result<TraceLog, SimError> {
    sc.validate()?;
    let factory = registry.get(&sc.protocol)?;
    let mut engine = Engine::new(sc, factory)?;
    engine.run()?;
    Ok(engine.trace)
}

impl<'a> Engine<'a> {
    fn new(sc: &'a Scenario, factory: &'a dyn ProtocolFactory) -> Result<Self, SimError> {
        let mut rng = stream_rng(sc.seed, 0);
        let f_nom = sc.params.nominal_freq;
        let n = sc.topology.node_count() as usize;
        let mut trace = TraceLog::default();
        if !sc.topology.is_strongly_connected() {
            trace
                .warnings
                .push("topology is not strongly connected".to_string());
        }

        let drifts: Vec<f64> = match &sc.clocks.drifts_ppm {
            Some(d) => d.clone(),
            None => (0..n)
                .map(|_| {
                    let b = sc.clocks.drift_ppm;
                    if b > 0.0 {
                        rng.random_range(-b..=b)
                    } else {
                        0.0
                    }
                })
                .collect(),
        };
        let starts: Vec<f64> = match &sc.start {
            StartTimes::Explicit(v) => v.clone(),
            StartTimes::Staggered { max } => (0..n)
                .map(|_| if *max > 0.0 { rng.random_range(0.0..=*max) } else { 0.0 })
                .collect(),
        };

        let mut nodes = Vec::with_capacity(n);
        for (i, &ppm) in drifts.iter().enumerate() {
            let clock = HardwareClock::new(
                f_nom,
                f_nom * (1.0 + ppm * 1e-6),
                sc.clocks.jitter,
                sc.params.beacon_period,
                stream_rng(sc.seed, i as u64 + 1),
            )?;
            trace.true_freqs.push(clock.true_freq());
            nodes.push(Node {
                id: NodeId::from_index(i),
                clock,
                protocol: None,
                power: Power::Pending,
                beacon_epoch: 0,
                life: 0,
                next_beacon: 1,
                warmup_until: 0.0,
                clamps_retired: 0,
            });
        }
        trace.start_times = starts.clone();

        let mut queue = EventQueue::new();
        queue.push(0.0, EventKind::Sample);
        for (i, &t) in starts.iter().enumerate() {
            if t <= sc.duration {
                queue.push(
                    t,
                    EventKind::PowerOn {
                        node: NodeId::from_index(i),
                        initial: true,
                    },
                );
            }
        }
        for ev in sc.schedule.events() {
            let node = NodeId(ev.node());
            let kind = match *ev {
                LifecycleEvent::PowerOff { .. } => EventKind::PowerOff { node },
                LifecycleEvent::PowerOn { .. } => EventKind::PowerOn {
                    node,
                    initial: false,
                },
                LifecycleEvent::FreqStep { ppm, .. } => EventKind::FreqStep {
                    node,
                    new_freq: f_nom * (1.0 + ppm * 1e-6),
                },
            };
            queue.push(ev.time(), kind);
        }

        Ok(Engine {
            sc,
            factory,
            nodes,
            queue,
            rng,
            trace,
        })
    }

    fn run(&mut self) -> Result<(), SimError> {
        while self
            .queue
            .peek_time()
            .is_some_and(|t| t <= self.sc.duration)
        {
            let ev = self.queue.pop().expect("peeked");
            self.dispatch(ev)?;
        }
        let queue = std::mem::take(&mut self.queue);
        self.trace.counters.in_flight = queue
            .drain()
            .filter(|e| matches!(e.kind, EventKind::Deliver { .. }))
            .count() as u64;
        self.trace.counters.rate_clamps = self
            .nodes
            .iter()
            .map(|n| n.clamps_retired + n.protocol.as_ref().map_or(0, |p| p.rate_clamps()))
            .sum();
        Ok(())
    }

    fn ticks(&mut self, idx: usize, t: f64) -> Result<f64, SimError> {
        let clock = &mut self.nodes[idx].clock;
        Ok(if self.sc.tick_quantization {
            clock.read(t)? as f64
        } else {
            clock.read_continuous(t)?
        })
    }

    fn schedule_beacon(&mut self, idx: usize) {
        let period_ticks = self.sc.params.beacon_period * self.sc.params.nominal_freq;
        let node = &mut self.nodes[idx];
        let at = node.clock.time_of_ticks(node.next_beacon as f64 * period_ticks);
        let kind = EventKind::Beacon {
            node: node.id,
            epoch: node.beacon_epoch,
        };
        self.queue.push(at, kind);
    }

    fn dispatch(&mut self, ev: SimEvent) -> Result<(), SimError> {
        let now = ev.time;
        match ev.kind {
            EventKind::Sample => {
                self.sample(now)?;
                let next = now + self.sc.sample_interval;
                if next <= self.sc.duration {
                    self.queue.push(next, EventKind::Sample);
                }
            }
            EventKind::PowerOn { node, initial } => self.power_on(node.index(), now, initial)?,
            EventKind::PowerOff { node } => {
                let n = &mut self.nodes[node.index()];
                if let Some(p) = n.protocol.take() {
                    n.clamps_retired += p.rate_clamps();
                }
                n.power = Power::Off;
                n.beacon_epoch += 1;
                n.life += 1;
            }
            EventKind::FreqStep { node, new_freq } => {
                let idx = node.index();
                let n = &mut self.nodes[idx];
                n.clock.set_true_freq(now, new_freq)?;
                if n.power == Power::On {
                    n.beacon_epoch += 1;
                    self.schedule_beacon(idx);
                }
            }
            EventKind::Beacon { node, epoch } => {
                let idx = node.index();
                if self.nodes[idx].power != Power::On || self.nodes[idx].beacon_epoch != epoch {
                    return Ok(());
                }
                let ticks = self.ticks(idx, now)?;
                self.trace.counters.beacons += 1;
                let reaction = self.protocol_mut(idx)?.on_beacon(ticks)?;
                self.react(idx, now, ticks, reaction)?;
                self.nodes[idx].next_beacon += 1;
                self.schedule_beacon(idx);
            }
            EventKind::Transmit { node, life } => {
                let idx = node.index();
                if self.nodes[idx].power == Power::On && self.nodes[idx].life == life {
                    let ticks = self.ticks(idx, now)?;
                    self.transmit(idx, now, ticks)?;
                }
            }
            EventKind::Deliver { to, message } => {
                let idx = to.index();
                if self.nodes[idx].power != Power::On {
                    self.trace.counters.undeliverable += 1;
                    return Ok(());
                }
                self.trace.counters.delivered += 1;
                let ticks = self.ticks(idx, now)?;
                let reaction = self.protocol_mut(idx)?.on_receive(&message.payload, ticks)?;
                self.react(idx, now, ticks, reaction)?;
            }
        }
        Ok(())
    }

    fn protocol_mut(&mut self, idx: usize) -> Result<&mut Box<dyn SyncProtocol>, SimError> {
        let id = self.nodes[idx].id;
        self.nodes[idx].protocol.as_mut().ok_or_else(|| {
            SimError::InvalidConfig(format!("node {id} has no protocol state while on"))
        })
    }

    fn power_on(&mut self, idx: usize, now: f64, initial: bool) -> Result<(), SimError> {
        // An initial start for a node already switched off by the schedule
        // is skipped; the scheduled power-on brings it up.
        if initial && self.nodes[idx].power != Power::Pending {
            return Ok(());
        }
        let n = &mut self.nodes[idx];
        let ctx = NodeContext {
            id: n.id,
            is_reference: self.factory.uses_reference() && n.id == self.sc.params.reference,
        };
        n.protocol = Some(self.factory.create(ctx, &self.sc.params)?);
        n.clock.restart(now);
        n.power = Power::On;
        n.beacon_epoch += 1;
        n.life += 1;
        n.next_beacon = 1;
        n.warmup_until = if initial {
            now
        } else {
            now + self.sc.warmup_periods * self.sc.params.beacon_period
        };
        self.schedule_beacon(idx);
        Ok(())
    }

    fn react(&mut self, idx: usize, now: f64, ticks: f64, reaction: Reaction) -> Result<(), SimError> {
        match reaction {
            Reaction::Quiet => {}
            Reaction::Broadcast => self.transmit(idx, now, ticks)?,
            Reaction::ForwardAfter(delay) => {
                let n = &self.nodes[idx];
                let kind = EventKind::Transmit {
                    node: n.id,
                    life: n.life,
                };
                self.queue.push(now + delay, kind);
            }
        }
        Ok(())
    }

    fn transmit(&mut self, idx: usize, now: f64, ticks: f64) -> Result<(), SimError> {
        if now < self.nodes[idx].warmup_until {
            return Ok(());
        }
        let sender = self.nodes[idx].id;
        let payload = self.protocol_mut(idx)?.payload(ticks)?;
        let sc = self.sc;
        for &to in sc.topology.out_neighbors(sender) {
            self.trace.counters.sent += 1;
            match sc.channel.sample(&mut self.rng) {
                Link::Lost => self.trace.counters.lost += 1,
                Link::Delivered { delay, noise } => {
                    let message = SyncMessage {
                        payload: Payload {
                            time_estimate: payload.time_estimate + noise,
                            seq: payload.seq,
                        },
                        sender,
                    };
                    self.queue.push(now + delay, EventKind::Deliver { to, message });
                }
            }
        }
        Ok(())
    }

    fn sample(&mut self, now: f64) -> Result<(), SimError> {
        let mut snapshot = Vec::with_capacity(self.nodes.len());
        for idx in 0..self.nodes.len() {
            if self.nodes[idx].power != Power::On {
                continue;
            }
            let ticks = self.ticks(idx, now)?;
            let node = &self.nodes[idx];
            let proto = node.protocol.as_ref().expect("powered node has protocol");
            let obs = proto.observe(ticks)?;
            snapshot.push((node.id, obs.t_hat));
            if self.sc.record_nodes {
                self.trace.nodes.push(NodeRecord {
                    time: now,
                    node: node.id,
                    obs,
                });
            }
        }
        self.trace
            .metrics
            .push(compute_metrics(now, &snapshot, &self.sc.topology));
        Ok(())
    }
}
