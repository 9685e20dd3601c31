//! TOML experiment files.
//!
//! ```toml
//! [experiment]
//! name = "line20"
//! duration = 20000.0
//! seeds = [1, 2, 3]
//!
//! [topology]
//! spec = "line:20"
//!
//! [protocol]
//! name = "flood-pisync"
//!
//! [[lifecycle]]
//! event = "power-off"
//! time = 5000.0
//! node = 3
//!
//! [sweep]
//! key = "protocol.alpha_max"
//! values = [3.33e-9, 3.33e-8, 3.33e-7]
//! ```
//!
//! Every section except `[topology]` and `[protocol]` is optional; missing
//! fields take the defaults documented on each struct.

use serde::Deserialize;
use thiserror::Error;

use crate::clock::JitterModel;
use crate::netsim::{
    schedule_lifecycle, ChannelModel, ClockSetup, DelayJitter, LifecycleEvent, Scenario, SimError,
    StartTimes,
};
use crate::pi::GainSchedule;
use crate::protocols::{LsAnchor, ProtocolParams};
use crate::topology::{NodeId, Topology, TopologyError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config error in [{section}]: {message}")]
    Invalid { section: &'static str, message: String },
    #[error("config error in [topology]: {0}")]
    Topology(#[from] TopologyError),
    #[error("config error: {0}")]
    Sim(#[from] SimError),
    #[error("sweep: {0}")]
    Sweep(String),
}

fn invalid(section: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        section,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub topology: TopologySection,
    #[serde(default)]
    pub clock: ClockSection,
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub lifecycle: Vec<LifecycleEvent>,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub name: String,
    /// Simulated seconds.
    pub duration: f64,
    pub sample_interval: f64,
    pub seeds: Vec<u64>,
    pub tick_quantization: bool,
    pub record_nodes: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            name: "experiment".into(),
            duration: 20_000.0,
            sample_interval: 30.0,
            seeds: vec![1],
            tick_quantization: true,
            record_nodes: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    /// `line:N`, `grid:RxC`, `grid-diameter:D`, `complete:N`, or `custom`.
    pub spec: String,
    /// Node count for `custom`.
    pub nodes: Option<u32>,
    /// Directed edges `[from, to]` for `custom`.
    #[serde(default)]
    pub edges: Vec<[u32; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JitterKind {
    None,
    #[default]
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClockSection {
    pub nominal_freq: f64,
    /// Rated oscillator tolerance; sets the default `e_max`.
    pub drift_bound_ppm: f64,
    /// Node offsets are drawn uniformly on `±drift_ppm`.
    pub drift_ppm: f64,
    pub drifts_ppm: Option<Vec<f64>>,
    pub jitter: JitterKind,
    /// Standard deviation of the per-period frequency jitter, ticks/s.
    pub jitter_std: f64,
    /// Nodes power up uniformly within this many seconds.
    pub start_stagger: f64,
    pub start_times: Option<Vec<f64>>,
}

impl Default for ClockSection {
    fn default() -> Self {
        ClockSection {
            nominal_freq: 1e6,
            drift_bound_ppm: 100.0,
            drift_ppm: 50.0,
            drifts_ppm: None,
            jitter: JitterKind::Uniform,
            jitter_std: 0.1,
            start_stagger: 120.0,
            start_times: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    pub name: String,
    #[serde(default = "default_beacon_period")]
    pub beacon_period: f64,
    #[serde(default = "one")]
    pub beta: f64,
    /// Defaults to `1/(f̂·B)`.
    pub alpha_max: Option<f64>,
    /// Defaults to `2·drift_bound·B`.
    pub e_max: Option<f64>,
    #[serde(default)]
    pub schedule: GainSchedule,
    #[serde(default = "default_table_size")]
    pub table_size: usize,
    #[serde(default = "default_forward_delay")]
    pub forward_delay: f64,
    #[serde(default)]
    pub mean_delay_estimate: f64,
    #[serde(default = "one_u32")]
    pub reference: u32,
    #[serde(default = "default_warmup")]
    pub warmup_periods: f64,
    #[serde(default)]
    pub ls_anchor: LsAnchor,
    pub ls_throwout: Option<f64>,
}

fn default_beacon_period() -> f64 {
    30.0
}
fn one() -> f64 {
    1.0
}
fn one_u32() -> u32 {
    1
}
fn default_table_size() -> usize {
    8
}
fn default_forward_delay() -> f64 {
    0.003
}
fn default_warmup() -> f64 {
    3.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DelayJitterKind {
    #[default]
    None,
    Uniform,
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSection {
    pub mean_delay: f64,
    pub delay_jitter: DelayJitterKind,
    /// Half-width (uniform) or mean (exponential), seconds.
    pub delay_jitter_param: f64,
    pub loss: f64,
    pub timestamp_noise: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let ch = ChannelModel::default();
        ChannelSection {
            mean_delay: ch.mean_delay,
            delay_jitter: DelayJitterKind::None,
            delay_jitter_param: 0.0,
            loss: ch.loss,
            timestamp_noise: ch.timestamp_noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Dotted path such as `protocol.alpha_max` or `topology.spec`.
    pub key: String,
    pub values: Vec<toml::Value>,
}

/// One point of a sweep: a label and the config it produces.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub config: ExperimentConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let e = &self.experiment;
        if e.seeds.is_empty() {
            return Err(invalid("experiment", "at least one seed is required"));
        }
        if !(e.duration >= 0.0) {
            return Err(invalid("experiment", "duration must be non-negative"));
        }
        if !(e.sample_interval > 0.0) {
            return Err(invalid("experiment", "sample_interval must be positive"));
        }
        if !(self.clock.jitter_std >= 0.0) {
            return Err(invalid("clock", "jitter_std must be non-negative"));
        }
        // Builds the first scenario to surface topology, protocol and
        // lifecycle problems at load time.
        self.scenario(e.seeds[0])?;
        Ok(())
    }

    pub fn topology(&self) -> Result<Topology, ConfigError> {
        let t = &self.topology;
        if t.spec == "custom" {
            let n = t
                .nodes
                .ok_or_else(|| invalid("topology", "custom topology needs `nodes`"))?;
            return Ok(Topology::from_edges(n, t.edges.iter().map(|e| (e[0], e[1])))?);
        }
        if !t.edges.is_empty() || t.nodes.is_some() {
            return Err(invalid(
                "topology",
                "`nodes`/`edges` are only allowed with spec = \"custom\"",
            ));
        }
        Ok(Topology::parse_spec(&t.spec)?)
    }

    pub fn protocol_params(&self) -> ProtocolParams {
        let p = &self.protocol;
        let f = self.clock.nominal_freq;
        let mut params = ProtocolParams::with_defaults(p.beacon_period, f, self.clock.drift_bound_ppm);
        params.beta = p.beta;
        if let Some(a) = p.alpha_max {
            params.alpha_max = a;
        }
        if let Some(e) = p.e_max {
            params.e_max = e;
        }
        params.schedule = p.schedule;
        params.table_size = p.table_size;
        params.forward_delay = p.forward_delay;
        params.mean_delay_estimate = p.mean_delay_estimate;
        params.reference = NodeId(p.reference);
        params.ls_anchor = p.ls_anchor;
        params.ls_throwout = p.ls_throwout;
        params
    }

    /// The simulation for one seed.
    pub fn scenario(&self, seed: u64) -> Result<Scenario, ConfigError> {
        let topology = self.topology()?;
        let c = &self.clock;
        let ch = &self.channel;
        let jitter = match c.jitter {
            JitterKind::None => JitterModel::None,
            JitterKind::Uniform => JitterModel::uniform_with_std(c.jitter_std),
            JitterKind::Gaussian => JitterModel::Gaussian {
                std_dev: c.jitter_std,
            },
        };
        let delay_jitter = match ch.delay_jitter {
            DelayJitterKind::None => DelayJitter::None,
            DelayJitterKind::Uniform => DelayJitter::Uniform {
                half_width: ch.delay_jitter_param,
            },
            DelayJitterKind::Exponential => DelayJitter::Exponential {
                mean: ch.delay_jitter_param,
            },
        };
        let schedule = schedule_lifecycle(
            &self.lifecycle,
            topology.node_count(),
            self.experiment.duration,
        )?;
        let mut sc = Scenario::new(topology, &self.protocol.name);
        sc.params = self.protocol_params();
        sc.clocks = ClockSetup {
            drift_ppm: c.drift_ppm,
            drifts_ppm: c.drifts_ppm.clone(),
            jitter,
        };
        sc.channel = ChannelModel {
            mean_delay: ch.mean_delay,
            delay_jitter,
            loss: ch.loss,
            timestamp_noise: ch.timestamp_noise,
        };
        sc.schedule = schedule;
        sc.start = match &c.start_times {
            Some(v) => StartTimes::Explicit(v.clone()),
            None => StartTimes::Staggered {
                max: c.start_stagger,
            },
        };
        sc.warmup_periods = self.protocol.warmup_periods;
        sc.duration = self.experiment.duration;
        sc.sample_interval = self.experiment.sample_interval;
        sc.seed = seed;
        sc.tick_quantization = self.experiment.tick_quantization;
        sc.record_nodes = self.experiment.record_nodes;
        sc.channel.validate()?;
        sc.params.validate().map_err(SimError::from)?;
        Ok(sc)
    }
}

/// Expands a `[sweep]` section into one config per value. A config without
/// a sweep yields itself under the label `base`.
pub fn expand_sweep(text: &str) -> Result<Vec<Variant>, ConfigError> {
    let base = ExperimentConfig::parse(text)?;
    let Some(sweep) = base.sweep.clone() else {
        return Ok(vec![Variant {
            label: "base".into(),
            config: base,
        }]);
    };
    if sweep.values.is_empty() {
        return Err(ConfigError::Sweep("`values` is empty".into()));
    }
    let table: toml::Table = text.parse()?;
    sweep
        .values
        .iter()
        .map(|value| {
            let mut t = table.clone();
            t.remove("sweep");
            set_dotted(&mut t, &sweep.key, value.clone())?;
            let text = toml::to_string(&t).map_err(|e| ConfigError::Sweep(e.to_string()))?;
            let config = ExperimentConfig::parse(&text)?;
            Ok(Variant {
                label: format!("{}={}", sweep.key, display_value(value)),
                config,
            })
        })
        .collect()
}

fn display_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        toml::Value::Float(x) if *x != 0.0 && (x.abs() < 1e-3 || x.abs() >= 1e6) => format!("{x:e}"),
        toml::Value::Float(x) => format!("{x}"),
        other => other.to_string(),
    }
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ConfigError::Sweep(format!("bad key {key:?}")))?;
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| ConfigError::Sweep(format!("{p:?} in {key:?} is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
