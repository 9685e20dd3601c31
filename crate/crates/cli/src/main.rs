use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pisync::analysis::{optimal_alpha, NoiseSpec};
use pisync::experiment::{eig_table, run_config_text, sweep_table, variance_table, write_results};
use pisync::metrics::compute_metrics;
use pisync::netsim::{read_nodes_csv, TraceLog};
use pisync::{NodeId, ProtocolRegistry, Topology};

#[derive(Parser)]
#[command(name = "pisync", version, about = "PI clock synchronization simulator and analysis tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write CSV results.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `a..b` (inclusive) or a comma list; overrides the config's seeds.
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Closed-form tables of the pairwise error dynamics.
    Analyze {
        #[command(subcommand)]
        table: AnalyzeCmd,
    },
    /// Recompute skew metrics from a node trace.
    Metrics {
        trace: PathBuf,
        /// Topology the trace was recorded on, e.g. `line:20`.
        #[arg(long)]
        topology: String,
    },
    /// List registered protocols.
    Protocols,
}

#[derive(Args)]
struct Plant {
    /// Beacon period B, seconds.
    #[arg(long, default_value_t = 30.0)]
    period: f64,
    /// Oscillator frequency, ticks/s.
    #[arg(long, default_value_t = 1e6)]
    freq: f64,
}

#[derive(Args)]
struct AlphaGrid {
    /// Explicit integral gains; overrides the scaled grid.
    #[arg(long, value_delimiter = ',')]
    alphas: Vec<f64>,
    /// Largest `alpha·f·B` on the default grid.
    #[arg(long, default_value_t = 2.5)]
    max_scaled: f64,
    /// Points on the default grid.
    #[arg(long, default_value_t = 50)]
    points: usize,
}

impl AlphaGrid {
    fn values(&self, plant: &Plant) -> Vec<f64> {
        if !self.alphas.is_empty() {
            return self.alphas.clone();
        }
        let unit = 1.0 / (plant.freq * plant.period);
        (1..=self.points)
            .map(|k| unit * self.max_scaled * k as f64 / self.points as f64)
            .collect()
    }
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Eigenvalues for one (beta, alpha).
    Eig {
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        /// Defaults to the deadbeat gain for `beta`.
        #[arg(long)]
        alpha: Option<f64>,
        #[command(flatten)]
        plant: Plant,
    },
    /// Spectral radius and rounds to 90% decay over a range of alpha.
    Sweep {
        #[arg(long, default_value_t = 1.0)]
        beta: f64,
        #[command(flatten)]
        plant: Plant,
        #[command(flatten)]
        grid: AlphaGrid,
    },
    /// Steady-state mean-square error over a range of alpha (beta = 1).
    Variance {
        /// Timestamp noise standard deviation in ticks (`sigma_v·f`).
        #[arg(long, default_value_t = 1.0)]
        eta_t: f64,
        /// Frequency jitter standard deviation relative to `f` (`sigma_w/f`).
        #[arg(long, default_value_t = 1e-7)]
        eta_w: f64,
        #[command(flatten)]
        plant: Plant,
        #[command(flatten)]
        grid: AlphaGrid,
    },
}

fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().with_context(|| format!("bad seed range start {a:?}"))?;
        let b: u64 = b.trim().parse().with_context(|| format!("bad seed range end {b:?}"))?;
        if b < a {
            bail!("empty seed range {text}");
        }
        return Ok((a..=b).collect());
    }
    text.split(',')
        .map(|s| s.trim().parse().with_context(|| format!("bad seed {s:?}")))
        .collect()
}

fn run_cmd(config: PathBuf, out: PathBuf, seeds: Option<String>) -> Result<()> {
    let text = fs::read_to_string(&config)
        .with_context(|| format!("reading {}", config.display()))?;
    let seeds = seeds.as_deref().map(parse_seeds).transpose()?;
    let registry = ProtocolRegistry::with_builtins();
    let results = run_config_text(&text, seeds.as_deref(), &registry)
        .with_context(|| format!("running {}", config.display()))?;
    write_results(&out, &results)?;
    for res in &results {
        for run in &res.runs {
            for w in &run.trace.warnings {
                eprintln!("warning [{} seed {}]: {w}", res.label, run.seed);
            }
        }
    }
    let n: usize = results.iter().map(|r| r.runs.len()).sum();
    eprintln!("wrote {n} run(s) to {}", out.display());
    Ok(())
}

fn metrics_cmd(trace: PathBuf, topology: &str) -> Result<()> {
    let topo = Topology::parse_spec(topology)?;
    let file = fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?;
    let rows = read_nodes_csv(file)?;
    let mut log = TraceLog::default();
    let mut i = 0;
    while i < rows.len() {
        let time = rows[i].time_s;
        let mut snapshot = Vec::new();
        while i < rows.len() && rows[i].time_s == time {
            let id = rows[i].node_id;
            if id == 0 || id > topo.node_count() {
                bail!("node {id} is not in topology {topology}");
            }
            snapshot.push((NodeId(id), rows[i].t_hat_s));
            i += 1;
        }
        log.metrics.push(compute_metrics(time, &snapshot, &topo));
    }
    log.write_metrics_csv(io::stdout().lock())?;
    Ok(())
}

fn analyze_cmd(table: AnalyzeCmd) -> Result<()> {
    let out = io::stdout().lock();
    match table {
        AnalyzeCmd::Eig { beta, alpha, plant } => {
            let alpha = alpha.unwrap_or_else(|| optimal_alpha(beta, plant.period, plant.freq).0);
            eig_table(out, beta, alpha, plant.period, plant.freq)?;
        }
        AnalyzeCmd::Sweep { beta, plant, grid } => {
            sweep_table(out, beta, plant.period, plant.freq, &grid.values(&plant))?;
        }
        AnalyzeCmd::Variance {
            eta_t,
            eta_w,
            plant,
            grid,
        } => {
            let noise = NoiseSpec::from_etas(eta_t, eta_w, plant.freq)?;
            variance_table(out, plant.period, plant.freq, &noise, &grid.values(&plant))?;
        }
    }
    Ok(())
}

fn protocols_cmd() -> Result<()> {
    let registry = ProtocolRegistry::with_builtins();
    let mut out = io::stdout().lock();
    for p in registry.iter() {
        writeln!(out, "{:<14} {}", p.name(), p.description())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, out, seeds } => run_cmd(config, out, seeds),
        Command::Analyze { table } => analyze_cmd(table),
        Command::Metrics { trace, topology } => metrics_cmd(trace, &topology),
        Command::Protocols => protocols_cmd(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
