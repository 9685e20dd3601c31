//! Experiment recipes: config files, parallel runs over seeds, summaries,
//! CSV output and closed-form analysis tables.

mod config;
mod summary;
mod tables;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::netsim::{run, SimError, TraceLog};
use crate::protocols::ProtocolRegistry;

pub use config::{
    expand_sweep, ChannelSection, ClockSection, ConfigError, DelayJitterKind, ExperimentConfig,
    ExperimentSection, JitterKind, ProtocolSection, SweepSection, TopologySection, Variant,
};
pub use summary::{convergence_index, summarize, write_summary_csv, SummaryRow};
pub use tables::{eig_table, sweep_table, variance_table, TableError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("seed {seed}: {source}")]
    Run { seed: u64, source: SimError },
    #[error("writing {path}: {source}")]
    Write { path: PathBuf, source: SimError },
}

/// One seed's trace and summary.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub trace: TraceLog,
    pub summary: SummaryRow,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub label: String,
    pub runs: Vec<SeedResult>,
}

/// Runs every seed of one config in parallel. Results come back in seed
/// order whatever the scheduling.
pub fn run_experiment(
    config: &ExperimentConfig,
    seeds: &[u64],
    registry: &ProtocolRegistry,
    label: &str,
) -> Result<ExperimentResult, ExperimentError> {
    let scenarios = seeds
        .iter()
        .map(|&s| config.scenario(s).map(|sc| (s, sc)))
        .collect::<Result<Vec<_>, _>>()?;
    let topology_label = config.topology.spec.clone();
    let runs = scenarios
        .par_iter()
        .map(|(seed, sc)| {
            let trace = run(sc, registry).map_err(|source| ExperimentError::Run {
                seed: *seed,
                source,
            })?;
            let summary = summarize(&config.protocol.name, &topology_label, *seed, &trace);
            Ok(SeedResult {
                seed: *seed,
                trace,
                summary,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(ExperimentResult {
        label: label.to_string(),
        runs,
    })
}

/// Runs all sweep variants (or the single base config).
pub fn run_config_text(
    text: &str,
    seeds: Option<&[u64]>,
    registry: &ProtocolRegistry,
) -> Result<Vec<ExperimentResult>, ExperimentError> {
    let variants = expand_sweep(text)?;
    variants
        .iter()
        .map(|v| {
            let seeds = seeds.unwrap_or(&v.config.experiment.seeds);
            run_experiment(&v.config, seeds, registry, &v.label)
        })
        .collect()
}

fn write_file(
    path: PathBuf,
    f: impl FnOnce(fs::File) -> Result<(), SimError>,
) -> Result<(), ExperimentError> {
    let file = fs::File::create(&path).map_err(|e| ExperimentError::Write {
        path: path.clone(),
        source: e.into(),
    })?;
    f(file).map_err(|source| ExperimentError::Write { path, source })
}

/// File-system safe directory name for a variant label.
pub fn variant_dir_name(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '.' | '=' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes `metrics_seed{N}.csv`, `nodes_seed{N}.csv` and `summary.csv`
/// into `dir`; sweeps get one subdirectory per variant plus a combined
/// `summary.csv` with a leading `variant` column.
pub fn write_results(dir: &Path, results: &[ExperimentResult]) -> Result<(), ExperimentError> {
    let mk = |p: &Path| {
        fs::create_dir_all(p).map_err(|e| ExperimentError::Write {
            path: p.to_path_buf(),
            source: e.into(),
        })
    };
    mk(dir)?;
    let single = results.len() == 1 && results[0].label == "base";
    for res in results {
        let sub = if single {
            dir.to_path_buf()
        } else {
            dir.join(variant_dir_name(&res.label))
        };
        mk(&sub)?;
        for r in &res.runs {
            write_file(sub.join(format!("metrics_seed{}.csv", r.seed)), |f| {
                r.trace.write_metrics_csv(f)
            })?;
            write_file(sub.join(format!("nodes_seed{}.csv", r.seed)), |f| {
                r.trace.write_nodes_csv(f)
            })?;
        }
        let rows: Vec<SummaryRow> = res.runs.iter().map(|r| r.summary.clone()).collect();
        write_file(sub.join("summary.csv"), |f| write_summary_csv(f, &rows, None))?;
    }
    if !single {
        write_file(dir.join("summary.csv"), |f| {
            let labelled: Vec<(String, SummaryRow)> = results
                .iter()
                .flat_map(|res| {
                    res.runs
                        .iter()
                        .map(|r| (res.label.clone(), r.summary.clone()))
                })
                .collect();
            summary::write_labelled_summary_csv(f, &labelled)
        })?;
    }
    Ok(())
}
