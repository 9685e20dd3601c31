use std::io::Write;

use serde::Serialize;

use crate::metrics::MetricsSample;
use crate::netsim::{SimError, TraceLog};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub protocol: String,
    pub topology: String,
    pub seed: u64,
    pub max_global_us: f64,
    pub max_avg_global_us: f64,
    pub max_local_us: f64,
    pub max_avg_local_us: f64,
    /// `None` when the detector finds no settled suffix.
    pub convergence_s: Option<f64>,
}

/// Index of the first sample after which AGS stays below twice its mean
/// over the final quarter of the run. Degenerate samples are skipped.
pub fn convergence_index(samples: &[MetricsSample]) -> Option<usize> {
    let valid: Vec<usize> = (0..samples.len())
        .filter(|&i| !samples[i].degenerate)
        .collect();
    if valid.is_empty() {
        return None;
    }
    let window = (valid.len() / 4).max(1);
    let tail = &valid[valid.len() - window..];
    let mean = tail.iter().map(|&i| samples[i].ags).sum::<f64>() / window as f64;
    let threshold = 2.0 * mean;
    let settled = |i: usize| {
        let a = samples[i].ags;
        a < threshold || (threshold == 0.0 && a == 0.0)
    };
    let mut first = None;
    for &i in valid.iter().rev() {
        if settled(i) {
            first = Some(i);
        } else {
            break;
        }
    }
    first
}

pub fn summarize(protocol: &str, topology: &str, seed: u64, trace: &TraceLog) -> SummaryRow {
    let idx = convergence_index(&trace.metrics);
    let post: Vec<&MetricsSample> = match idx {
        Some(i) => trace.metrics[i..].iter().filter(|m| !m.degenerate).collect(),
        None => Vec::new(),
    };
    let max_of = |f: fn(&MetricsSample) -> f64| {
        post.iter().map(|m| f(m)).fold(f64::NAN, f64::max) * 1e6
    };
    SummaryRow {
        protocol: protocol.to_string(),
        topology: topology.to_string(),
        seed,
        max_global_us: max_of(|m| m.mgs),
        max_avg_global_us: max_of(|m| m.ags),
        max_local_us: max_of(|m| m.mls),
        max_avg_local_us: max_of(|m| m.als),
        convergence_s: idx.map(|i| trace.metrics[i].time),
    }
}

fn fmt_us(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.3}")
    }
}

fn row_fields(r: &SummaryRow) -> Vec<String> {
    vec![
        r.protocol.clone(),
        r.topology.clone(),
        r.seed.to_string(),
        fmt_us(r.max_global_us),
        fmt_us(r.max_avg_global_us),
        fmt_us(r.max_local_us),
        fmt_us(r.max_avg_local_us),
        r.convergence_s.map(|c| format!("{c}")).unwrap_or_default(),
    ]
}

const HEADER: [&str; 8] = [
    "protocol",
    "topology",
    "seed",
    "max_global_us",
    "max_avg_global_us",
    "max_local_us",
    "max_avg_local_us",
    "convergence_s",
];

/// `label` adds a leading `variant` column with that value.
pub fn write_summary_csv<W: Write>(
    out: W,
    rows: &[SummaryRow],
    label: Option<&str>,
) -> Result<(), SimError> {
    let labelled: Vec<(String, SummaryRow)> = rows
        .iter()
        .map(|r| (label.unwrap_or_default().to_string(), r.clone()))
        .collect();
    write_rows(out, &labelled, label.is_some())
}

pub(crate) fn write_labelled_summary_csv<W: Write>(
    out: W,
    rows: &[(String, SummaryRow)],
) -> Result<(), SimError> {
    write_rows(out, rows, true)
}

fn write_rows<W: Write>(
    out: W,
    rows: &[(String, SummaryRow)],
    with_label: bool,
) -> Result<(), SimError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = Vec::new();
    if with_label {
        header.push("variant");
    }
    header.extend(HEADER);
    w.write_record(&header)?;
    for (label, r) in rows {
        let mut rec = Vec::new();
        if with_label {
            rec.push(label.clone());
        }
        rec.extend(row_fields(r));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
