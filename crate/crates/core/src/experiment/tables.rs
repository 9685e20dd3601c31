use std::io::Write;

use thiserror::Error;

use crate::analysis::{
    alpha_sweep, classify, steady_state_variance, AnalysisError, ErrorDynamics, NoiseSpec,
    Stability,
};

#[derive(Debug, Error)]
pub enum TableError {
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn stability_label(s: Stability) -> &'static str {
    match s {
        Stability::Stable => "stable",
        Stability::Unstable => "unstable",
    }
}

/// Both eigenvalues of the pairwise error dynamics.
pub fn eig_table<W: Write>(
    out: W,
    beta: f64,
    alpha: f64,
    beacon_period: f64,
    true_freq: f64,
) -> Result<(), TableError> {
    let d = ErrorDynamics {
        beta,
        alpha,
        beacon_period,
        true_freq,
    };
    let (z1, z2) = d.eigenvalues();
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "beta", "alpha", "z1_re", "z1_im", "z2_re", "z2_im", "spectral_radius", "stable",
    ])?;
    w.write_record([
        beta.to_string(),
        format!("{alpha:e}"),
        z1.re.to_string(),
        z1.im.to_string(),
        z2.re.to_string(),
        z2.im.to_string(),
        d.spectral_radius().to_string(),
        stability_label(classify(beta, alpha, beacon_period, true_freq)).to_string(),
    ])?;
    w.flush()?;
    Ok(())
}

/// Radius and rounds-to-90%-decay over `alphas`; rows outside the stable
/// region are flagged, not rejected.
pub fn sweep_table<W: Write>(
    out: W,
    beta: f64,
    beacon_period: f64,
    true_freq: f64,
    alphas: &[f64],
) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "alpha",
        "scaled_alpha",
        "spectral_radius",
        "iterations_90",
        "stable",
    ])?;
    for row in alpha_sweep(beta, beacon_period, true_freq, alphas) {
        w.write_record([
            format!("{:e}", row.alpha),
            format!("{:.6}", row.scaled_alpha),
            format!("{:.9}", row.spectral_radius),
            row.iterations_90.map(|n| n.to_string()).unwrap_or_default(),
            stability_label(row.stability).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Asymptotic mean-square error over `alphas`; unbounded rows are flagged.
pub fn variance_table<W: Write>(
    out: W,
    beacon_period: f64,
    nominal_freq: f64,
    noise: &NoiseSpec,
    alphas: &[f64],
) -> Result<(), TableError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "scaled_alpha", "variance_s2", "rms_us", "bounded"])?;
    for &alpha in alphas {
        let scaled = alpha * beacon_period * nominal_freq;
        let rec = match steady_state_variance(alpha, beacon_period, nominal_freq, noise) {
            Ok(v) => [
                format!("{alpha:e}"),
                format!("{scaled:.6}"),
                format!("{v:e}"),
                format!("{:.6}", v.sqrt() * 1e6),
                "true".to_string(),
            ],
            Err(AnalysisError::UnboundedVariance { .. }) => [
                format!("{alpha:e}"),
                format!("{scaled:.6}"),
                String::new(),
                String::new(),
                "false".to_string(),
            ],
            Err(e) => return Err(e.into()),
        };
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_flags_unstable_rows() {
        let a = 1.0 / 3e7;
        let mut buf = Vec::new();
        sweep_table(&mut buf, 1.0, 30.0, 1e6, &[a, 3.0 * a]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].ends_with(",1,stable"), "{}", lines[1]);
        assert!(lines[2].ends_with(",,unstable"), "{}", lines[2]);
    }

    #[test]
    fn variance_flags_unbounded() {
        let n = NoiseSpec::from_etas(1.0, 1e-7, 1e6).unwrap();
        let mut buf = Vec::new();
        variance_table(&mut buf, 30.0, 1e6, &n, &[0.0, 1e-7]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with("true"));
        assert!(text.lines().nth(2).unwrap().ends_with("false"));
    }
}
