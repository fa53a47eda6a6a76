//! A small (N, M, seed) grid through the sweep harness, with per-cell summaries.

use barlow_ntk::harness::{self, DataSource, SweepSpec};

fn main() -> anyhow::Result<()> {
    let mut spec = SweepSpec::new(vec![50, 200, 800], vec![10], (0..4).collect(), DataSource::Synthetic { dim: 784, noise: 0.1 });
    spec.model.embed_dim = 2;
    let rows = harness::run_sweep(&spec)?;
    harness::write_sweep_csv(&rows, std::io::stdout().lock())?;
    for cell in harness::summarize(&rows) {
        let drift = cell.metric("ntk_drift_rel").and_then(|m| m.mean).unwrap_or(f64::NAN);
        let epochs = cell.metric("epochs").and_then(|m| m.median).unwrap_or(f64::NAN);
        eprintln!("N={} M={}: converged {}/{}, median epochs {epochs}, mean drift {drift:.4e}", cell.n, cell.m, cell.converged, cell.runs);
    }
    Ok(())
}
