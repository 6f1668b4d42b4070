//! Runs a small version of the one-layer alignment experiment through the
//! same pipeline as `spectral-sgd reproduce fig1` and prints the artifacts.
//!
//! `cargo run --release --example reproduce_figure -- fig4` picks another
//! figure.

use spectral_sgd::experiments::{run_experiment, Experiment, ExperimentConfig};

fn main() -> spectral_sgd::Result<()> {
    let figure = std::env::args().nth(1).unwrap_or_else(|| "fig1".into());
    let mut cfg = ExperimentConfig::preset(Experiment::from_figure(&figure)?, false);
    cfg.d = 150;
    cfg.horizon = cfg.horizon.min(20.0);
    cfg.seeds = vec![0];
    cfg.fig6_widths = vec![5];
    if cfg.experiment == Experiment::Fig6RankDeficient {
        cfg.seeds = (0..4).collect();
    }
    cfg.output_dir = std::env::temp_dir().join("spectral_sgd_example");
    cfg.validate()?;

    let manifest = run_experiment(&cfg)?;
    println!("{} (config hash {})", manifest.experiment, &manifest.config_hash[..16]);
    for f in &manifest.files {
        println!("  {} ({} bytes)", cfg.output_dir.join(&manifest.experiment).join(&f.path).display(), f.bytes);
    }
    println!("summary: {}", manifest.summary);
    Ok(())
}
