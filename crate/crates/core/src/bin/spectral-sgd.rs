use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use spectral_sgd::experiments::{self, Experiment, ExperimentConfig, Manifest, Model};

#[derive(Parser)]
#[command(version, about = "Online SGD, empirical Hessian/G spectra and their effective dynamics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file with experiment settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the d = 1000 figure-scale profile.
    #[arg(long)]
    full: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_parser = parse_pair)]
    set: Vec<(String, String)>,
}

#[derive(Subcommand)]
enum Command {
    /// Run SGD and write summary trajectories.
    Train {
        #[arg(long, value_enum, default_value = "kgmm")]
        model: Model,
        #[command(flatten)]
        common: Common,
    },
    /// Train and track Hessian/G spectra and alignments.
    Spectra {
        #[arg(long, value_enum, default_value = "kgmm")]
        model: Model,
        #[command(flatten)]
        common: Common,
    },
    /// Integrate the effective ODE.
    Ode {
        #[arg(long, value_enum, default_value = "kgmm")]
        model: Model,
        #[command(flatten)]
        common: Common,
    },
    /// Solve for fixed points of the noiseless flows.
    FixedPoints {
        #[command(flatten)]
        common: Common,
    },
    /// Reproduce one figure (fig1 .. fig6).
    Reproduce {
        figure: String,
        #[command(flatten)]
        common: Common,
    },
    /// Empirical-vs-population deviation as the sample ratio grows.
    Concentration {
        #[command(flatten)]
        common: Common,
    },
    /// SGD summaries against the finite-noise ODE.
    OdeVsSgd {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_pair(s: &str) -> Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .ok_or_else(|| format!("expected key=value, got {s:?}"))
}

fn load(experiment: Experiment, common: &Common) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::preset(experiment, common.full);
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let pairs: Vec<(String, String)> = file.into_iter().map(|(k, v)| (k, v.to_string())).collect();
        cfg = cfg.with_overrides(&pairs)?;
    }
    cfg = cfg.with_overrides(&common.set)?;
    cfg.experiment = experiment;
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(m: &Manifest, root: &std::path::Path) {
    println!("{} (config {})", m.experiment, &m.config_hash[..12]);
    for f in &m.files {
        println!("  {}  {} bytes", root.join(&m.experiment).join(&f.path).display(), f.bytes);
    }
    println!("  summary: {}", m.summary);
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let (manifest, root) = match &cli.command {
        Command::Train { model, common } => {
            let cfg = load(Experiment::Fig1Alignment, common)?;
            (experiments::run_train(&cfg, *model)?, cfg.output_dir)
        }
        Command::Spectra { model, common } => {
            let exp = match model {
                Model::Kgmm => Experiment::Fig1Alignment,
                Model::Xor => Experiment::Fig4XorAlignment,
            };
            let cfg = load(exp, common)?;
            (experiments::run_experiment(&cfg)?, cfg.output_dir)
        }
        Command::Ode { model, common } => {
            let cfg = load(Experiment::OdeVsSgd, common)?;
            (experiments::run_ode(&cfg, *model)?, cfg.output_dir)
        }
        Command::FixedPoints { common } => {
            let cfg = load(Experiment::FixedPoints, common)?;
            (experiments::run_experiment(&cfg)?, cfg.output_dir)
        }
        Command::Reproduce { figure, common } => {
            let Ok(exp) = Experiment::from_figure(figure) else {
                bail!("unknown figure {figure:?}; expected one of fig1..fig6");
            };
            let cfg = load(exp, common)?;
            (experiments::run_experiment(&cfg)?, cfg.output_dir)
        }
        Command::Concentration { common } => {
            let cfg = load(Experiment::ConcentrationSweep, common)?;
            (experiments::run_experiment(&cfg)?, cfg.output_dir)
        }
        Command::OdeVsSgd { common } => {
            let cfg = load(Experiment::OdeVsSgd, common)?;
            (experiments::run_experiment(&cfg)?, cfg.output_dir)
        }
    };
    report(&manifest, &root);
    Ok(())
}
