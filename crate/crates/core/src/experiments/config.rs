use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{OrthantSet, PerpDecay};
use crate::error::{Error, Result};
use crate::mixtures::{orthonormal_means, MixtureSpec, Noise};
use crate::sgd::DecayMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Fig1Alignment,
    Fig2Snapshots,
    Fig3Bbp,
    Fig4XorAlignment,
    Fig5XorBbp,
    Fig6RankDeficient,
    OdeVsSgd,
    FixedPoints,
    ConcentrationSweep,
}

impl Experiment {
    pub fn from_figure(name: &str) -> Result<Self> {
        Ok(match name {
            "fig1" => Experiment::Fig1Alignment,
            "fig2" => Experiment::Fig2Snapshots,
            "fig3" => Experiment::Fig3Bbp,
            "fig4" => Experiment::Fig4XorAlignment,
            "fig5" => Experiment::Fig5XorBbp,
            "fig6" => Experiment::Fig6RankDeficient,
            other => return Err(Error::Config(format!("unknown figure {other:?}, expected fig1..fig6"))),
        })
    }

    pub fn is_xor(self) -> bool {
        matches!(self, Experiment::Fig4XorAlignment | Experiment::Fig5XorBbp | Experiment::Fig6RankDeficient)
    }

    pub fn slug(self) -> &'static str {
        match self {
            Experiment::Fig1Alignment => "fig1_alignment",
            Experiment::Fig2Snapshots => "fig2_snapshots",
            Experiment::Fig3Bbp => "fig3_bbp",
            Experiment::Fig4XorAlignment => "fig4_xor_alignment",
            Experiment::Fig5XorBbp => "fig5_xor_bbp",
            Experiment::Fig6RankDeficient => "fig6_rank_deficient",
            Experiment::OdeVsSgd => "ode_vs_sgd",
            Experiment::FixedPoints => "fixed_points",
            Experiment::ConcentrationSweep => "concentration_sweep",
        }
    }
}

/// Which samples the empirical matrices are built from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatrixSource {
    /// `⌈α d⌉` fresh samples at every snapshot.
    #[default]
    TestFresh,
    /// SGD replays a pool of `⌈4 d log d⌉` samples and the matrices use the
    /// whole pool.
    TrainPool,
}

/// Flat key-value experiment description; every field has a default so a
/// TOML file only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub d: usize,
    /// Classes of the one-layer model.
    pub k: usize,
    /// Hidden width of the two-layer model.
    pub width: usize,
    /// Noise precision; `inf` means noiseless.
    pub lambda: f64,
    pub beta: f64,
    pub c_delta: f64,
    /// Training horizon in time units `t = ℓδ`.
    pub horizon: f64,
    /// Steps between summary records; 0 means `d` (one time unit).
    pub snapshot_stride: usize,
    /// Time between spectral snapshots.
    pub eig_every: f64,
    pub eig_from: f64,
    /// Test matrices use `⌈α d⌉` samples.
    pub alpha: f64,
    /// Means `μ_i = e_{i·spacing}`; 0 picks `min(50, d/k)`.
    pub spacing: usize,
    pub seeds: Vec<u64>,
    pub matrix_source: MatrixSource,
    pub decay: DecayMode,
    pub output_dir: PathBuf,
    pub n_mc: usize,
    pub dt: f64,
    pub perp_decay: PerpDecay,
    /// Fraction of the largest `‖g(Wϑ)‖` above which a hidden class counts
    /// as discerned.
    pub quality_threshold: f64,
    pub test_samples: usize,
    pub fig6_widths: Vec<usize>,
    pub alphas: Vec<f64>,
    pub points: usize,
    pub trials: usize,
    pub partition: Option<Vec<OrthantSet>>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::Fig1Alignment,
            d: 200,
            k: 5,
            width: 20,
            lambda: 10.0,
            beta: 0.01,
            c_delta: 1.0,
            horizon: 50.0,
            snapshot_stride: 0,
            eig_every: 5.0,
            eig_from: 0.0,
            alpha: 4.0,
            spacing: 0,
            seeds: vec![0, 1, 2],
            matrix_source: MatrixSource::TestFresh,
            decay: DecayMode::RegularizedLoss,
            output_dir: PathBuf::from("out"),
            n_mc: 4000,
            dt: 0.05,
            perp_decay: PerpDecay::default(),
            quality_threshold: 0.1,
            test_samples: 10_000,
            fig6_widths: vec![5, 6],
            alphas: vec![1.0, 2.0, 4.0, 8.0],
            points: 5,
            trials: 3,
            partition: None,
        }
    }
}

impl ExperimentConfig {
    /// Defaults for one experiment at desk scale, or at the `d = 1000`
    /// figure scale when `full` is set.
    pub fn preset(experiment: Experiment, full: bool) -> Self {
        let mut c = ExperimentConfig { experiment, ..Default::default() };
        if full {
            c.d = 1000;
            c.k = 10;
        }
        match experiment {
            Experiment::Fig1Alignment | Experiment::Fig2Snapshots => {}
            Experiment::Fig3Bbp => c.eig_every = 1.0,
            Experiment::Fig4XorAlignment => c.horizon = 100.0,
            Experiment::Fig5XorBbp => {
                c.horizon = 100.0;
                c.eig_every = 2.0;
            }
            Experiment::Fig6RankDeficient => {
                c.d = if full { 500 } else { 250 };
                c.horizon = 100.0;
                c.seeds = (0..40).collect();
                c.eig_every = 5.0;
            }
            Experiment::OdeVsSgd => {
                c.horizon = 25.0;
                if !full {
                    c.k = 5;
                }
            }
            Experiment::FixedPoints => c.width = 8,
            Experiment::ConcentrationSweep => {
                c.d = 200;
                c.k = 3;
                c.width = 4;
                c.n_mc = 100_000;
                c.trials = 10;
            }
        }
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies `key=value` overrides; values are parsed as TOML literals and
    /// fall back to bare strings.
    pub fn with_overrides(&self, pairs: &[(String, String)]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(&self.to_toml()?).map_err(|e| Error::Config(e.to_string()))?;
        for (key, raw) in pairs {
            let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
                .ok()
                .and_then(|mut t| t.remove("v"))
                .unwrap_or_else(|| toml::Value::String(raw.clone()));
            table.insert(key.clone(), value);
        }
        let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml(&text)
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn noise(&self) -> Noise {
        if self.lambda.is_infinite() {
            Noise::Zero
        } else {
            Noise::Precision(self.lambda)
        }
    }

    pub fn effective_spacing(&self) -> usize {
        if self.spacing > 0 {
            self.spacing
        } else {
            (self.d / self.k.max(1)).clamp(1, 50)
        }
    }

    pub fn stride(&self) -> usize {
        if self.snapshot_stride == 0 {
            self.d
        } else {
            self.snapshot_stride
        }
    }

    pub fn kgmm_spec(&self) -> Result<MixtureSpec> {
        MixtureSpec::kgmm_uniform(orthonormal_means(self.k, self.d, self.effective_spacing())?, self.noise())
    }

    pub fn xor_spec(&self) -> Result<MixtureSpec> {
        MixtureSpec::xor_axes(self.d, self.effective_xor_spacing(), self.noise())
    }

    fn effective_xor_spacing(&self) -> usize {
        if self.spacing > 0 {
            self.spacing
        } else {
            (self.d / 2).clamp(1, 50)
        }
    }

    pub fn test_matrix_size(&self) -> usize {
        (self.alpha * self.d as f64).ceil() as usize
    }

    pub fn pool_size(&self) -> usize {
        let d = self.d as f64;
        (4.0 * d * d.ln()).ceil() as usize
    }

    /// Checks the fields the selected experiment depends on.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.d < 2 {
            return bad("d must be at least 2");
        }
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive (inf for noiseless)");
        }
        if !(self.beta >= 0.0) || !(self.c_delta > 0.0) {
            return bad("need beta >= 0 and c_delta > 0");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        match self.experiment {
            Experiment::Fig1Alignment | Experiment::Fig2Snapshots | Experiment::Fig3Bbp | Experiment::OdeVsSgd => {
                if self.k < 2 || (self.k - 1) * self.effective_spacing() >= self.d {
                    return bad("need k >= 2 and (k - 1) * spacing < d");
                }
                if !(self.horizon > 0.0) {
                    return bad("horizon must be positive");
                }
                if self.experiment == Experiment::OdeVsSgd && !(self.dt > 0.0) {
                    return bad("dt must be positive");
                }
            }
            Experiment::Fig4XorAlignment | Experiment::Fig5XorBbp | Experiment::Fig6RankDeficient => {
                if self.width < 4 || self.effective_xor_spacing() >= self.d {
                    return bad("need width >= 4 and room for the two means");
                }
                if self.experiment == Experiment::Fig6RankDeficient && self.fig6_widths.iter().any(|&w| w < 4) {
                    return bad("fig6 widths must be at least 4");
                }
            }
            Experiment::FixedPoints => {
                if self.k < 2 || self.width == 0 {
                    return bad("need k >= 2 and width >= 1");
                }
            }
            Experiment::ConcentrationSweep => {
                if self.alphas.is_empty() || self.points == 0 || self.trials == 0 {
                    return bad("need alphas, points and trials");
                }
            }
        }
        if matches!(self.experiment, Experiment::Fig1Alignment | Experiment::Fig2Snapshots | Experiment::Fig3Bbp | Experiment::Fig4XorAlignment | Experiment::Fig5XorBbp)
            && !(self.alpha > 0.0 && self.eig_every > 0.0)
        {
            return bad("need alpha > 0 and eig_every > 0");
        }
        Ok(())
    }
}
