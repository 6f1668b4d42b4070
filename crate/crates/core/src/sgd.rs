//! Online SGD and the summary statistics it is tracked by.
//!
//! `DecayMode::Literal` applies `x ← x − δ∇L − βx`; `DecayMode::RegularizedLoss`
//! applies `x ← x − δ(∇L + βx)`, i.e. SGD on `L + (β/2)‖x‖²`. The effective
//! ODEs in [`crate::dynamics`] describe the second form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixtures::{LabeledSample, MixtureKind, MixtureSpec};
use crate::nets::{self, OneLayer, ParamState, TwoLayer};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    Literal,
    RegularizedLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// Rows of the first layer `N(0, I/d)`; second layer `N(0, 1)`.
    GaussianScaled { width: usize },
    Explicit(ParamState),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub delta: f64,
    pub beta: f64,
    pub steps: usize,
    pub snapshot_every: usize,
    /// Store full parameters every this many steps (must be a multiple of
    /// `snapshot_every` to be honoured).
    pub param_every: Option<usize>,
    pub init: Init,
    pub seed: u64,
    pub decay: DecayMode,
}

impl SgdConfig {
    /// `δ = c_δ/d`, `steps = T/δ`.
    pub fn ballistic(c_delta: f64, d: usize, beta: f64, horizon: f64, width: usize, seed: u64) -> Self {
        let delta = c_delta / d as f64;
        SgdConfig {
            delta,
            beta,
            steps: (horizon / delta).round() as usize,
            snapshot_every: d,
            param_every: None,
            init: Init::GaussianScaled { width },
            seed,
            decay: DecayMode::RegularizedLoss,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) || self.steps == 0 || self.snapshot_every == 0 || self.beta < 0.0 {
            return Err(Error::Config("need delta > 0, beta >= 0, steps >= 1, snapshot_every >= 1".into()));
        }
        Ok(())
    }

    /// Two-layer alignment results assume `β < 1/8`.
    pub fn beta_flagged(&self) -> bool {
        self.beta >= 0.125
    }

    pub fn data_seed(&self) -> u64 {
        rng::derive(self.seed, 0x64617461)
    }
}

/// Where step `ℓ` (1-based) gets its sample from.
pub trait DataSource: Sync {
    fn get(&self, step: usize) -> LabeledSample;
}

/// Fresh samples: step `ℓ` uses stream index `ℓ − 1`.
pub struct Online<'a> {
    pub spec: &'a MixtureSpec,
    pub seed: u64,
}

impl DataSource for Online<'_> {
    fn get(&self, step: usize) -> LabeledSample {
        self.spec.sample_one(self.seed, (step - 1) as u64)
    }
}

/// A fixed training set replayed in order.
pub struct Pool {
    pub samples: Vec<LabeledSample>,
}

impl DataSource for Pool {
    fn get(&self, step: usize) -> LabeledSample {
        self.samples[(step - 1) % self.samples.len()].clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KGmmSummary {
    pub m: DMatrix<f64>,
    pub rperp: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XorSummary {
    pub v: DVector<f64>,
    pub m_mu: DVector<f64>,
    pub m_nu: DVector<f64>,
    pub rperp: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum SummaryStats {
    KGmm(KGmmSummary),
    Xor(XorSummary),
}

impl SummaryStats {
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            SummaryStats::KGmm(s) => {
                let mut v: Vec<f64> = row_major(&s.m);
                v.extend(row_major(&s.rperp));
                v
            }
            SummaryStats::Xor(s) => {
                let mut v: Vec<f64> = s.v.iter().chain(s.m_mu.iter()).chain(s.m_nu.iter()).copied().collect();
                v.extend(row_major(&s.rperp));
                v
            }
        }
    }

    /// Rebuilds a summary of the same shape as `self` from flat values.
    pub fn with_flat(&self, flat: &[f64]) -> SummaryStats {
        match self {
            SummaryStats::KGmm(s) => {
                let k = s.m.nrows();
                SummaryStats::KGmm(KGmmSummary {
                    m: DMatrix::from_row_slice(k, k, &flat[..k * k]),
                    rperp: DMatrix::from_row_slice(k, k, &flat[k * k..2 * k * k]),
                })
            }
            SummaryStats::Xor(s) => {
                let k = s.v.len();
                SummaryStats::Xor(XorSummary {
                    v: DVector::from_column_slice(&flat[..k]),
                    m_mu: DVector::from_column_slice(&flat[k..2 * k]),
                    m_nu: DVector::from_column_slice(&flat[2 * k..3 * k]),
                    rperp: DMatrix::from_row_slice(k, k, &flat[3 * k..3 * k + k * k]),
                })
            }
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        match self {
            SummaryStats::KGmm(s) => {
                let k = s.m.nrows();
                for prefix in ["m", "rperp"] {
                    for a in 0..k {
                        for b in 0..k {
                            out.push(format!("{prefix}_{a}_{b}"));
                        }
                    }
                }
            }
            SummaryStats::Xor(s) => {
                let k = s.v.len();
                for prefix in ["v", "m_mu", "m_nu"] {
                    for i in 0..k {
                        out.push(format!("{prefix}_{i}"));
                    }
                }
                for i in 0..k {
                    for j in 0..k {
                        out.push(format!("rperp_{i}_{j}"));
                    }
                }
            }
        }
        out
    }

    pub fn rperp(&self) -> &DMatrix<f64> {
        match self {
            SummaryStats::KGmm(s) => &s.rperp,
            SummaryStats::Xor(s) => &s.rperp,
        }
    }

    pub fn as_kgmm(&self) -> Result<&KGmmSummary> {
        match self {
            SummaryStats::KGmm(s) => Ok(s),
            _ => Err(Error::WrongModel("expected a k-GMM summary".into())),
        }
    }

    pub fn as_xor(&self) -> Result<&XorSummary> {
        match self {
            SummaryStats::Xor(s) => Ok(s),
            _ => Err(Error::WrongModel("expected an XOR summary".into())),
        }
    }
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

pub fn extract_summary(p: &ParamState, spec: &MixtureSpec) -> Result<SummaryStats> {
    if p.d() != spec.d {
        return Err(Error::DimensionMismatch { expected: spec.d, got: p.d() });
    }
    match (p, spec.kind) {
        (ParamState::OneLayer(x), MixtureKind::KGmm) => {
            let m = &x.x * spec.means.transpose();
            let gram = spec.mean_gram();
            let inv = gram
                .clone()
                .cholesky()
                .ok_or(Error::DegenerateGram { min_eig: gram.symmetric_eigenvalues().min() })?
                .inverse();
            let coef = &m * inv;
            let perp = &x.x - &coef * &spec.means;
            let rperp = &perp * perp.transpose();
            Ok(SummaryStats::KGmm(KGmmSummary { m, rperp }))
        }
        (ParamState::TwoLayer(p), MixtureKind::Xor) => {
            let mu = spec.mu();
            let nu = spec.nu();
            let m_mu = &p.w * &mu;
            let m_nu = &p.w * &nu;
            let perp = &p.w - &m_mu * mu.transpose() - &m_nu * nu.transpose();
            let rperp = &perp * perp.transpose();
            Ok(SummaryStats::Xor(XorSummary { v: p.v.clone(), m_mu, m_nu, rperp }))
        }
        _ => Err(Error::WrongModel("parameters do not match the mixture kind".into())),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub t: f64,
    pub summary: SummaryStats,
    /// Mean per-sample loss over the steps since the previous record
    /// (step 0: loss of the initial point on the first sample).
    pub loss: f64,
    /// `‖x^c‖` or `‖W_i‖`.
    pub norms: Vec<f64>,
    pub v_norm: Option<f64>,
    pub params: Option<ParamState>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub delta: f64,
    pub records: Vec<TrajectoryRecord>,
    pub final_params: ParamState,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.t).collect()
    }

    /// Records that carry full parameters.
    pub fn snapshots(&self) -> impl Iterator<Item = (&TrajectoryRecord, &ParamState)> {
        self.records.iter().filter_map(|r| r.params.as_ref().map(|p| (r, p)))
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let first = match self.records.first() {
            Some(r) => r,
            None => return Ok(()),
        };
        let mut header = vec!["step".to_string(), "t".to_string()];
        header.extend(first.summary.names());
        header.push("loss".into());
        header.extend((0..first.norms.len()).map(|i| format!("norm_{i}")));
        if first.v_norm.is_some() {
            header.push("v_norm".into());
        }
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![r.step.to_string(), crate::fmt17(r.t)];
            row.extend(r.summary.to_flat().into_iter().map(crate::fmt17));
            row.push(crate::fmt17(r.loss));
            row.extend(r.norms.iter().map(|&v| crate::fmt17(v)));
            if let Some(v) = r.v_norm {
                row.push(crate::fmt17(v));
            }
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Draws the `GaussianScaled` initialization for `spec`.
pub fn initial_params(spec: &MixtureSpec, init: &Init, seed: u64) -> Result<ParamState> {
    match init {
        Init::Explicit(p) => {
            if p.d() != spec.d {
                return Err(Error::DimensionMismatch { expected: spec.d, got: p.d() });
            }
            Ok(p.clone())
        }
        Init::GaussianScaled { width } => {
            let mut r = rng::stream(rng::derive(seed, 0x696e6974), 0);
            let d = spec.d;
            let s = 1.0 / (d as f64).sqrt();
            let mut draw = |n: usize, m: usize, scale: f64| {
                DMatrix::from_fn(n, m, |_, _| scale * r.sample::<f64, _>(StandardNormal))
            };
            match spec.kind {
                MixtureKind::KGmm => Ok(ParamState::OneLayer(OneLayer::new(draw(spec.k(), d, s)))),
                MixtureKind::Xor => {
                    // row-major fill keeps the stream order independent of layout
                    let w = draw(d, *width, s).transpose();
                    let v = draw(*width, 1, 1.0).column(0).into_owned();
                    Ok(ParamState::TwoLayer(TwoLayer::new(w, v)?))
                }
            }
        }
    }
}

fn sample_loss(p: &ParamState, s: &LabeledSample) -> Result<f64> {
    match p {
        ParamState::OneLayer(x) => nets::kgmm_loss(x, s, 0.0),
        ParamState::TwoLayer(w) => nets::xor_loss(w, s, 0.0),
    }
}

fn norms(p: &ParamState) -> (Vec<f64>, Option<f64>) {
    match p {
        ParamState::OneLayer(x) => (x.x.row_iter().map(|r| r.norm()).collect(), None),
        ParamState::TwoLayer(w) => (w.w.row_iter().map(|r| r.norm()).collect(), Some(w.v.norm())),
    }
}

/// One SGD step in place; returns the per-sample loss before the update.
pub fn sgd_step(p: &mut ParamState, s: &LabeledSample, delta: f64, beta: f64, decay: DecayMode) -> Result<f64> {
    let shrink = match decay {
        DecayMode::Literal => 1.0 - beta,
        DecayMode::RegularizedLoss => 1.0 - delta * beta,
    };
    match p {
        ParamState::OneLayer(x) => {
            let logits = &x.x * &s.features;
            let c = s.class();
            let loss = -logits[c] + nets::log_sum_exp(&logits);
            let mut r = nets::softmax(&logits);
            r[c] -= 1.0;
            x.x *= shrink;
            x.x.ger(-delta, &r, &s.features, 1.0);
            Ok(loss)
        }
        ParamState::TwoLayer(w) => {
            let f = nets::xor_forward(w, &s.features)?;
            let z = w.v.dot(&f.gwy);
            let y = s.binary();
            let loss = -y * z + nets::softplus(z);
            let r = y - f.yhat;
            let coef = f.gprime.component_mul(&w.v);
            w.w *= shrink;
            w.w.ger(delta * r, &coef, &s.features, 1.0);
            w.v *= shrink;
            w.v.axpy(delta * r, &f.gwy, 1.0);
            Ok(loss)
        }
    }
}

pub fn run_sgd(spec: &MixtureSpec, cfg: &SgdConfig, data: &dyn DataSource) -> Result<Trajectory> {
    cfg.validate()?;
    let mut p = initial_params(spec, &cfg.init, cfg.seed)?;
    let keep = |step: usize| cfg.param_every.is_some_and(|e| e > 0 && step % e == 0);
    let record = |p: &ParamState, step: usize, loss: f64| -> Result<TrajectoryRecord> {
        let (norms, v_norm) = norms(p);
        Ok(TrajectoryRecord {
            step,
            t: step as f64 * cfg.delta,
            summary: extract_summary(p, spec)?,
            loss,
            norms,
            v_norm,
            params: keep(step).then(|| p.clone()),
        })
    };
    let first_loss = sample_loss(&p, &data.get(1))?;
    let mut records = vec![record(&p, 0, first_loss)?];
    let mut acc = 0.0;
    let mut count = 0usize;
    for step in 1..=cfg.steps {
        let s = data.get(step);
        acc += sgd_step(&mut p, &s, cfg.delta, cfg.beta, cfg.decay)?;
        count += 1;
        if !p.is_finite() {
            return Err(Error::NonFinite { step });
        }
        if step % cfg.snapshot_every == 0 || step == cfg.steps {
            records.push(record(&p, step, acc / count as f64)?);
            acc = 0.0;
            count = 0;
        }
    }
    Ok(Trajectory { delta: cfg.delta, records, final_params: p })
}

/// Convenience wrapper: online SGD on fresh samples from `spec`.
pub fn run_online(spec: &MixtureSpec, cfg: &SgdConfig) -> Result<Trajectory> {
    let data = Online { spec, seed: cfg.data_seed() };
    run_sgd(spec, cfg, &data)
}
