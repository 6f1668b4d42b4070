//! Train, snapshot, assemble, diagonalize.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, MatrixSource};
use crate::error::Result;
use crate::linalg::{self, EigOptions};
use crate::mixtures::{LabeledSample, MixtureSpec};
use crate::nets::{relu, ParamState, TwoLayer};
use crate::rng;
use crate::sgd::{self, Init, Pool, SgdConfig, Trajectory};
use crate::spectra::{self, BlockId, MatrixKind};

#[derive(Clone, Debug)]
pub struct SpectralSnapshot {
    pub step: usize,
    pub t: f64,
    pub matrix: MatrixKind,
    pub block: BlockId,
    pub eigenvalues: Vec<f64>,
    pub bulk_edge: f64,
    pub outliers: usize,
    /// Alignment of the block's own parameter vector with the top-`r` eigenspace.
    pub alignment: Option<f64>,
    pub vectors: Option<Vec<DVector<f64>>>,
}

#[derive(Clone, Debug)]
pub struct SpectralRun {
    pub seed: u64,
    pub trajectory: Trajectory,
    pub snapshots: Vec<SpectralSnapshot>,
    pub quality: Option<Quality>,
}

impl SpectralRun {
    pub fn select(&self, matrix: MatrixKind, block: BlockId) -> impl Iterator<Item = &SpectralSnapshot> {
        self.snapshots.iter().filter(move |s| s.matrix == matrix && s.block == block)
    }
}

/// A block to diagonalize and the size of its principal space.
#[derive(Clone, Copy, Debug)]
pub struct BlockPlan {
    pub block: BlockId,
    pub r: usize,
    pub keep_vectors: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    /// Hidden classes `ϑ ∈ {μ, −μ, ν, −ν}` with `‖g(Wϑ)‖` above the threshold.
    pub discerned: usize,
    pub test_error: f64,
    pub class_norms: [f64; 4],
}

/// Counts the hidden classes the first layer responds to and measures the
/// test error on `n_test` fresh samples.
pub fn classify_quality(p: &TwoLayer, spec: &MixtureSpec, threshold: f64, n_test: usize, seed: u64) -> Quality {
    let mut class_norms = [0.0; 4];
    for (slot, (theta, _)) in class_norms.iter_mut().zip(spec.xor_centers()) {
        *slot = (&p.w * theta).map(relu).norm();
    }
    let top = class_norms.iter().cloned().fold(0.0, f64::max);
    let discerned = if top > 0.0 { class_norms.iter().filter(|&&n| n > threshold * top).count() } else { 0 };
    let samples = spec.sample(seed, n_test);
    let wrong = samples
        .par_iter()
        .filter(|s| {
            let z = p.v.dot(&(&p.w * &s.features).map(relu));
            (z > 0.0) != (s.binary() > 0.5)
        })
        .count();
    Quality { discerned, test_error: wrong as f64 / n_test.max(1) as f64, class_norms }
}

/// Spectral snapshot times `eig_from, eig_from + eig_every, …` up to the
/// horizon, with the horizon itself always included.
pub fn eig_times(cfg: &ExperimentConfig) -> Vec<f64> {
    let mut out = Vec::new();
    let mut t = cfg.eig_from;
    while t < cfg.horizon - 1e-9 {
        out.push(t);
        t += cfg.eig_every;
    }
    out.push(cfg.horizon);
    out
}

fn to_step(t: f64, delta: f64) -> usize {
    (t / delta).round() as usize
}

/// Trains one seed, keeping full parameters at the requested times.
pub fn train(
    cfg: &ExperimentConfig,
    spec: &MixtureSpec,
    width: usize,
    seed: u64,
    param_times: &[f64],
) -> Result<(Trajectory, Option<Vec<LabeledSample>>)> {
    let mut sc = SgdConfig::ballistic(cfg.c_delta, cfg.d, cfg.beta, cfg.horizon, width, seed);
    sc.snapshot_every = cfg.stride();
    sc.decay = cfg.decay;
    sc.init = Init::GaussianScaled { width };
    let steps: Vec<usize> = param_times.iter().map(|&t| to_step(t, sc.delta)).collect();
    // records land on multiples of the stride, so align the stride to the snapshot grid
    if let Some(g) = steps.iter().filter(|&&s| s > 0).copied().reduce(gcd) {
        sc.snapshot_every = gcd(sc.snapshot_every, g);
        sc.param_every = Some(g);
    }
    let (traj, pool) = match cfg.matrix_source {
        MatrixSource::TestFresh => (sgd::run_online(spec, &sc)?, None),
        MatrixSource::TrainPool => {
            let pool = Pool { samples: spec.sample(rng::derive(seed, 0x706f6f6c), cfg.pool_size()) };
            let t = sgd::run_sgd(spec, &sc, &pool)?;
            (t, Some(pool.samples))
        }
    };
    Ok((traj, pool))
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn param_vector(p: &ParamState, block: BlockId) -> Option<DVector<f64>> {
    match (p, block) {
        (ParamState::OneLayer(x), BlockId::Class(b, c)) if b == c => Some(x.x.row(b).transpose()),
        (ParamState::TwoLayer(w), BlockId::Ww(i, j)) if i == j => Some(w.w.row(i).transpose()),
        (ParamState::TwoLayer(w), BlockId::Vv) => Some(w.v.clone()),
        _ => None,
    }
}

/// Diagonalizes every planned block of both matrices at one parameter point.
pub fn snapshot_spectra(
    params: &ParamState,
    samples: &[LabeledSample],
    plan: &[BlockPlan],
    step: usize,
    t: f64,
    seed: u64,
) -> Result<Vec<SpectralSnapshot>> {
    let mut out = Vec::new();
    for matrix in [MatrixKind::Hessian, MatrixKind::G] {
        let fq = spectra::assemble(samples, params, matrix)?;
        for bp in plan {
            let opts = EigOptions { seed: rng::derive(seed, step as u64), ..Default::default() }.with_buffer(bp.r.max(6));
            let rep = fq.eigs(bp.block, bp.r, &opts)?;
            let top = rep.top_vectors(bp.r);
            let alignment = match param_vector(params, bp.block) {
                Some(v) if v.norm() > 0.0 => Some(linalg::alignment(&v, top)?),
                _ => None,
            };
            out.push(SpectralSnapshot {
                step,
                t,
                matrix,
                block: bp.block,
                eigenvalues: rep.eigenvalues.clone(),
                bulk_edge: rep.bulk_edge_estimate,
                outliers: rep.outlier_count,
                alignment,
                vectors: bp.keep_vectors.then(|| top.to_vec()),
            });
        }
    }
    Ok(out)
}

/// Full pipeline for one seed: train, then diagonalize the planned blocks at
/// each time in `times`.
pub fn spectral_run(
    cfg: &ExperimentConfig,
    spec: &MixtureSpec,
    width: usize,
    seed: u64,
    times: &[f64],
    plan: &[BlockPlan],
) -> Result<SpectralRun> {
    let (trajectory, pool) = train(cfg, spec, width, seed, times).map_err(|e| e.at("train"))?;
    let mut snapshots = Vec::new();
    let mut wanted: Vec<usize> = times.iter().map(|&t| to_step(t, trajectory.delta)).collect();
    wanted.dedup();
    for rec in &trajectory.records {
        if !wanted.contains(&rec.step) {
            continue;
        }
        let last = trajectory.records.last().map_or(0, |r| r.step);
        let params = match &rec.params {
            Some(p) => p,
            None if rec.step == last => &trajectory.final_params,
            None => continue,
        };
        let fresh;
        let samples: &[LabeledSample] = match &pool {
            Some(p) => p,
            None => {
                fresh = spec.sample(rng::derive(seed, 0x74657374_0000 + rec.step as u64), cfg.test_matrix_size());
                &fresh
            }
        };
        snapshots.extend(snapshot_spectra(params, samples, plan, rec.step, rec.t, seed).map_err(|e| e.at("spectra"))?);
    }
    let quality = match &trajectory.final_params {
        ParamState::TwoLayer(w) => {
            Some(classify_quality(w, spec, cfg.quality_threshold, cfg.test_samples, rng::derive(seed, 0x7175616c)))
        }
        _ => None,
    };
    Ok(SpectralRun { seed, trajectory, snapshots, quality })
}

/// Runs `spectral_run` for every configured seed.
pub fn spectral_runs(
    cfg: &ExperimentConfig,
    spec: &MixtureSpec,
    width: usize,
    times: &[f64],
    plan: &[BlockPlan],
) -> Result<Vec<SpectralRun>> {
    cfg.seeds.par_iter().map(|&s| spectral_run(cfg, spec, width, s, times, plan)).collect()
}
