//! Figure reproductions and the artifact layer behind the command line.
//!
//! Every runner has a typed entry point (used by the tests and examples)
//! and [`run_experiment`] wraps them with CSV, SVG and manifest output.

mod config;
mod output;
mod pipeline;

pub use config::{Experiment, ExperimentConfig, MatrixSource};
pub use output::{line_chart, ArtifactWriter, Cell, Manifest, ManifestEntry, Series, Table};
pub use pipeline::{
    classify_quality, eig_times, snapshot_spectra, spectral_run, spectral_runs, train, BlockPlan, Quality, SpectralRun,
    SpectralSnapshot,
};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{self, OdeSystem, OdeTrajectory, OrthantSet, XorPartition};
use crate::error::{Error, Result};
use crate::mixtures::MixtureSpec;
use crate::nets::{OneLayer, ParamState, TwoLayer};
use crate::population::{self, ProbeRow};
use crate::rng;
use crate::sgd::{KGmmSummary, SummaryStats, Trajectory, XorSummary};
use crate::spectra::{BlockId, MatrixKind};

fn kgmm_plan(k: usize, classes: &[usize], keep_vectors: bool) -> Vec<BlockPlan> {
    classes.iter().map(|&c| BlockPlan { block: BlockId::Class(c, c), r: k, keep_vectors }).collect()
}

fn xor_plan(width: usize, first_layer: bool) -> Vec<BlockPlan> {
    let mut plan = vec![BlockPlan { block: BlockId::Vv, r: 4, keep_vectors: false }];
    if first_layer {
        plan.extend((0..width).map(|i| BlockPlan { block: BlockId::Ww(i, i), r: 2, keep_vectors: false }));
    }
    plan
}

/// Alignment of every class block with its top-`k` eigenspace over training.
pub fn fig1_alignment(cfg: &ExperimentConfig) -> Result<Vec<SpectralRun>> {
    let spec = cfg.kgmm_spec()?;
    let classes: Vec<usize> = (0..cfg.k).collect();
    spectral_runs(cfg, &spec, 0, &eig_times(cfg), &kgmm_plan(cfg.k, &classes, false))
}

/// End-of-training eigenvectors of the first class block.
pub fn fig2_snapshots(cfg: &ExperimentConfig) -> Result<Vec<SpectralRun>> {
    let spec = cfg.kgmm_spec()?;
    spectral_runs(cfg, &spec, 0, &[cfg.horizon], &kgmm_plan(cfg.k, &[0], true))
}

/// Eigenvalue traces of the first class block.
pub fn fig3_bbp(cfg: &ExperimentConfig) -> Result<Vec<SpectralRun>> {
    let spec = cfg.kgmm_spec()?;
    spectral_runs(cfg, &spec, 0, &eig_times(cfg), &kgmm_plan(cfg.k, &[0], false))
}

/// First-layer and second-layer alignment of the two-layer model.
pub fn fig4_xor_alignment(cfg: &ExperimentConfig) -> Result<Vec<SpectralRun>> {
    let spec = cfg.xor_spec()?;
    spectral_runs(cfg, &spec, cfg.width, &eig_times(cfg), &xor_plan(cfg.width, true))
}

/// Second-layer eigenvalue traces of the two-layer model.
pub fn fig5_xor_bbp(cfg: &ExperimentConfig) -> Result<Vec<SpectralRun>> {
    let spec = cfg.xor_spec()?;
    spectral_runs(cfg, &spec, cfg.width, &eig_times(cfg), &xor_plan(cfg.width, false))
}

#[derive(Clone, Debug, Serialize)]
pub struct RankRow {
    pub width: usize,
    pub seed: u64,
    pub discerned: usize,
    pub test_error: f64,
    pub outliers_g_init: usize,
    pub outliers_g_end: usize,
    pub outliers_h_end: usize,
}

/// Many seeds at small widths, bucketed by discerned hidden classes.
pub fn fig6_rank_deficient(cfg: &ExperimentConfig) -> Result<(Vec<RankRow>, Vec<SpectralRun>)> {
    let spec = cfg.xor_spec()?;
    let times = eig_times(cfg);
    let jobs: Vec<(usize, u64)> = cfg.fig6_widths.iter().flat_map(|&w| cfg.seeds.iter().map(move |&s| (w, s))).collect();
    let runs: Vec<(usize, SpectralRun)> = jobs
        .par_iter()
        .map(|&(w, s)| Ok((w, spectral_run(cfg, &spec, w, rng::derive(s, w as u64), &times, &xor_plan(w, false))?)))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (w, run) in &runs {
        let g: Vec<&SpectralSnapshot> = run.select(MatrixKind::G, BlockId::Vv).collect();
        let h_end = run.select(MatrixKind::Hessian, BlockId::Vv).last().map_or(0, |s| s.outliers);
        let q = run.quality.expect("two-layer runs carry a quality report");
        rows.push(RankRow {
            width: *w,
            seed: run.seed,
            discerned: q.discerned,
            test_error: q.test_error,
            outliers_g_init: g.first().map_or(0, |s| s.outliers),
            outliers_g_end: g.last().map_or(0, |s| s.outliers),
            outliers_h_end: h_end,
        });
    }
    Ok((rows, runs.into_iter().map(|(_, r)| r).collect()))
}

#[derive(Clone, Debug)]
pub struct OdeVsSgd {
    pub seed: u64,
    pub sgd: Trajectory,
    pub ode: OdeTrajectory,
    pub comparison: dynamics::Comparison,
}

/// SGD summaries against the finite-`λ` ODE started from the same initial
/// summary.
pub fn ode_vs_sgd(cfg: &ExperimentConfig) -> Result<Vec<OdeVsSgd>> {
    let spec = cfg.kgmm_spec()?;
    cfg.seeds
        .par_iter()
        .map(|&seed| {
            let (sgd, _) = train(cfg, &spec, 0, seed, &[]).map_err(|e| e.at("train"))?;
            let sys = OdeSystem::for_spec(spec.clone(), cfg.beta, cfg.c_delta)?
                .with_mc(cfg.n_mc, rng::derive(seed, 0x6f6465))
                .with_perp_decay(cfg.perp_decay);
            let every = ((1.0 / cfg.dt).round() as usize).max(1);
            let ode = dynamics::integrate(&sys, &sgd.records[0].summary, cfg.horizon, cfg.dt, every)
                .map_err(|e| e.at("ode"))?;
            let comparison = dynamics::compare_sgd_ode(&sgd, &ode)?;
            Ok(OdeVsSgd { seed, sgd, ode, comparison })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct XorFixedPoint {
    pub name: String,
    pub partition: XorPartition,
    pub point: XorSummary,
    pub residual: f64,
    pub discerned: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct FixedPointReport {
    pub kgmm: KGmmSummary,
    pub kgmm_residual: f64,
    pub xor: Vec<XorFixedPoint>,
}

fn named_partitions(cfg: &ExperimentConfig) -> Vec<(String, Vec<OrthantSet>)> {
    use OrthantSet::*;
    let k = cfg.width;
    let cycle = |sets: &[OrthantSet]| -> Vec<OrthantSet> { (0..k).map(|i| sets[i % sets.len()]).collect() };
    let mut out = vec![
        ("balanced".to_string(), cycle(&[MuPlus, MuMinus, NuPlus, NuMinus])),
        ("mu_only".to_string(), cycle(&[MuPlus, MuMinus])),
        ("one_class".to_string(), cycle(&[MuPlus])),
        ("origin".to_string(), vec![Zero; k]),
    ];
    if let Some(p) = &cfg.partition {
        out.push(("configured".to_string(), p.clone()));
    }
    out
}

pub fn fixed_points(cfg: &ExperimentConfig) -> Result<FixedPointReport> {
    let probs = vec![1.0 / cfg.k as f64; cfg.k];
    let kgmm = dynamics::kgmm_fixed_point_orthonormal(&probs, cfg.beta, cfg.k)?;
    let kgmm_residual = dynamics::fixed_point_residual(&kgmm.m, &probs, cfg.beta);
    let mut xor = Vec::new();
    for (name, sets) in named_partitions(cfg) {
        let partition = XorPartition { sets };
        let point = dynamics::xor_fixed_point(&partition, cfg.beta, None)?;
        let drift = dynamics::xor_drift_infinite(&point, cfg.beta)?;
        let residual = drift.v.amax().max(drift.m_mu.amax()).max(drift.m_nu.amax());
        let discerned = [OrthantSet::MuPlus, OrthantSet::MuMinus, OrthantSet::NuPlus, OrthantSet::NuMinus]
            .iter()
            .filter(|&&s| partition.count(s) > 0)
            .count();
        xor.push(XorFixedPoint { name, partition, point, residual, discerned });
    }
    Ok(FixedPointReport { kgmm, kgmm_residual, xor })
}

/// Random parameter points of bounded norm: a random combination of the
/// means plus an `N(0, I/d)` component per row.
pub fn random_points(spec: &MixtureSpec, width: usize, count: usize, seed: u64) -> Result<Vec<ParamState>> {
    let d = spec.d;
    let means = spec.means.clone();
    (0..count)
        .map(|i| {
            let mut r = rng::stream(seed, i as u64);
            let mut gauss = |n: usize, m: usize, s: f64| DMatrix::from_fn(n, m, |_, _| s * r.sample::<f64, _>(StandardNormal));
            let rows = match spec.kind {
                crate::mixtures::MixtureKind::KGmm => spec.k(),
                crate::mixtures::MixtureKind::Xor => width,
            };
            let coef = gauss(rows, means.nrows(), 1.0);
            let x = &coef * &means + gauss(rows, d, 1.0 / (d as f64).sqrt());
            Ok(match spec.kind {
                crate::mixtures::MixtureKind::KGmm => ParamState::OneLayer(OneLayer::new(x)),
                crate::mixtures::MixtureKind::Xor => {
                    let v = gauss(width, 1, 1.0).column(0).into_owned();
                    ParamState::TwoLayer(TwoLayer::new(x, v)?)
                }
            })
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct ConcentrationRow {
    pub model: String,
    pub matrix: String,
    pub row: ProbeRow,
}

/// Operator-norm deviation from the population matrix as the sample ratio
/// `α = M/d` grows, for both models.
pub fn concentration_sweep(cfg: &ExperimentConfig) -> Result<Vec<ConcentrationRow>> {
    let mut out = Vec::new();
    let specs = [("kgmm", cfg.kgmm_spec()?), ("xor", cfg.xor_spec()?)];
    for (ti, (model, spec)) in specs.iter().enumerate() {
        let seed = rng::derive(cfg.seeds[0], ti as u64);
        let points = random_points(spec, cfg.width, cfg.points, seed)?;
        for (mi, kind) in [MatrixKind::Hessian, MatrixKind::G].into_iter().enumerate() {
            let rows = population::concentration_probe(
                &points,
                spec,
                kind,
                &cfg.alphas,
                cfg.trials,
                cfg.n_mc,
                rng::derive(seed, 10 + mi as u64),
            )?;
            out.extend(rows.into_iter().map(|row| ConcentrationRow {
                model: model.to_string(),
                matrix: matrix_name(kind).to_string(),
                row,
            }));
        }
    }
    Ok(out)
}

fn matrix_name(kind: MatrixKind) -> &'static str {
    match kind {
        MatrixKind::Hessian => "hessian",
        MatrixKind::G => "g",
    }
}

fn spectral_tables(runs: &[SpectralRun]) -> (Table, Table, Table) {
    let mut align = Table::new(&["seed", "step", "t", "matrix", "block", "alignment"]);
    let mut traces = Table::new(&["seed", "step", "t", "matrix", "block", "rank", "eigenvalue", "bulk_edge", "outliers"]);
    let mut spectra =
        Table::new(&["seed", "step", "t", "matrix", "block", "top_eigenvalue", "bulk_edge", "outliers", "alignment"]);
    for run in runs {
        for s in &run.snapshots {
            let (m, b) = (matrix_name(s.matrix), s.block.to_string());
            if let Some(a) = s.alignment {
                align.push(crate::row![run.seed, s.step, s.t, m, b.clone(), a]);
            }
            for (rank, &ev) in s.eigenvalues.iter().enumerate() {
                traces.push(crate::row![run.seed, s.step, s.t, m, b.clone(), rank, ev, s.bulk_edge, s.outliers]);
            }
            spectra.push(crate::row![
                run.seed,
                s.step,
                s.t,
                m,
                b,
                s.eigenvalues.first().copied().unwrap_or(f64::NAN),
                s.bulk_edge,
                s.outliers,
                s.alignment.unwrap_or(f64::NAN)
            ]);
        }
    }
    (align, traces, spectra)
}

fn write_spectral(w: &mut ArtifactWriter, runs: &[SpectralRun], trace_block: BlockId) -> Result<()> {
    let (align, traces, spectra) = spectral_tables(runs);
    w.table("alignment.csv", &align)?;
    w.table("eigentraces.csv", &traces)?;
    w.table("spectra.csv", &spectra)?;
    for run in runs {
        let mut buf = Vec::new();
        run.trajectory.write_csv(&mut buf)?;
        w.write(&format!("seed_{}/trajectory.csv", run.seed), &String::from_utf8_lossy(&buf))?;
    }
    let Some(run) = runs.first() else { return Ok(()) };
    for matrix in [MatrixKind::Hessian, MatrixKind::G] {
        let name = matrix_name(matrix);
        let mut blocks: Vec<BlockId> = run.snapshots.iter().filter(|s| s.alignment.is_some()).map(|s| s.block).collect();
        blocks.dedup();
        blocks.sort_by_key(|b| b.to_string());
        blocks.dedup();
        let series: Vec<Series> = blocks
            .iter()
            .map(|&b| Series::new(b.to_string(), run.select(matrix, b).filter_map(|s| s.alignment.map(|a| (s.t, a))).collect()))
            .collect();
        w.chart(&format!("alignment_{name}.svg"), &format!("alignment with top eigenspace ({name})"), "t", "alignment", &series)?;
        let snaps: Vec<&SpectralSnapshot> = run.select(matrix, trace_block).collect();
        let n = snaps.iter().map(|s| s.eigenvalues.len()).min().unwrap_or(0);
        let series: Vec<Series> = (0..n)
            .map(|i| Series::new(format!("λ{}", i + 1), snaps.iter().map(|s| (s.t, s.eigenvalues[i])).collect()))
            .collect();
        w.chart(&format!("eigentraces_{name}.svg"), &format!("eigenvalues of block {trace_block} ({name})"), "t", "eigenvalue", &series)?;
    }
    Ok(())
}

fn summary_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Runs the configured experiment and writes its artifacts under
/// `output_dir/<experiment>/`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Manifest> {
    cfg.validate()?;
    let slug = cfg.experiment.slug();
    let mut w = ArtifactWriter::new(&cfg.output_dir.join(slug))?;
    let summary = match cfg.experiment {
        Experiment::Fig1Alignment => {
            let runs = fig1_alignment(cfg)?;
            write_spectral(&mut w, &runs, BlockId::Class(0, 0))?;
            let min_late: Vec<f64> = runs
                .iter()
                .map(|r| r.snapshots.iter().filter(|s| s.t >= cfg.horizon / 2.0).filter_map(|s| s.alignment).fold(1.0, f64::min))
                .collect();
            summary_json(&serde_json::json!({ "min_alignment_second_half": min_late }))
        }
        Experiment::Fig2Snapshots => {
            let runs = fig2_snapshots(cfg)?;
            write_spectral(&mut w, &runs, BlockId::Class(0, 0))?;
            let run = runs.first().ok_or(Error::Config("no seeds".into()))?;
            let x1 = run.trajectory.final_params.as_one_layer()?.x.row(0).transpose();
            let mut header = vec!["index".to_string(), "x1".to_string()];
            let mut cols: Vec<DVector<f64>> = vec![x1.clone()];
            for matrix in [MatrixKind::Hessian, MatrixKind::G] {
                if let Some(s) = run.select(matrix, BlockId::Class(0, 0)).last() {
                    for (i, v) in s.vectors.iter().flatten().enumerate() {
                        header.push(format!("{}_{i}", matrix_name(matrix)));
                        cols.push(v.clone());
                    }
                }
            }
            let mut t = Table { header, rows: vec![] };
            for j in 0..x1.len() {
                let mut row = vec![Cell::from(j)];
                row.extend(cols.iter().map(|c| Cell::from(c[j])));
                t.push(row);
            }
            w.table("vectors.csv", &t)?;
            let idx = |v: &DVector<f64>| v.iter().enumerate().map(|(j, &y)| (j as f64, y)).collect::<Vec<_>>();
            w.chart("x1_coordinates.svg", "entries of x¹ at the end of training", "coordinate", "value", &[Series::new("x1", idx(&x1))])?;
            for (ci, h) in t.header.iter().enumerate().skip(2) {
                if h.ends_with("_0") {
                    let name = h.trim_end_matches("_0");
                    let series: Vec<Series> = t
                        .header
                        .iter()
                        .enumerate()
                        .skip(ci)
                        .take_while(|(_, hh)| hh.starts_with(name))
                        .map(|(i, hh)| Series::new(hh.clone(), idx(&cols[i - 1])))
                        .collect();
                    w.chart(&format!("eigenvectors_{name}.svg"), &format!("top eigenvectors ({name})"), "coordinate", "value", &series)?;
                }
            }
            summary_json(&serde_json::json!({ "seeds": runs.len() }))
        }
        Experiment::Fig3Bbp => {
            let runs = fig3_bbp(cfg)?;
            write_spectral(&mut w, &runs, BlockId::Class(0, 0))?;
            let mut t = Table::new(&["seed", "t", "mean", "overlap"]);
            for run in &runs {
                for rec in &run.trajectory.records {
                    let m = &rec.summary.as_kgmm()?.m;
                    for a in 0..m.ncols() {
                        t.push(crate::row![run.seed, rec.t, a, m[(0, a)]]);
                    }
                }
            }
            w.table("overlaps.csv", &t)?;
            if let Some(run) = runs.first() {
                let series: Vec<Series> = (0..cfg.k)
                    .map(|a| {
                        let pts = run.trajectory.records.iter().map(|r| (r.t, r.summary.as_kgmm().map_or(f64::NAN, |s| s.m[(0, a)]))).collect();
                        Series::new(format!("⟨x¹, μ{}⟩", a + 1), pts)
                    })
                    .collect();
                w.chart("overlaps.svg", "overlaps of x¹ with the means", "t", "inner product", &series)?;
            }
            summary_json(&serde_json::json!({ "seeds": runs.len() }))
        }
        Experiment::Fig4XorAlignment | Experiment::Fig5XorBbp => {
            let runs = if cfg.experiment == Experiment::Fig4XorAlignment { fig4_xor_alignment(cfg)? } else { fig5_xor_bbp(cfg)? };
            write_spectral(&mut w, &runs, BlockId::Vv)?;
            let q: Vec<Quality> = runs.iter().filter_map(|r| r.quality).collect();
            summary_json(&q)
        }
        Experiment::Fig6RankDeficient => {
            let (rows, runs) = fig6_rank_deficient(cfg)?;
            let mut t = Table::new(&["width", "seed", "discerned", "test_error", "outliers_g_init", "outliers_g_end", "outliers_h_end"]);
            for r in &rows {
                t.push(crate::row![r.width, r.seed, r.discerned, r.test_error, r.outliers_g_init, r.outliers_g_end, r.outliers_h_end]);
            }
            w.table("runs.csv", &t)?;
            let (_, traces, spectra) = spectral_tables(&runs);
            w.table("eigentraces.csv", &traces)?;
            w.table("spectra.csv", &spectra)?;
            for bucket in 1..=4 {
                let Some(pos) = rows.iter().position(|r| r.discerned == bucket) else { continue };
                let snaps: Vec<&SpectralSnapshot> = runs[pos].select(MatrixKind::G, BlockId::Vv).collect();
                let n = snaps.iter().map(|s| s.eigenvalues.len()).min().unwrap_or(0);
                let series: Vec<Series> =
                    (0..n).map(|i| Series::new(format!("λ{}", i + 1), snaps.iter().map(|s| (s.t, s.eigenvalues[i])).collect())).collect();
                w.chart(&format!("vv_g_discerned_{bucket}.svg"), &format!("vv block of G, {bucket} hidden classes discerned"), "t", "eigenvalue", &series)?;
            }
            let bucketed: Vec<&RankRow> = rows.iter().filter(|r| (1..=4).contains(&r.discerned)).collect();
            let matched = bucketed.iter().filter(|r| r.outliers_g_end == r.discerned).count();
            summary_json(&serde_json::json!({ "bucketed": bucketed.len(), "matched": matched }))
        }
        Experiment::OdeVsSgd => {
            let res = ode_vs_sgd(cfg)?;
            for r in &res {
                let mut buf = Vec::new();
                r.sgd.write_csv(&mut buf)?;
                w.write(&format!("seed_{}/trajectory.csv", r.seed), &String::from_utf8_lossy(&buf))?;
                let mut buf = Vec::new();
                r.ode.write_csv(&mut buf)?;
                w.write(&format!("seed_{}/ode.csv", r.seed), &String::from_utf8_lossy(&buf))?;
                let mut buf = Vec::new();
                r.comparison.write_csv(&mut buf)?;
                w.write(&format!("seed_{}/gap.csv", r.seed), &String::from_utf8_lossy(&buf))?;
            }
            if let Some(r) = res.first() {
                let mut series = Vec::new();
                for a in 0..cfg.k.min(5) {
                    let sgd: Vec<(f64, f64)> = r.sgd.records.iter().map(|x| (x.t, x.summary.as_kgmm().map_or(f64::NAN, |s| s.m[(a, a)]))).collect();
                    let ode: Vec<(f64, f64)> = r.ode.times.iter().zip(&r.ode.states).map(|(&t, s)| (t, s.as_kgmm().map_or(f64::NAN, |s| s.m[(a, a)]))).collect();
                    series.push(Series::new(format!("SGD m{a}{a}"), sgd));
                    series.push(Series::new(format!("ODE m{a}{a}"), ode));
                }
                w.chart("ode_vs_sgd.svg", "diagonal overlaps: SGD and ODE", "t", "m_aa", &series)?;
                let gap: Vec<(f64, f64)> = r.comparison.times.iter().copied().zip(r.comparison.gaps.iter().copied()).collect();
                w.chart("gap.svg", "sup-norm gap between SGD and ODE", "t", "gap", &[Series::new("gap", gap)])?;
            }
            let gaps: Vec<f64> = res.iter().map(|r| r.comparison.sup_gap).collect();
            summary_json(&serde_json::json!({ "sup_gaps": gaps }))
        }
        Experiment::FixedPoints => {
            let rep = fixed_points(cfg)?;
            let text = serde_json::to_string_pretty(&rep).map_err(|e| Error::Config(e.to_string()))?;
            w.write("fixed_points.json", &text)?;
            let mut t = Table::new(&["a", "b", "m"]);
            for a in 0..cfg.k {
                for b in 0..cfg.k {
                    t.push(crate::row![a, b, rep.kgmm.m[(a, b)]]);
                }
            }
            w.table("kgmm_fixed_point.csv", &t)?;
            let mut t = Table::new(&["partition", "unit", "v", "m_mu", "m_nu"]);
            for fp in &rep.xor {
                for i in 0..fp.point.v.len() {
                    t.push(crate::row![fp.name.clone(), i, fp.point.v[i], fp.point.m_mu[i], fp.point.m_nu[i]]);
                }
            }
            w.table("xor_fixed_points.csv", &t)?;
            let series: Vec<Series> =
                (0..cfg.k).map(|a| Series::new(format!("column {}", a + 1), (0..cfg.k).map(|b| (b as f64, rep.kgmm.m[(b, a)])).collect())).collect();
            w.chart("kgmm_fixed_point.svg", "fixed point of the noiseless one-layer flow", "row", "m", &series)?;
            summary_json(&serde_json::json!({ "kgmm_residual": rep.kgmm_residual }))
        }
        Experiment::ConcentrationSweep => {
            let rows = concentration_sweep(cfg)?;
            let mut t = Table::new(&["model", "matrix", "point", "alpha", "deviation_mean", "deviation_sd", "d", "lambda", "trials"]);
            for r in &rows {
                let p = &r.row;
                t.push(crate::row![r.model.clone(), r.matrix.clone(), p.point, p.alpha, p.deviation_mean, p.deviation_sd, p.dimension, p.lambda, p.trials]);
            }
            w.table("concentration.csv", &t)?;
            let mut series = Vec::new();
            for model in ["kgmm", "xor"] {
                for matrix in ["hessian", "g"] {
                    for point in 0..cfg.points {
                        let pts: Vec<(f64, f64)> = rows
                            .iter()
                            .filter(|r| r.model == model && r.matrix == matrix && r.row.point == point)
                            .map(|r| (r.row.alpha, r.row.deviation_mean))
                            .collect();
                        series.push(Series::new(format!("{model} {matrix} #{point}"), pts));
                    }
                }
            }
            w.chart("concentration.svg", "operator-norm deviation from the population matrix", "α = M/d", "deviation", &series)?;
            summary_json(&serde_json::json!({ "rows": rows.len() }))
        }
    };
    w.finish(slug, cfg.hash()?, cfg.to_toml()?, summary)
}

/// The initial summary the ODE commands start from: `m = 0`, `R⊥ = I` and,
/// for the two-layer model, `v ~ N(0, I)`.
pub fn default_initial_summary(spec: &MixtureSpec, width: usize, seed: u64) -> SummaryStats {
    match spec.kind {
        crate::mixtures::MixtureKind::KGmm => {
            let k = spec.k();
            SummaryStats::KGmm(KGmmSummary { m: DMatrix::zeros(k, k), rperp: DMatrix::identity(k, k) })
        }
        crate::mixtures::MixtureKind::Xor => {
            let mut r = rng::stream(seed, 0x76);
            SummaryStats::Xor(XorSummary {
                v: DVector::from_fn(width, |_, _| r.sample::<f64, _>(StandardNormal)),
                m_mu: DVector::zeros(width),
                m_nu: DVector::zeros(width),
                rperp: DMatrix::identity(width, width),
            })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Kgmm,
    Xor,
}

impl Model {
    fn spec(self, cfg: &ExperimentConfig) -> Result<MixtureSpec> {
        match self {
            Model::Kgmm => cfg.kgmm_spec(),
            Model::Xor => cfg.xor_spec(),
        }
    }

    fn width(self, cfg: &ExperimentConfig) -> usize {
        match self {
            Model::Kgmm => 0,
            Model::Xor => cfg.width,
        }
    }
}

fn loss_chart(w: &mut ArtifactWriter, traj: &Trajectory) -> Result<()> {
    let loss: Vec<(f64, f64)> = traj.records.iter().map(|r| (r.t, r.loss)).collect();
    w.chart("loss.svg", "running training loss", "t", "loss", &[Series::new("loss", loss)])?;
    Ok(())
}

/// Online SGD only: one `trajectory.csv` per seed.
pub fn run_train(cfg: &ExperimentConfig, model: Model) -> Result<Manifest> {
    let spec = model.spec(cfg)?;
    let mut w = ArtifactWriter::new(&cfg.output_dir.join("train"))?;
    let mut final_loss = Vec::new();
    for &seed in &cfg.seeds {
        let (traj, _) = train(cfg, &spec, model.width(cfg), seed, &[]).map_err(|e| e.at("train"))?;
        let mut buf = Vec::new();
        traj.write_csv(&mut buf)?;
        w.write(&format!("seed_{seed}/trajectory.csv"), &String::from_utf8_lossy(&buf))?;
        if seed == cfg.seeds[0] {
            loss_chart(&mut w, &traj)?;
        }
        final_loss.push(traj.records.last().map_or(f64::NAN, |r| r.loss));
    }
    w.finish("train", cfg.hash()?, cfg.to_toml()?, serde_json::json!({ "final_loss": final_loss }))
}

/// Integrates the effective ODE (finite or infinite `λ` from the config)
/// from the default initial summary.
pub fn run_ode(cfg: &ExperimentConfig, model: Model) -> Result<Manifest> {
    let spec = model.spec(cfg)?;
    let mut w = ArtifactWriter::new(&cfg.output_dir.join("ode"))?;
    let seed = cfg.seeds[0];
    let sys = OdeSystem::for_spec(spec.clone(), cfg.beta, cfg.c_delta)?
        .with_mc(cfg.n_mc, rng::derive(seed, 0x6f6465))
        .with_perp_decay(cfg.perp_decay);
    let u0 = default_initial_summary(&spec, cfg.width, seed);
    let every = ((1.0 / cfg.dt).round() as usize).max(1);
    let ode = dynamics::integrate(&sys, &u0, cfg.horizon, cfg.dt, every).map_err(|e| e.at("ode"))?;
    let mut buf = Vec::new();
    ode.write_csv(&mut buf)?;
    w.write("trajectory.csv", &String::from_utf8_lossy(&buf))?;
    let names = u0.names();
    let flat: Vec<Vec<f64>> = ode.states.iter().map(|s| s.to_flat()).collect();
    let series: Vec<Series> = names
        .iter()
        .enumerate()
        .filter(|(_, n)| !n.starts_with("rperp"))
        .take(20)
        .map(|(i, n)| Series::new(n.clone(), ode.times.iter().zip(&flat).map(|(&t, f)| (t, f[i])).collect()))
        .collect();
    w.chart("ode.svg", "effective dynamics", "t", "value", &series)?;
    w.finish("ode", cfg.hash()?, cfg.to_toml()?, serde_json::json!({ "max_drift_norm": ode.max_drift_norm }))
}
