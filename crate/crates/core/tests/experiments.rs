use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use spectral_sgd::experiments::*;
use spectral_sgd::mixtures::{MixtureSpec, Noise};
use spectral_sgd::nets::TwoLayer;
use spectral_sgd::spectra::{BlockId, MatrixKind};

fn tiny(experiment: Experiment, out: &Path) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset(experiment, false);
    c.d = 24;
    c.k = 3;
    c.width = 5;
    c.horizon = 4.0;
    c.eig_every = 2.0;
    c.seeds = vec![0, 1];
    c.test_samples = 500;
    c.n_mc = 400;
    c.dt = 0.1;
    c.output_dir = out.to_path_buf();
    c
}

fn read(root: &Path, m: &Manifest, name: &str) -> String {
    fs::read_to_string(root.join(&m.experiment).join(name)).unwrap()
}

#[test]
fn config_roundtrip_and_hash() {
    let c = ExperimentConfig::preset(Experiment::Fig4XorAlignment, true);
    let text = c.to_toml().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), c);
    assert_eq!(c.hash().unwrap(), c.clone().hash().unwrap());
    assert_eq!(c.hash().unwrap().len(), 64);
    let changed = c.with_overrides(&[("beta".into(), "0.02".into())]).unwrap();
    assert_eq!(changed.beta, 0.02);
    assert_ne!(changed.hash().unwrap(), c.hash().unwrap());

    let partial = ExperimentConfig::from_toml("d = 64\nseeds = [4]\nlambda = inf\ndecay = \"literal\"\n").unwrap();
    assert_eq!((partial.d, partial.seeds.clone()), (64, vec![4]));
    assert!(partial.lambda.is_infinite());
    assert_eq!(partial.noise(), Noise::Zero);
    assert!(ExperimentConfig::from_toml("dimension = 3").is_err());
    let o = c.with_overrides(&[("matrix_source".into(), "train_pool".into()), ("seeds".into(), "[7, 8]".into())]).unwrap();
    assert_eq!(o.matrix_source, MatrixSource::TrainPool);
    assert_eq!(o.seeds, vec![7, 8]);
}

#[test]
fn presets_validate_and_bad_values_do_not() {
    for e in [
        Experiment::Fig1Alignment,
        Experiment::Fig2Snapshots,
        Experiment::Fig3Bbp,
        Experiment::Fig4XorAlignment,
        Experiment::Fig5XorBbp,
        Experiment::Fig6RankDeficient,
        Experiment::OdeVsSgd,
        Experiment::FixedPoints,
        Experiment::ConcentrationSweep,
    ] {
        for full in [false, true] {
            ExperimentConfig::preset(e, full).validate().unwrap();
        }
    }
    let base = ExperimentConfig::preset(Experiment::Fig1Alignment, false);
    for (k, v) in [("k", "1"), ("lambda", "0.0"), ("seeds", "[]"), ("c_delta", "0.0"), ("spacing", "100")] {
        assert!(base.with_overrides(&[(k.into(), v.into())]).unwrap().validate().is_err(), "{k}={v}");
    }
    let xor = ExperimentConfig::preset(Experiment::Fig4XorAlignment, false);
    assert!(xor.with_overrides(&[("width".into(), "3".into())]).unwrap().validate().is_err());
    assert_eq!(Experiment::from_figure("fig5").unwrap(), Experiment::Fig5XorBbp);
    assert!(Experiment::from_figure("fig7").is_err());
}

#[test]
fn eig_schedule_and_sizes() {
    let mut c = ExperimentConfig::preset(Experiment::Fig1Alignment, false);
    c.horizon = 12.0;
    c.eig_every = 5.0;
    assert_eq!(eig_times(&c), vec![0.0, 5.0, 10.0, 12.0]);
    c.eig_from = 10.0;
    assert_eq!(eig_times(&c), vec![10.0, 12.0]);
    assert_eq!(c.test_matrix_size(), 800);
    assert_eq!(c.stride(), 200);
    assert_eq!(c.effective_spacing(), 40);
    assert_eq!(c.pool_size(), (800.0 * 200f64.ln()).ceil() as usize);
}

#[test]
fn quality_counts_discerned_classes() {
    let spec = MixtureSpec::xor_axes(6, 1, Noise::Zero).unwrap();
    let (mu, nu) = (spec.mu(), spec.nu());
    let full = DMatrix::from_rows(&[mu.transpose(), -mu.transpose(), nu.transpose(), -nu.transpose()]);
    let p = TwoLayer::new(full, DVector::from_vec(vec![1.0, 1.0, -1.0, -1.0])).unwrap();
    let q = classify_quality(&p, &spec, 0.1, 4000, 1);
    assert_eq!(q.discerned, 4);
    assert_eq!(q.test_error, 0.0);
    assert_eq!(q.class_norms, [1.0; 4]);

    let one = DMatrix::from_fn(4, 6, |_, j| mu[j]);
    let p = TwoLayer::new(one, DVector::from_element(4, 1.0)).unwrap();
    let q = classify_quality(&p, &spec, 0.1, 4000, 1);
    assert_eq!(q.discerned, 1);
    // only the −μ component is misclassified
    assert!((q.test_error - 0.25).abs() < 0.03);

    let dead = TwoLayer::new(DMatrix::zeros(4, 6), DVector::from_element(4, 1.0)).unwrap();
    assert_eq!(classify_quality(&dead, &spec, 0.1, 10, 1).discerned, 0);
}

#[test]
fn spectral_run_is_reproducible_and_manifest_complete() {
    let dir = tempfile::tempdir().unwrap();
    let a = tiny(Experiment::Fig1Alignment, &dir.path().join("a"));
    let b = tiny(Experiment::Fig1Alignment, &dir.path().join("b"));
    let ma = run_experiment(&a).unwrap();
    let mb = run_experiment(&b).unwrap();
    assert_eq!(ma.config_hash, a.hash().unwrap());
    for name in ["alignment.csv", "spectra.csv", "eigentraces.csv", "seed_0/trajectory.csv", "seed_1/trajectory.csv", "alignment_hessian.svg", "eigentraces_g.svg"] {
        assert!(ma.files.iter().any(|f| f.path == name), "{name} missing");
    }
    for f in &ma.files {
        let body = fs::read(a.output_dir.join(&ma.experiment).join(&f.path)).unwrap();
        assert_eq!(body.len() as u64, f.bytes);
        assert_eq!(body, fs::read(b.output_dir.join(&mb.experiment).join(&f.path)).unwrap(), "{} differs", f.path);
    }
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(a.output_dir.join(&ma.experiment).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.files.len(), ma.files.len());
    assert_eq!(ExperimentConfig::from_toml(&manifest.config).unwrap(), a);

    let align = read(&a.output_dir, &ma, "alignment.csv");
    let mut lines = align.lines();
    assert_eq!(lines.next().unwrap(), "seed,step,t,matrix,block,alignment");
    // 2 seeds × 3 times × 2 matrices × 3 classes
    assert_eq!(lines.count(), 36);
    let traj = read(&a.output_dir, &ma, "seed_0/trajectory.csv");
    let row: Vec<&str> = traj.lines().nth(2).unwrap().split(',').collect();
    let val: f64 = row[2].parse().unwrap();
    assert_eq!(spectral_sgd::fmt17(val), row[2]);
}

#[test]
fn every_experiment_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(Experiment, &[&str])> = vec![
        (Experiment::Fig2Snapshots, &["vectors.csv", "x1_coordinates.svg", "eigenvectors_hessian.svg"]),
        (Experiment::Fig3Bbp, &["overlaps.csv", "eigentraces.csv", "overlaps.svg"]),
        (Experiment::Fig4XorAlignment, &["alignment.csv", "spectra.csv", "eigentraces_hessian.svg"]),
        (Experiment::Fig5XorBbp, &["eigentraces.csv", "seed_1/trajectory.csv"]),
        (Experiment::Fig6RankDeficient, &["runs.csv", "spectra.csv"]),
        (Experiment::OdeVsSgd, &["seed_0/ode.csv", "seed_0/gap.csv", "gap.svg", "ode_vs_sgd.svg"]),
        (Experiment::FixedPoints, &["fixed_points.json", "kgmm_fixed_point.csv", "xor_fixed_points.csv"]),
    ];
    for (e, files) in cases {
        let mut c = tiny(e, dir.path());
        if e == Experiment::Fig6RankDeficient {
            c.fig6_widths = vec![4];
        }
        let m = run_experiment(&c).unwrap();
        assert_eq!(m.experiment, e.slug());
        for name in files {
            assert!(m.files.iter().any(|f| f.path == *name), "{e:?}: {name} missing");
        }
        assert!(dir.path().join(e.slug()).join("manifest.json").exists());
    }
}

#[test]
fn concentration_sweep_rows() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = tiny(Experiment::ConcentrationSweep, dir.path());
    c.d = 16;
    c.points = 2;
    c.trials = 2;
    c.alphas = vec![1.0, 4.0];
    c.n_mc = 2000;
    let rows = concentration_sweep(&c).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 2 * 2);
    assert!(rows.iter().all(|r| r.row.deviation_mean > 0.0 && r.row.dimension == 16));
    let m = run_experiment(&c).unwrap();
    let csv = read(dir.path(), &m, "concentration.csv");
    assert_eq!(csv.lines().next().unwrap(), "model,matrix,point,alpha,deviation_mean,deviation_sd,d,lambda,trials");
}

#[test]
fn train_and_ode_commands() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(Experiment::Fig1Alignment, dir.path());
    for model in [Model::Kgmm, Model::Xor] {
        let m = run_train(&c, model).unwrap();
        assert!(m.files.iter().any(|f| f.path == "seed_0/trajectory.csv"));
        let m = run_ode(&c, model).unwrap();
        let csv = read(dir.path(), &m, "trajectory.csv");
        assert_eq!(csv.lines().count(), 1 + 1 + 4);
    }
}

#[test]
fn snapshots_report_alignment_for_own_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let c = tiny(Experiment::Fig4XorAlignment, dir.path());
    let runs = fig4_xor_alignment(&c).unwrap();
    for run in &runs {
        assert!(run.quality.is_some());
        for s in run.select(MatrixKind::G, BlockId::Ww(0, 0)) {
            assert!(s.alignment.is_some_and(|a| (0.0..=1.0).contains(&a)));
            assert!(s.eigenvalues.len() >= 2);
            assert!(s.eigenvalues.windows(2).all(|w| w[0].abs() >= w[1].abs()));
        }
        assert_eq!(run.select(MatrixKind::Hessian, BlockId::Vv).count(), 3);
    }
    let points = random_points(&c.xor_spec().unwrap(), 5, 3, 2).unwrap();
    assert_eq!(points.len(), 3);
    let chart = line_chart("t", "x", "y", &[Series::new("a<b", vec![(0.0, 1.0), (1.0, 2.0)])]);
    assert!(chart.starts_with("<svg") && chart.contains("a&lt;b") && chart.trim_end().ends_with("</svg>"));
}
