mod common;

use common::oracles::*;
use common::*;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use spectral_sgd::mixtures::{MixtureSpec, Noise};
use spectral_sgd::nets::{OneLayer, ParamState, TwoLayer};
use spectral_sgd::population::*;
use spectral_sgd::spectra::{assemble, BlockId, MatrixKind};

fn op_norm(m: DMatrix<f64>) -> f64 {
    SymmetricEigen::new((&m + m.transpose()) * 0.5).eigenvalues.amax()
}

#[test]
fn zero_point_matches_uniform_softmax_closed_form() {
    for (err, se) in kgmm_zero_point_errors(1, 20_000) {
        assert!(err <= 3.0 * se + 1e-12, "error {err:e} vs se {se:e}");
    }
}

/// Monte-Carlo population blocks against the average of many empirical
/// blocks, with batch-mean standard errors on the empirical side.
#[test]
fn population_blocks_match_large_sample_average() {
    let mut r = stream(2);
    let (k, d) = (3, 6);
    let spec = MixtureSpec::kgmm(random_means(&mut r, k, d), vec![0.4, 0.35, 0.25], Noise::Precision(4.0)).unwrap();
    let x = OneLayer::new(gaussian_matrix(&mut r, k, d, 0.7));
    let pairs = [(0, 0), (0, 1), (2, 2), (1, 2)];
    let (batches, per) = (20, 20_000);
    for kind in [MatrixKind::Hessian, MatrixKind::G] {
        let pop = kgmm_pop_blocks(&x, &spec, kind, &pairs, 200_000, 7).unwrap();
        let emp: Vec<Vec<DMatrix<f64>>> = (0..batches)
            .map(|bi| {
                let fq = assemble(&spec.sample(100 + bi, per), &ParamState::OneLayer(x.clone()), kind).unwrap();
                pairs.iter().map(|&(b, c)| fq.dense_block(BlockId::Class(b, c)).unwrap()).collect()
            })
            .collect();
        for (slot, est) in pop.iter().enumerate() {
            let mean = emp.iter().map(|e| &e[slot]).fold(DMatrix::zeros(d, d), |a, b| a + b) / batches as f64;
            let ss: f64 = emp.iter().map(|e| op_norm(&e[slot] - &mean).powi(2)).sum();
            let se_emp = (ss / (batches * (batches - 1)) as f64).sqrt();
            let err = op_norm(est.dense() - &mean);
            assert!(err <= 4.0 * (se_emp + est.mc_error_bar), "{kind:?} {:?}: {err:e} vs {se_emp:e} + {:e}", pairs[slot], est.mc_error_bar);
        }
    }
}

#[test]
fn population_g_is_psd_and_hessian_rows_sum_to_zero() {
    let mut r = stream(3);
    let (k, d) = (3, 5);
    let spec = MixtureSpec::kgmm_uniform(random_means(&mut r, k, d), Noise::Precision(2.0)).unwrap();
    let x = OneLayer::new(gaussian_matrix(&mut r, k, d, 1.0));
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|b| (0..k).map(move |c| (b, c))).collect();
    for kind in [MatrixKind::Hessian, MatrixKind::G] {
        let blocks = kgmm_pop_blocks(&x, &spec, kind, &pairs, 5000, 1).unwrap();
        let mut full = DMatrix::zeros(k * d, k * d);
        for (est, &(b, c)) in blocks.iter().zip(&pairs) {
            full.view_mut((b * d, c * d), (d, d)).copy_from(&est.dense());
        }
        assert!(SymmetricEigen::new((&full + full.transpose()) * 0.5).eigenvalues.min() > -1e-10);
        if kind == MatrixKind::Hessian {
            for b in 0..k {
                let row: DMatrix<f64> = (0..k).map(|c| blocks[b * k + c].dense()).fold(DMatrix::zeros(d, d), |a, m| a + m);
                assert!(row.amax() < 1e-12);
            }
        }
    }
}

#[test]
fn low_rank_part_lives_in_means_and_weights() {
    let mut r = stream(4);
    let (k, d) = (2, 30);
    let spec = MixtureSpec::kgmm_uniform(random_means(&mut r, k, d), Noise::Precision(5.0)).unwrap();
    let x = OneLayer::new(gaussian_matrix(&mut r, k, d, 0.5));
    let est = kgmm_pop_hessian_block(&x, &spec, 0, 0, 2000, 1).unwrap();
    let span: Vec<DVector<f64>> =
        (0..k).map(|a| spec.means.row(a).transpose()).chain((0..k).map(|a| x.x.row(a).transpose())).collect();
    for (_, v) in est.low_rank_part() {
        assert!((spectral_sgd::linalg::alignment(&v, &span).unwrap() - 1.0).abs() < 1e-10);
    }
    assert!(est.low_rank_part().len() <= 2 * k);
}

#[test]
fn wrong_inputs_are_rejected() {
    let spec = MixtureSpec::xor_axes(6, 1, Noise::Precision(5.0)).unwrap();
    assert!(kgmm_pop_hessian_block(&OneLayer::zeros(2, 6), &spec, 0, 0, 100, 1).is_err());
    let kspec = MixtureSpec::kgmm_uniform(DMatrix::identity(2, 6), Noise::Precision(5.0)).unwrap();
    assert!(kgmm_pop_hessian_block(&OneLayer::zeros(2, 6), &kspec, 0, 2, 100, 1).is_err());
    let p = TwoLayer::new(DMatrix::from_element(4, 6, 0.1), DVector::zeros(4)).unwrap();
    assert!(xor_pop_vv(&p, &kspec, MatrixKind::G).is_err());
    let mut dead = p.clone();
    dead.w.row_mut(1).fill(0.0);
    assert!(xor_pop_wiwi(&dead, &spec, 1, MatrixKind::G).is_err());
    assert!(psi2(&spec.mu(), &dead.w, 10.0).is_err());
}

/// Two-layer four-term approximations against a large empirical sample:
/// the gap must sit inside the analytic budget.
#[test]
fn xor_four_term_blocks_within_budget() {
    let d = 40;
    let mut r = stream(5);
    for lambda in [10.0, 50.0] {
        let spec = MixtureSpec::xor_axes(d, 1, Noise::Precision(lambda)).unwrap();
        let p = TwoLayer::new(gaussian_matrix(&mut r, 5, d, 0.5), gaussian_vector(&mut r, 5, 1.0)).unwrap();
        let samples = spec.sample(9, 100_000);
        for kind in [MatrixKind::Hessian, MatrixKind::G] {
            let fq = assemble(&samples, &ParamState::TwoLayer(p.clone()), kind).unwrap();
            let est = xor_pop_vv(&p, &spec, kind).unwrap();
            let err = op_norm(est.dense() - fq.dense_block(BlockId::Vv).unwrap());
            assert!(err <= est.mc_error_bar, "vv {kind:?}: {err} > {}", est.mc_error_bar);
            for i in 0..5 {
                let est = xor_pop_wiwi(&p, &spec, i, kind).unwrap();
                let emp = fq.dense_block(BlockId::Ww(i, i)).unwrap();
                let err = op_norm(est.dense() - emp);
                // the budget is stated per unit v_i²
                let scale = p.v[i] * p.v[i];
                assert!(err <= scale * est.mc_error_bar, "W{i} {kind:?}: {err} > {}", est.mc_error_bar);
            }
        }
    }
}

#[test]
fn noiseless_xor_blocks_are_exact() {
    let d = 8;
    let spec = MixtureSpec::xor_axes(d, 1, Noise::Zero).unwrap();
    let mut r = stream(6);
    let p = TwoLayer::new(gaussian_matrix(&mut r, 4, d, 1.0), gaussian_vector(&mut r, 4, 1.0)).unwrap();
    let samples = spec.sample(1, 4000);
    for kind in [MatrixKind::Hessian, MatrixKind::G] {
        let fq = assemble(&samples, &ParamState::TwoLayer(p.clone()), kind).unwrap();
        // the empirical average over component frequencies; the population puts ¼ on each
        let mut counts = [0usize; 4];
        for s in &samples {
            counts[s.component] += 1;
        }
        let est = xor_pop_vv(&p, &spec, kind).unwrap();
        let mut reweighted = est.core.clone();
        for t in 0..4 {
            reweighted[(t, t)] *= 4.0 * counts[t] as f64 / samples.len() as f64;
        }
        let rebuilt = est.basis.transpose() * reweighted * &est.basis;
        assert!((rebuilt - fq.dense_block(BlockId::Vv).unwrap()).amax() < 1e-12);
        assert_eq!(est.mc_error_bar, 0.0);
    }
}

#[test]
fn normal_helpers() {
    assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
    assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-11);
    assert!((normal_tail(3.0) / 1.3498980316301035e-3 - 1.0).abs() < 1e-10);
    let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
    assert!((psd_sqrt(&m) - DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0])).amax() < 1e-14);
}

proptest! {
    #[test]
    fn psi2_noiseless_limit(seed in 0u64..2000) {
        let mut r = stream(seed);
        let w = gaussian_matrix(&mut r, 4, 5, 1.0);
        let theta = gaussian_vector(&mut r, 5, 1.0);
        // no Gaussian width and no tails when every preactivation is nonzero
        prop_assert_eq!(psi2(&theta, &w, f64::INFINITY).unwrap(), 0.0);
        let small = psi2(&theta, &w, 1e6).unwrap();
        let big = psi2(&theta, &w, 1.0).unwrap();
        prop_assert!(small >= 0.0 && small < big);
    }

    #[test]
    fn xor_vv_is_psd_and_rank_at_most_four(seed in 0u64..2000) {
        let mut r = stream(seed);
        let spec = MixtureSpec::xor_axes(6, 1, Noise::Precision(5.0)).unwrap();
        let p = TwoLayer::new(gaussian_matrix(&mut r, 6, 6, 1.0), gaussian_vector(&mut r, 6, 1.0)).unwrap();
        for kind in [MatrixKind::Hessian, MatrixKind::G] {
            let e = SymmetricEigen::new(xor_pop_vv(&p, &spec, kind).unwrap().dense()).eigenvalues;
            prop_assert!(e.min() > -1e-12);
            prop_assert!(e.iter().filter(|&&l| l > 1e-12).count() <= 4);
        }
    }
}
