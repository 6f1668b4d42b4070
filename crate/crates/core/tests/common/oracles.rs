use nalgebra::{DMatrix, DVector, SymmetricEigen};
use spectral_sgd::linalg::{self, EigOptions};
use spectral_sgd::mixtures::{LabeledSample, MixtureSpec, Noise};
use spectral_sgd::nets::{OneLayer, ParamState, TwoLayer};
use spectral_sgd::spectra::{assemble, BlockId, MatrixKind};

use super::*;

/// Per-sample one-layer matrix on `R^{kd}`, built from a test-side softmax.
pub fn kgmm_sample_matrix(x: &OneLayer, s: &LabeledSample, kind: MatrixKind) -> DMatrix<f64> {
    let (k, d) = (x.k(), x.d());
    let z = &x.x * &s.features;
    let zmax = z.max();
    let e = z.map(|v| (v - zmax).exp());
    let pi = &e / e.sum();
    let coef = DMatrix::from_fn(k, k, |b, c| match kind {
        MatrixKind::Hessian => pi[b] * ((b == c) as u8 as f64) - pi[b] * pi[c],
        MatrixKind::G => {
            let rb = pi[b] - (s.class() == b) as u8 as f64;
            let rc = pi[c] - (s.class() == c) as u8 as f64;
            rb * rc
        }
    });
    coef.kronecker(&(&s.features * s.features.transpose())).resize(k * d, k * d, 0.0)
}

/// Per-sample two-layer matrix on `(v, W_1, …, W_K)`.
pub fn xor_sample_matrix(p: &TwoLayer, s: &LabeledSample, kind: MatrixKind) -> DMatrix<f64> {
    let (k, d) = (p.width(), p.d());
    let pre = &p.w * &s.features;
    let g = pre.map(|a| a.max(0.0));
    let gp = pre.map(|a| if a > 0.0 { 1.0 } else { 0.0 });
    let z = p.v.dot(&g);
    let yhat = 1.0 / (1.0 + (-z).exp());
    let y = s.binary();
    let mut grad_z = DVector::zeros(k + k * d);
    grad_z.rows_mut(0, k).copy_from(&g);
    for i in 0..k {
        grad_z.rows_mut(k + i * d, d).copy_from(&(&s.features * (p.v[i] * gp[i])));
    }
    match kind {
        MatrixKind::G => &grad_z * grad_z.transpose() * (yhat - y).powi(2),
        MatrixKind::Hessian => {
            let mut h = &grad_z * grad_z.transpose() * (yhat * (1.0 - yhat));
            for i in 0..k {
                for a in 0..d {
                    let c = (yhat - y) * gp[i] * s.features[a];
                    h[(i, k + i * d + a)] += c;
                    h[(k + i * d + a, i)] += c;
                }
            }
            h
        }
    }
}

pub fn kgmm_full_from_blocks(samples: &[LabeledSample], x: &OneLayer, kind: MatrixKind) -> DMatrix<f64> {
    let fq = assemble(samples, &ParamState::OneLayer(x.clone()), kind).unwrap();
    let (k, d) = (x.k(), x.d());
    let mut out = DMatrix::zeros(k * d, k * d);
    for b in 0..k {
        for c in 0..k {
            out.view_mut((b * d, c * d), (d, d)).copy_from(&fq.dense_block(BlockId::Class(b, c)).unwrap());
        }
    }
    out
}

pub fn xor_full_from_blocks(samples: &[LabeledSample], p: &TwoLayer, kind: MatrixKind) -> DMatrix<f64> {
    let fq = assemble(samples, &ParamState::TwoLayer(p.clone()), kind).unwrap();
    let (k, d) = (p.width(), p.d());
    let n = k + k * d;
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((0, 0), (k, k)).copy_from(&fq.dense_block(BlockId::Vv).unwrap());
    for i in 0..k {
        for j in 0..k {
            out.view_mut((k + i * d, k + j * d), (d, d)).copy_from(&fq.dense_block(BlockId::Ww(i, j)).unwrap());
        }
        let cross = fq.dense_cross(i).unwrap();
        out.view_mut((0, k + i * d), (k, d)).copy_from(&cross);
        out.view_mut((k + i * d, 0), (d, k)).copy_from(&cross.transpose());
    }
    out
}

/// Worst relative gap between the factorized assembly and the average of
/// per-sample dense matrices, over both models and both kinds.
pub fn factorized_vs_dense(seed: u64) -> f64 {
    let (d, m) = (20, 100);
    let mut r = stream(seed);
    let mut worst: f64 = 0.0;
    let kspec = MixtureSpec::kgmm_uniform(spectral_sgd::mixtures::orthonormal_means(3, d, 1).unwrap(), Noise::Precision(10.0)).unwrap();
    let xspec = MixtureSpec::xor_axes(d, 1, Noise::Precision(10.0)).unwrap();
    let x = OneLayer::new(gaussian_matrix(&mut r, 3, d, 1.0));
    let p = TwoLayer::new(gaussian_matrix(&mut r, 5, d, 1.0), gaussian_vector(&mut r, 5, 1.0)).unwrap();
    let ks = kspec.sample(seed, m);
    let xs = xspec.sample(seed + 1, m);
    for kind in [MatrixKind::Hessian, MatrixKind::G] {
        let mut dense = DMatrix::zeros(3 * d, 3 * d);
        for s in &ks {
            dense += kgmm_sample_matrix(&x, s, kind);
        }
        dense /= m as f64;
        let fact = kgmm_full_from_blocks(&ks, &x, kind);
        worst = worst.max((fact - &dense).amax() / dense.amax());

        let mut dense = DMatrix::zeros(5 + 5 * d, 5 + 5 * d);
        for s in &xs {
            dense += xor_sample_matrix(&p, s, kind);
        }
        dense /= m as f64;
        let fact = xor_full_from_blocks(&xs, &p, kind);
        worst = worst.max((fact - &dense).amax() / dense.amax());
    }
    worst
}

pub fn random_symmetric(r: &mut impl rand::Rng, n: usize) -> DMatrix<f64> {
    let a = gaussian_matrix(r, n, n, 1.0);
    (&a + a.transpose()) * 0.5
}

/// Largest eigenvalue error and largest residual of 5 Lanczos pairs against
/// a dense reference on a random 200×200 matrix with a few planted spikes.
pub fn lanczos_vs_dense(seed: u64) -> (f64, f64) {
    let mut r = stream(seed);
    let n = 200;
    let mut a = random_symmetric(&mut r, n) / (n as f64).sqrt();
    for (i, s) in [9.0, -7.0, 5.0].iter().enumerate() {
        let v = gaussian_vector(&mut r, n, 1.0).normalize();
        a += &v * v.transpose() * (*s + i as f64 * 0.1);
    }
    let dense = SymmetricEigen::new(a.clone());
    let mut want: Vec<f64> = dense.eigenvalues.iter().cloned().collect();
    want.sort_by(|x, y| y.abs().total_cmp(&x.abs()));
    let rep = linalg::top_eigs(&a, 5, &EigOptions { seed, ..Default::default() }).unwrap();
    let mut err: f64 = 0.0;
    let mut res: f64 = 0.0;
    for i in 0..5 {
        err = err.max((rep.eigenvalues[i] - want[i]).abs());
        let v = &rep.eigenvectors[i];
        res = res.max((&a * v - v * rep.eigenvalues[i]).norm());
    }
    (err, res)
}


/// Unit-norm random means (generic position).
pub fn random_means(r: &mut impl rand::Rng, k: usize, d: usize) -> DMatrix<f64> {
    let mut m = gaussian_matrix(r, k, d, 1.0);
    for mut row in m.row_iter_mut() {
        let n = row.norm();
        row /= n;
    }
    m
}

/// At `x = 0` the softmax is uniform, so
/// `H_bc = (δ_bc/k − 1/k²) E[YYᵀ]` and
/// `G_bc = Σ_l p_l (1/k − δ_bl)(1/k − δ_cl)(μ_l μ_lᵀ + I/λ)`.
pub fn kgmm_zero_closed_form(spec: &MixtureSpec, kind: MatrixKind, b: usize, c: usize) -> DMatrix<f64> {
    let (k, d) = (spec.k(), spec.d);
    let kf = k as f64;
    let il = spec.inv_lambda();
    let mut out = DMatrix::zeros(d, d);
    for l in 0..k {
        let mu = spec.means.row(l).transpose();
        let second = &mu * mu.transpose() + DMatrix::identity(d, d) * il;
        let w = match kind {
            MatrixKind::Hessian => ((b == c) as u8 as f64 / kf - 1.0 / kf / kf) * spec.probs[l],
            MatrixKind::G => {
                spec.probs[l] * (1.0 / kf - (b == l) as u8 as f64) * (1.0 / kf - (c == l) as u8 as f64)
            }
        };
        out += second * w;
    }
    out
}

/// `(operator-norm error, standard error)` of every Monte-Carlo block at
/// `x = 0` against the closed form, d = 10, k = 3.
pub fn kgmm_zero_point_errors(seed: u64, n_mc: usize) -> Vec<(f64, f64)> {
    use spectral_sgd::population::kgmm_pop_blocks;
    let mut r = stream(seed);
    let (k, d) = (3, 10);
    let spec = MixtureSpec::kgmm(random_means(&mut r, k, d), vec![0.5, 0.3, 0.2], Noise::Precision(3.0)).unwrap();
    let x = OneLayer::zeros(k, d);
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|b| (0..k).map(move |c| (b, c))).collect();
    let mut out = Vec::new();
    for kind in [MatrixKind::Hessian, MatrixKind::G] {
        let blocks = kgmm_pop_blocks(&x, &spec, kind, &pairs, n_mc, seed).unwrap();
        for (est, &(b, c)) in blocks.iter().zip(&pairs) {
            let diff = est.dense() - kgmm_zero_closed_form(&spec, kind, b, c);
            out.push((SymmetricEigen::new(diff).eigenvalues.amax(), est.mc_error_bar));
        }
    }
    out
}

/// ℓ∞ gap between the finite-`λ` and noiseless one-layer drifts, maximized
/// over a fixed grid of bounded states (k = 3, orthonormal means).
pub fn kgmm_drift_gap(lambda: f64, n_mc: usize) -> f64 {
    use spectral_sgd::dynamics::{OdeModel, OdeSystem};
    use spectral_sgd::sgd::{KGmmSummary, SummaryStats};
    let k = 3;
    let means = spectral_sgd::mixtures::orthonormal_means(k, 10, 1).unwrap();
    let inf = OdeSystem::new(OdeModel::KGmmInfinite, MixtureSpec::kgmm_uniform(means.clone(), Noise::Zero).unwrap(), 0.01, 1.0)
        .unwrap();
    let spec = MixtureSpec::kgmm_uniform(means, Noise::Precision(lambda)).unwrap();
    let fin = OdeSystem::new(OdeModel::KGmmFinite, spec, 0.01, 1.0).unwrap().with_mc(n_mc, 3);
    let mut gap: f64 = 0.0;
    for i in 0..6 {
        let s = i as f64 * 0.7;
        let m = DMatrix::from_fn(k, k, |a, b| if a == b { 0.4 + s } else { -0.3 * s + 0.1 * (a as f64 - b as f64) });
        let rperp = DMatrix::from_fn(k, k, |a, b| if a == b { 1.0 + 0.2 * s } else { 0.1 });
        let u = SummaryStats::KGmm(KGmmSummary { m, rperp });
        let a = fin.drift(&u).unwrap().to_flat();
        let b = inf.drift(&u).unwrap().to_flat();
        gap = a.iter().zip(&b).fold(gap, |g, (x, y)| g.max((x - y).abs()));
    }
    gap
}

/// Orthonormal rows spanning a `k`-dimensional subspace orthogonal to the
/// rows of `avoid`.
pub fn complement_rows(r: &mut impl rand::Rng, avoid: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let d = avoid.ncols();
    let mut basis: Vec<DVector<f64>> = avoid.row_iter().map(|row| row.transpose()).collect();
    let n0 = linalg::orthonormalize(&basis).len();
    basis.extend((0..k).map(|_| gaussian_vector(r, d, 1.0)));
    let q = linalg::orthonormalize(&basis);
    DMatrix::from_fn(k, d, |i, j| q[n0 + i][j])
}
