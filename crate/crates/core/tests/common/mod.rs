#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use spectral_sgd::mixtures::{Label, LabeledSample};
use spectral_sgd::rng;

pub fn gaussian_matrix(r: &mut impl Rng, n: usize, m: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, m, |_, _| scale * r.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vector(r: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * r.sample::<f64, _>(StandardNormal))
}

pub fn stream(seed: u64) -> impl Rng {
    rng::stream(seed, 0x7465737473)
}

pub fn class_sample(features: DVector<f64>, c: usize) -> LabeledSample {
    LabeledSample { label: Label::Class(c), features, component: c }
}

pub fn binary_sample(features: DVector<f64>, y: u8) -> LabeledSample {
    LabeledSample { label: Label::Binary(y), features, component: if y == 1 { 0 } else { 2 } }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn sym_eig_max_abs(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigenvalues().amax()
}

pub mod oracles;

use spectral_sgd::nets::{self, OneLayer, TwoLayer};

pub const FD_H: f64 = 1e-5;

/// Random one-layer instance: params, sample, with `d ≤ 8`.
pub fn kgmm_instance(r: &mut impl Rng) -> (OneLayer, LabeledSample) {
    let d = r.gen_range(2..=8);
    let k = r.gen_range(2..=5);
    let x = OneLayer::new(gaussian_matrix(r, k, d, 0.8));
    let c = r.gen_range(0..k);
    (x, class_sample(gaussian_vector(r, d, 1.0), c))
}

/// Random two-layer instance whose preactivations all satisfy `|W_i·Y| > 1e-3`.
pub fn xor_instance(r: &mut impl Rng) -> (TwoLayer, LabeledSample) {
    loop {
        let d = r.gen_range(2..=8);
        let k = r.gen_range(4..=6);
        let p = TwoLayer::new(gaussian_matrix(r, k, d, 0.8), gaussian_vector(r, k, 1.0)).unwrap();
        let s = binary_sample(gaussian_vector(r, d, 1.0), r.gen_range(0..2));
        if (&p.w * &s.features).iter().all(|z| z.abs() > 1e-3) {
            return (p, s);
        }
    }
}

fn norm_rel(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Central finite differences of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + FD_H;
            let up = f(&y);
            y[i] = x[i] - FD_H;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * FD_H)
        })
        .collect()
}

/// Relative error between the analytic one-layer gradient and central differences.
pub fn kgmm_grad_error(x: &OneLayer, s: &LabeledSample) -> f64 {
    let (k, d) = (x.k(), x.d());
    let flat: Vec<f64> = x.x.transpose().as_slice().to_vec();
    let loss = |f: &[f64]| nets::kgmm_loss(&OneLayer::new(DMatrix::from_row_slice(k, d, f)), s, 0.0).unwrap();
    let fd = fd_gradient(loss, &flat);
    let g = nets::kgmm_grad(x, s).unwrap();
    norm_rel(g.x.transpose().as_slice(), &fd)
}

pub fn xor_grad_error(p: &TwoLayer, s: &LabeledSample) -> f64 {
    let (k, d) = (p.width(), p.d());
    let loss = |f: &[f64]| nets::xor_loss(&TwoLayer::from_flat(k, d, f), s, 0.0).unwrap();
    let fd = fd_gradient(loss, &p.to_flat());
    norm_rel(&nets::xor_grad(p, s).unwrap().to_flat(), &fd)
}

/// Finite-difference Jacobian of a vector-valued `f` (column `j` is `∂f/∂x_j`).
pub fn fd_jacobian(f: impl Fn(&[f64]) -> Vec<f64>, x: &[f64]) -> DMatrix<f64> {
    let n = f(x).len();
    let mut out = DMatrix::zeros(n, x.len());
    let mut y = x.to_vec();
    for j in 0..x.len() {
        y[j] = x[j] + FD_H;
        let up = f(&y);
        y[j] = x[j] - FD_H;
        let down = f(&y);
        y[j] = x[j];
        for i in 0..n {
            out[(i, j)] = (up[i] - down[i]) / (2.0 * FD_H);
        }
    }
    out
}
