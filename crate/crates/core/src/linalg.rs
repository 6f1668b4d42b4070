//! Symmetric eigensolvers and subspace metrics.
//!
//! `top_eigs` is a Lanczos iteration with full reorthogonalization that
//! only needs matrix-vector products; `dense_eigs` diagonalizes an
//! explicit matrix. Both rank eigenpairs by `|λ|`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        self * x
    }
}

/// Wraps a closure as an operator.
pub struct FnOperator<F: Fn(&DVector<f64>) -> DVector<f64> + Sync> {
    pub n: usize,
    pub f: F,
}

impl<F: Fn(&DVector<f64>) -> DVector<f64> + Sync> LinearOperator for FnOperator<F> {
    fn dim(&self) -> usize {
        self.n
    }
    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        (self.f)(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EigMethod {
    Lanczos,
    Dense,
}

#[derive(Clone, Debug)]
pub struct SpectralReport {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Vec<DVector<f64>>,
    pub residuals: Vec<f64>,
    pub bulk_edge_estimate: f64,
    pub outlier_count: usize,
    pub method: EigMethod,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    /// Extra eigenpairs computed past `r`; the last one is the bulk edge.
    pub buffer: usize,
    pub ratio: f64,
    pub dense_cap: usize,
}

impl Default for EigOptions {
    fn default() -> Self {
        EigOptions { tol: 1e-10, max_iter: 600, seed: 0, buffer: 6, ratio: 2.0, dense_cap: 2048 }
    }
}

impl EigOptions {
    pub fn with_buffer(mut self, buffer: usize) -> Self {
        self.buffer = buffer;
        self
    }
}

impl SpectralReport {
    pub fn top_vectors(&self, r: usize) -> &[DVector<f64>] {
        &self.eigenvectors[..r.min(self.eigenvectors.len())]
    }
}

/// Number of leading eigenvalues with `|λ| > ratio · bulk_edge`.
pub fn outlier_count(eigenvalues: &[f64], bulk_edge: f64, ratio: f64) -> usize {
    eigenvalues.iter().take_while(|l| l.abs() > ratio * bulk_edge).count()
}

/// `(r + buffer)`-th largest `|λ|`. Blocks too small to hold that many have
/// no bulk to speak of; there the edge sits below the widest ratio gap.
fn bulk_edge(sorted_abs: &[f64], r: usize, buffer: usize) -> f64 {
    let n = sorted_abs.len();
    if n < 2 {
        return 0.0;
    }
    if n >= r + buffer {
        return sorted_abs[r + buffer - 1];
    }
    let gap = |i: usize| sorted_abs[i] / sorted_abs[i + 1].max(f64::MIN_POSITIVE);
    let i = (0..n - 1).max_by(|&a, &b| gap(a).total_cmp(&gap(b))).unwrap_or(0);
    sorted_abs[i + 1]
}

fn random_unit(n: usize, r: &mut impl Rng) -> DVector<f64> {
    let v = DVector::from_fn(n, |_, _| r.sample::<f64, _>(StandardNormal));
    let nrm = v.norm();
    v / nrm
}

fn orthogonalize(w: &mut DVector<f64>, basis: &[DVector<f64>]) {
    for _ in 0..2 {
        for q in basis {
            let c = q.dot(w);
            w.axpy(-c, q, 1.0);
        }
    }
}

/// Indices of `vals` sorted by descending `|λ|`.
fn order_by_abs(vals: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..vals.len()).collect();
    idx.sort_by(|&a, &b| vals[b].abs().total_cmp(&vals[a].abs()));
    idx
}

/// `r` eigenpairs of largest `|λ|` by Lanczos with full reorthogonalization.
pub fn top_eigs(op: &dyn LinearOperator, r: usize, opts: &EigOptions) -> Result<SpectralReport> {
    let n = op.dim();
    if r == 0 || r > n {
        return Err(Error::DimensionMismatch { expected: n, got: r });
    }
    let want = (r + opts.buffer).min(n);
    let mut rng = rng::stream(opts.seed, 0x6c616e);
    let mut basis: Vec<DVector<f64>> = vec![random_unit(n, &mut rng)];
    let mut alpha: Vec<f64> = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    let mut scale = 0.0f64;
    let max_iter = opts.max_iter.min(n).max(want);
    let mut converged = false;
    let mut ritz: Option<(Vec<f64>, DMatrix<f64>)> = None;
    for j in 0..max_iter {
        let q = &basis[j];
        let mut w = op.apply(q);
        let a = q.dot(&w);
        alpha.push(a);
        orthogonalize(&mut w, &basis);
        let b = w.norm();
        scale = scale.max(a.abs()).max(b);
        let m = j + 1;
        let last = m == max_iter || m == n;
        if m >= want && (m % 4 == 0 || last || b <= 1e-13 * scale) {
            let t = tridiagonal(&alpha, &beta);
            let eig = SymmetricEigen::new(t);
            let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
            let ord = order_by_abs(&vals);
            let top = vals[ord[0]].abs().max(f64::MIN_POSITIVE);
            let ok = ord[..r].iter().all(|&i| (b * eig.eigenvectors[(m - 1, i)]).abs() <= 0.1 * opts.tol * top);
            ritz = Some((vals, eig.eigenvectors));
            if ok || last {
                converged = ok;
                break;
            }
        }
        if b <= 1e-13 * scale {
            // Krylov space exhausted: restart in the orthogonal complement.
            let mut fresh = random_unit(n, &mut rng);
            orthogonalize(&mut fresh, &basis);
            let nrm = fresh.norm();
            if nrm < 1e-8 {
                break;
            }
            beta.push(0.0);
            basis.push(fresh / nrm);
        } else {
            beta.push(b);
            basis.push(w / b);
        }
    }
    let (vals, vecs) = match ritz {
        Some(x) => x,
        None => {
            let eig = SymmetricEigen::new(tridiagonal(&alpha, &beta));
            (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
        }
    };
    let m = vals.len();
    let ord = order_by_abs(&vals);
    let sorted_abs: Vec<f64> = ord.iter().map(|&i| vals[i].abs()).collect();
    let mut eigenvalues = Vec::with_capacity(r);
    let mut eigenvectors = Vec::with_capacity(r);
    let mut residuals = Vec::with_capacity(r);
    for &i in ord.iter().take(r.min(m)) {
        let mut v = DVector::zeros(n);
        for (jj, q) in basis.iter().take(m).enumerate() {
            v.axpy(vecs[(jj, i)], q, 1.0);
        }
        let nrm = v.norm();
        v /= nrm;
        let lam = vals[i];
        let res = (op.apply(&v) - &v * lam).norm();
        eigenvalues.push(lam);
        eigenvectors.push(v);
        residuals.push(res);
    }
    let top = eigenvalues.first().map_or(0.0, |l: &f64| l.abs());
    let resid_ok = residuals.iter().all(|&res| res <= opts.tol * top.max(f64::MIN_POSITIVE) || res <= 1e-13 * scale);
    if !(converged || resid_ok) || eigenvalues.len() < r {
        return Err(Error::NoConvergence { max_iter });
    }
    let edge = if m >= want { bulk_edge(&sorted_abs, r, opts.buffer) } else { 0.0 };
    let outliers = outlier_count(&eigenvalues, edge, opts.ratio);
    Ok(SpectralReport {
        eigenvalues,
        eigenvectors,
        residuals,
        bulk_edge_estimate: edge,
        outlier_count: outliers,
        method: EigMethod::Lanczos,
    })
}

fn tridiagonal(alpha: &[f64], beta: &[f64]) -> DMatrix<f64> {
    let m = alpha.len();
    let mut t = DMatrix::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    t
}

/// Full spectrum of an explicit symmetric matrix; `r` sets where the bulk
/// edge is read (`(r + buffer)`-th eigenvalue, clamped to the size).
pub fn dense_eigs(mat: &DMatrix<f64>, r: usize, opts: &EigOptions) -> Result<SpectralReport> {
    let n = mat.nrows();
    if mat.ncols() != n {
        return Err(Error::DimensionMismatch { expected: n, got: mat.ncols() });
    }
    if n > opts.dense_cap {
        return Err(Error::TooLarge { n, cap: opts.dense_cap });
    }
    let amax = mat.amax().max(1.0);
    let asym = (mat - mat.transpose()).amax();
    if asym > 1e-10 * amax {
        return Err(Error::NotSymmetric { asym });
    }
    let sym = (mat + mat.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym.clone());
    let vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let ord = order_by_abs(&vals);
    let eigenvalues: Vec<f64> = ord.iter().map(|&i| vals[i]).collect();
    let eigenvectors: Vec<DVector<f64>> = ord.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    let residuals = eigenvalues
        .iter()
        .zip(&eigenvectors)
        .map(|(&l, v)| (&sym * v - v * l).norm())
        .collect();
    let sorted_abs: Vec<f64> = eigenvalues.iter().map(|l| l.abs()).collect();
    let edge = bulk_edge(&sorted_abs, r, opts.buffer);
    let outliers = outlier_count(&eigenvalues, edge, opts.ratio);
    Ok(SpectralReport {
        eigenvalues,
        eigenvectors,
        residuals,
        bulk_edge_estimate: edge,
        outlier_count: outliers,
        method: EigMethod::Dense,
    })
}

/// Orthonormal basis of the span (modified Gram-Schmidt, near-dependent
/// vectors dropped).
pub fn orthonormalize(basis: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(basis.len());
    for b in basis {
        let nrm0 = b.norm();
        if nrm0 == 0.0 {
            continue;
        }
        let mut v = b / nrm0;
        for _ in 0..2 {
            for q in &out {
                let c = q.dot(&v);
                v.axpy(-c, q, 1.0);
            }
        }
        let nrm = v.norm();
        if nrm >= 1e-10 {
            out.push(v / nrm);
        }
    }
    out
}

pub fn project(v: &DVector<f64>, ortho: &[DVector<f64>]) -> DVector<f64> {
    let mut p = DVector::zeros(v.len());
    for q in ortho {
        p.axpy(q.dot(v), q, 1.0);
    }
    p
}

/// `‖P_B v‖ / ‖v‖`.
pub fn alignment(v: &DVector<f64>, basis: &[DVector<f64>]) -> Result<f64> {
    let nrm = v.norm();
    if nrm == 0.0 {
        return Err(Error::ZeroVector);
    }
    let ortho = orthonormalize(basis);
    Ok((project(v, &ortho).norm() / nrm).min(1.0))
}

/// Operator norm of a symmetric operator.
pub fn op_norm(op: &dyn LinearOperator, seed: u64) -> Result<f64> {
    let opts = EigOptions { buffer: 2, seed, tol: 1e-8, ..Default::default() };
    Ok(top_eigs(op, 1, &opts)?.eigenvalues[0].abs())
}

/// `‖(I − P_B) A‖_op / ‖A‖_op`, an upper bound for the smallest ε with
/// `A = M + E`, `Im M ⊆ B`, `‖E‖ ≤ ε‖A‖`.
pub fn lives_in_error(a: &dyn LinearOperator, basis: &[DVector<f64>], seed: u64) -> Result<f64> {
    let n = a.dim();
    let ortho = orthonormalize(basis);
    let norm_a = op_norm(a, seed)?;
    if norm_a == 0.0 {
        return Err(Error::ZeroMatrix);
    }
    // ‖(I−P)A‖² = λ_max(A (I−P) A)
    let compressed = FnOperator {
        n,
        f: |x: &DVector<f64>| {
            let y = a.apply(x);
            let y = &y - project(&y, &ortho);
            a.apply(&y)
        },
    };
    let lam = op_norm(&compressed, seed)?;
    Ok(lam.max(0.0).sqrt() / norm_a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_top_two() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 4.0, 3.0, 2.0, 1.0]));
        let rep = top_eigs(&a, 2, &EigOptions::default()).unwrap();
        assert!((rep.eigenvalues[0] - 5.0).abs() < 1e-12);
        assert!((rep.eigenvalues[1] - 4.0).abs() < 1e-12);
        assert!((rep.eigenvectors[0][0].abs() - 1.0).abs() < 1e-10);
        assert!((rep.eigenvectors[1][1].abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rank_one() {
        let u = DVector::from_vec(vec![0.6, 0.0, 0.8, 0.0]);
        let a = &u * u.transpose();
        let rep = top_eigs(&a, 1, &EigOptions::default()).unwrap();
        assert!((rep.eigenvalues[0] - 1.0).abs() < 1e-12);
        assert!((rep.eigenvectors[0].dot(&u).abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dense_textbook_pair() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let rep = dense_eigs(&a, 1, &EigOptions::default()).unwrap();
        assert!((rep.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((rep.eigenvalues[1] - 1.0).abs() < 1e-14);
        let s = 0.5f64.sqrt();
        assert!((rep.eigenvectors[0][0].abs() - s).abs() < 1e-12);
        assert!(rep.eigenvectors[0][0] * rep.eigenvectors[0][1] > 0.0);
        let id = DMatrix::<f64>::identity(4, 4);
        assert!(dense_eigs(&id, 1, &EigOptions::default()).unwrap().eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-14));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(dense_eigs(&bad, 1, &EigOptions::default()), Err(Error::NotSymmetric { .. })));
        let cap = EigOptions { dense_cap: 1, ..Default::default() };
        assert!(matches!(dense_eigs(&id, 1, &cap), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn alignment_cases() {
        let e = |i: usize| DVector::from_fn(3, |j, _| if i == j { 1.0 } else { 0.0 });
        let v = DVector::from_vec(vec![1.0, 1.0, 0.0]);
        assert!((alignment(&v, &[e(0)]).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((alignment(&v, &[e(0), e(1)]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(alignment(&v, &[e(2)]).unwrap(), 0.0);
        assert!(matches!(alignment(&DVector::zeros(3), &[e(0)]), Err(Error::ZeroVector)));
    }

    #[test]
    fn lives_in_cases() {
        let n = 6;
        let mu = DVector::from_fn(n, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let q = DVector::from_fn(n, |i, _| if i == 3 { 1.0 } else { 0.0 });
        let a = &mu * mu.transpose() + &q * q.transpose() * 0.1;
        assert!((lives_in_error(&a, &[mu.clone()], 1).unwrap() - 0.1).abs() < 1e-8);
        let r1 = &mu * mu.transpose();
        assert!(lives_in_error(&r1, &[mu.clone()], 1).unwrap() < 1e-8);
        let id = DMatrix::<f64>::identity(n, n);
        assert!((lives_in_error(&id, &[mu], 1).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn outlier_rule() {
        let e = [10.0, 9.0, 8.0, 7.0, 1.0, 0.9, 0.8];
        assert_eq!(outlier_count(&e, 1.0, 2.0), 4);
        assert_eq!(outlier_count(&[1.0; 5], 1.0, 2.0), 0);
    }

    #[test]
    fn small_block_edge_uses_widest_gap() {
        let e = [4e-2, 2e-2, 5e-3, 1.5e-4, 3e-5];
        assert_eq!(bulk_edge(&e, 4, 6), 1.5e-4);
        assert_eq!(outlier_count(&e, bulk_edge(&e, 4, 6), 2.0), 3);
        assert_eq!(bulk_edge(&[2.0], 1, 6), 0.0);
    }
}
