//! Population Hessian and G-matrix blocks.
//!
//! For the one-layer model every block is an identity shift plus a
//! symmetric form on the span of `{μ_l} ∪ {x^a}`. Gaussian integration by
//! parts in `Z` turns `E[f(x·Y) Y Yᵀ]` into expectations of the softmax
//! over the k reduced coordinates `x·Y_l = m_{·l} + G`, `G ~ N(0, R/λ)`,
//! `R = x xᵀ`. With `⟨x⟩ = Σ_a π_a x^a` and `C = Σ_a π_a x^a x^aᵀ − ⟨x⟩⟨x⟩ᵀ`:
//!
//! ```text
//! E_l[π_b Y Yᵀ]     = E[π_b ((μ_l + (x^b − ⟨x⟩)/λ)^⊗2 − C/λ²)] + E[π_b] I/λ
//! E_l[π_b π_c Y Yᵀ] = E[π_b π_c ((μ_l + (x^b + x^c − 2⟨x⟩)/λ)^⊗2 − 2C/λ²)] + E[π_b π_c] I/λ
//! ```
//!
//! These are evaluated by Monte Carlo with batch-mean error bars. The cost
//! does not depend on `d`.
//!
//! For the two-layer model only the four-term approximations are available;
//! they come with the analytic error budgets instead of error bars.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{self, FnOperator, LinearOperator};
use crate::mixtures::{MixtureKind, MixtureSpec};
use crate::nets::{self, OneLayer, ParamState, TwoLayer};
use crate::rng;
use crate::spectra::{self, BlockId, FactorizedQuadratic, MatrixKind};

pub const DEFAULT_N_MC: usize = 100_000;
pub const BATCHES: usize = 20;

/// `Σ_ij core_ij b_i b_jᵀ + identity_coefficient · I`, `b_i` the rows of `basis`.
#[derive(Clone, Debug)]
pub struct PopBlockEstimate {
    pub basis: DMatrix<f64>,
    pub core: DMatrix<f64>,
    pub identity_coefficient: f64,
    /// Standard error (one-layer) or analytic budget (two-layer), in
    /// operator norm.
    pub mc_error_bar: f64,
    pub n_mc: usize,
}

impl PopBlockEstimate {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        let mut out = self.basis.transpose() * &self.core * &self.basis;
        for i in 0..self.dim() {
            out[(i, i)] += self.identity_coefficient;
        }
        out
    }

    pub fn apply(&self, w: &DVector<f64>) -> DVector<f64> {
        let t = &self.basis * w;
        self.basis.tr_mul(&(&self.core * t)) + w * self.identity_coefficient
    }

    /// The low-rank part as `(coefficient, unit vector)` pairs.
    pub fn low_rank_part(&self) -> Vec<(f64, DVector<f64>)> {
        let (q, r) = thin_qr(&self.basis.transpose());
        let small = &r * &self.core * r.transpose();
        let eig = SymmetricEigen::new((&small + small.transpose()) * 0.5);
        let mut out: Vec<(f64, DVector<f64>)> = (0..eig.eigenvalues.len())
            .filter(|&i| eig.eigenvalues[i] != 0.0)
            .map(|i| (eig.eigenvalues[i], &q * eig.eigenvectors.column(i)))
            .collect();
        out.sort_by(|a, b| b.0.abs().total_cmp(&a.0.abs()));
        out
    }
}

fn thin_qr(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = a.clone().qr();
    (qr.q(), qr.r())
}

/// Symmetric PSD square root (negative eigenvalues clipped to zero).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

fn check_pairs(pairs: &[(usize, usize)], k: usize) -> Result<()> {
    for &(b, c) in pairs {
        if b >= k || c >= k {
            return Err(Error::BadIndices { b, c, n: k });
        }
    }
    Ok(())
}

/// Adds `w · u uᵀ` to `core`.
fn add_outer(core: &mut DMatrix<f64>, w: f64, u: &DVector<f64>) {
    core.ger(w, u, u, 1.0);
}

/// Adds `w · C` in x-coordinates (offset `k`).
fn add_cov(core: &mut DMatrix<f64>, w: f64, pi: &DVector<f64>, k: usize) {
    for a in 0..k {
        core[(k + a, k + a)] += w * pi[a];
        for b in 0..k {
            core[(k + a, k + b)] -= w * pi[a] * pi[b];
        }
    }
}

/// Direction `μ_l + s_b x^b + s_c x^c − t ⟨x⟩` in basis coordinates.
fn direction(k: usize, l: usize, pi: &DVector<f64>, terms: &[(usize, f64)], t: f64) -> DVector<f64> {
    let mut u = DVector::zeros(2 * k);
    u[l] = 1.0;
    for &(a, s) in terms {
        u[k + a] += s;
    }
    for a in 0..k {
        u[k + a] -= t * pi[a];
    }
    u
}

/// One Monte-Carlo draw's contribution to block `(b, c)` for class `l`.
#[allow(clippy::too_many_arguments)]
fn block_contrib(
    kind: MatrixKind,
    b: usize,
    c: usize,
    l: usize,
    p: &[f64],
    pi: &DVector<f64>,
    il: f64,
    core: &mut DMatrix<f64>,
    id: &mut f64,
) {
    let k = p.len();
    let il2 = il * il;
    let pl = p[l];
    let single = |core: &mut DMatrix<f64>, id: &mut f64, w: f64, a: usize| {
        // w · E_l[π_a Y Yᵀ] integrand
        let u = direction(k, l, pi, &[(a, il)], il);
        add_outer(core, w * pi[a], &u);
        add_cov(core, -w * pi[a] * il2, pi, k);
        *id += w * pi[a] * il;
    };
    let pair = |core: &mut DMatrix<f64>, id: &mut f64, w: f64| {
        // w · E_l[π_b π_c Y Yᵀ] integrand
        let u = direction(k, l, pi, &[(b, il), (c, il)], 2.0 * il);
        let pp = pi[b] * pi[c];
        add_outer(core, w * pp, &u);
        add_cov(core, -2.0 * w * pp * il2, pi, k);
        *id += w * pp * il;
    };
    match kind {
        MatrixKind::Hessian => {
            if b == c {
                single(core, id, pl, b);
            }
            pair(core, id, -pl);
        }
        MatrixKind::G => {
            pair(core, id, pl);
            if l == c {
                single(core, id, -pl, b);
            }
            if l == b {
                single(core, id, -pl, c);
            }
        }
    }
}

/// All requested blocks from one Monte-Carlo pass.
pub fn kgmm_pop_blocks(
    x: &OneLayer,
    spec: &MixtureSpec,
    kind: MatrixKind,
    pairs: &[(usize, usize)],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<PopBlockEstimate>> {
    if spec.kind != MixtureKind::KGmm {
        return Err(Error::WrongModel("population k-GMM blocks need a k-GMM spec".into()));
    }
    let k = spec.k();
    if x.k() != k || x.d() != spec.d {
        return Err(Error::DimensionMismatch { expected: k * spec.d, got: x.k() * x.d() });
    }
    check_pairs(pairs, k)?;
    let il = spec.inv_lambda();
    let m = &x.x * spec.means.transpose(); // m[(a, l)] = x^a·μ_l
    let gram = &x.x * x.x.transpose();
    let s = psd_sqrt(&gram) * il.sqrt();
    let n_mc = n_mc.max(BATCHES);
    let per_batch = n_mc / BATCHES;
    let nb = 2 * k;
    let batches: Vec<Vec<(DMatrix<f64>, f64)>> = (0..BATCHES)
        .into_par_iter()
        .map(|batch| {
            let mut r = rng::stream(seed, batch as u64);
            let mut acc = vec![(DMatrix::zeros(nb, nb), 0.0); pairs.len()];
            for _ in 0..per_batch {
                let xi = DVector::from_fn(k, |_, _| r.sample::<f64, _>(StandardNormal));
                let g = &s * xi;
                for l in 0..k {
                    let pi = nets::softmax(&(m.column(l) + &g));
                    for (slot, &(b, c)) in acc.iter_mut().zip(pairs) {
                        block_contrib(kind, b, c, l, &spec.probs, &pi, il, &mut slot.0, &mut slot.1);
                    }
                }
            }
            for (slot, &(b, c)) in acc.iter_mut().zip(pairs) {
                slot.0 /= per_batch as f64;
                slot.1 /= per_batch as f64;
                if kind == MatrixKind::G && b == c {
                    // E[y_b y_b Y Yᵀ] = p_b (μ_b μ_bᵀ + I/λ)
                    slot.0[(b, b)] += spec.probs[b];
                    slot.1 += spec.probs[b] * il;
                }
            }
            acc
        })
        .collect();
    let mut basis = DMatrix::zeros(nb, spec.d);
    basis.rows_mut(0, k).copy_from(&spec.means);
    basis.rows_mut(k, k).copy_from(&x.x);
    let (_, rfac) = thin_qr(&basis.transpose());
    let mut out = Vec::with_capacity(pairs.len());
    for slot in 0..pairs.len() {
        let mut core = DMatrix::zeros(nb, nb);
        let mut id = 0.0;
        for batch in &batches {
            core += &batch[slot].0;
            id += batch[slot].1;
        }
        core /= BATCHES as f64;
        id /= BATCHES as f64;
        let mut ss = 0.0;
        for batch in &batches {
            let dc = &batch[slot].0 - &core;
            let small = &rfac * &dc * rfac.transpose();
            let did = batch[slot].1 - id;
            let dist = SymmetricEigen::new((&small + small.transpose()) * 0.5).eigenvalues.amax() + did.abs();
            ss += dist * dist;
        }
        let se = (ss / (BATCHES * (BATCHES - 1)) as f64).sqrt();
        out.push(PopBlockEstimate {
            basis: basis.clone(),
            core: (&core + core.transpose()) * 0.5,
            identity_coefficient: id,
            mc_error_bar: se,
            n_mc: per_batch * BATCHES,
        });
    }
    Ok(out)
}

pub fn kgmm_pop_hessian_block(
    x: &OneLayer,
    spec: &MixtureSpec,
    b: usize,
    c: usize,
    n_mc: usize,
    seed: u64,
) -> Result<PopBlockEstimate> {
    Ok(kgmm_pop_blocks(x, spec, MatrixKind::Hessian, &[(b, c)], n_mc, seed)?.remove(0))
}

pub fn kgmm_pop_gmat_block(
    x: &OneLayer,
    spec: &MixtureSpec,
    b: usize,
    c: usize,
    n_mc: usize,
    seed: u64,
) -> Result<PopBlockEstimate> {
    Ok(kgmm_pop_blocks(x, spec, MatrixKind::G, &[(b, c)], n_mc, seed)?.remove(0))
}

/// Standard normal cdf.
pub fn normal_cdf(z: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").cdf(z)
}

/// Standard normal tail `1 − F(z)`.
pub fn normal_tail(z: f64) -> f64 {
    normal_cdf(-z)
}

/// `F(√(λ/R) m)`, with the noiseless limit taken as a step (½ at `m = 0`).
fn cdf_scaled(lambda: f64, r: f64, m: f64) -> f64 {
    if lambda.is_infinite() {
        return if m > 0.0 {
            1.0
        } else if m < 0.0 {
            0.0
        } else {
            0.5
        };
    }
    normal_cdf((lambda / r).sqrt() * m)
}

fn tail_abs(lambda: f64, r: f64, m: f64) -> f64 {
    if lambda.is_infinite() {
        return if m == 0.0 { 0.5 } else { 0.0 };
    }
    normal_tail((lambda / r).sqrt() * m.abs())
}

/// Moment/tail scale controlling `‖E[g(WX)^⊗2] − g(Wθ)^⊗2‖` for
/// `X ~ N(θ, I/λ)`.
pub fn psi2(theta: &DVector<f64>, w: &DMatrix<f64>, lambda: f64) -> Result<f64> {
    let k = w.nrows();
    let m = w * theta;
    let gram = w * w.transpose();
    for i in 0..k {
        if gram[(i, i)] == 0.0 {
            return Err(Error::ZeroRow { row: i });
        }
    }
    let il = if lambda.is_infinite() { 0.0 } else { 1.0 / lambda };
    let moment: Vec<f64> = (0..k)
        .map(|i| (m[i].abs().powi(3) + il.powf(1.5) * gram[(i, i)].powf(1.5)).cbrt())
        .collect();
    let tails: Vec<f64> = (0..k).map(|i| tail_abs(lambda, gram[(i, i)], m[i])).collect();
    let mut best = f64::NEG_INFINITY;
    for i in 0..k {
        for j in 0..k {
            let v = moment[i] * moment[j] * (tails[i] + tails[j]).cbrt() + gram[(i, j)] * il;
            best = best.max(v);
        }
    }
    Ok(best)
}

fn xor_coef(kind: MatrixKind, v: &DVector<f64>, g: &DVector<f64>, y: f64) -> f64 {
    let s = nets::sigmoid(v.dot(g));
    match kind {
        MatrixKind::Hessian => s * (1.0 - s),
        MatrixKind::G => (y - s) * (y - s),
    }
}

/// `¼ Σ_θ coef(θ) g(Wθ)^⊗2` over `θ ∈ {±μ, ±ν}`, with the budget
/// `max_θ ψ₂ + 1/λ` as error bar.
pub fn xor_pop_vv(p: &TwoLayer, spec: &MixtureSpec, kind: MatrixKind) -> Result<PopBlockEstimate> {
    if spec.kind != MixtureKind::Xor {
        return Err(Error::WrongModel("xor population blocks need an XOR spec".into()));
    }
    let k = p.width();
    let lambda = spec.lambda();
    let mut basis = DMatrix::zeros(4, k);
    let mut core = DMatrix::zeros(4, 4);
    let mut budget: f64 = 0.0;
    for (t, (theta, y)) in spec.xor_centers().iter().enumerate() {
        let g = (&p.w * theta).map(nets::relu);
        core[(t, t)] = 0.25 * xor_coef(kind, &p.v, &g, *y);
        basis.set_row(t, &g.transpose());
        budget = budget.max(psi2(theta, &p.w, lambda)?);
    }
    Ok(PopBlockEstimate {
        basis,
        core,
        identity_coefficient: 0.0,
        mc_error_bar: budget + spec.inv_lambda(),
        n_mc: 0,
    })
}

/// `(v_i²/4) Σ_θ coef(θ) F(√(λ/R_ii) m_i^θ) θ^⊗2` with budget
/// `max_θ (λ^{-1/2} F̄(√(λ/R_ii)|m_i^θ|)^{1/2} + 1/λ)`.
pub fn xor_pop_wiwi(p: &TwoLayer, spec: &MixtureSpec, i: usize, kind: MatrixKind) -> Result<PopBlockEstimate> {
    if spec.kind != MixtureKind::Xor {
        return Err(Error::WrongModel("xor population blocks need an XOR spec".into()));
    }
    if i >= p.width() {
        return Err(Error::BadIndices { b: i, c: i, n: p.width() });
    }
    let r = p.w.row(i).norm_squared();
    if r == 0.0 {
        return Err(Error::ZeroRow { row: i });
    }
    let lambda = spec.lambda();
    let il = spec.inv_lambda();
    let mut basis = DMatrix::zeros(4, spec.d);
    let mut core = DMatrix::zeros(4, 4);
    let mut budget: f64 = 0.0;
    for (t, (theta, y)) in spec.xor_centers().iter().enumerate() {
        let g = (&p.w * theta).map(nets::relu);
        let mi = p.w.row(i).transpose().dot(theta);
        core[(t, t)] = 0.25 * p.v[i] * p.v[i] * xor_coef(kind, &p.v, &g, *y) * cdf_scaled(lambda, r, mi);
        basis.set_row(t, &theta.transpose());
        budget = budget.max(il.sqrt() * tail_abs(lambda, r, mi).sqrt() + il);
    }
    Ok(PopBlockEstimate { basis, core, identity_coefficient: 0.0, mc_error_bar: budget, n_mc: 0 })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ProbeRow {
    pub point: usize,
    pub alpha: f64,
    pub deviation_mean: f64,
    pub deviation_sd: f64,
    pub dimension: usize,
    pub lambda: f64,
    pub trials: usize,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// Operator-norm deviation of empirical matrices built from `⌈α d⌉` fresh
/// samples from the population reference, for each point and `α`.
///
/// One-layer points: the whole `kd × kd` matrix against the Monte-Carlo
/// population blocks (`n_mc` draws). Two-layer points: the block-diagonal
/// part `(vv, W_1W_1, …, W_KW_K)` against an empirical reference built from
/// `n_mc` samples.
pub fn concentration_probe(
    points: &[ParamState],
    spec: &MixtureSpec,
    kind: MatrixKind,
    alphas: &[f64],
    trials: usize,
    n_mc: usize,
    seed: u64,
) -> Result<Vec<ProbeRow>> {
    let d = spec.d;
    let mut rows = Vec::new();
    for (pi, point) in points.iter().enumerate() {
        let pseed = rng::derive(seed, pi as u64);
        let reference = Reference::build(point, spec, kind, n_mc, pseed)?;
        for (ai, &alpha) in alphas.iter().enumerate() {
            let m = (alpha * d as f64).ceil() as usize;
            let devs: Vec<f64> = (0..trials)
                .map(|t| {
                    let sseed = rng::derive(pseed, 1000 + (ai * trials + t) as u64);
                    let samples = spec.sample(sseed, m);
                    let fq = spectra::assemble(&samples, point, kind)?;
                    reference.deviation(&fq, sseed)
                })
                .collect::<Result<_>>()?;
            let (mean, sd) = mean_sd(&devs);
            rows.push(ProbeRow {
                point: pi,
                alpha,
                deviation_mean: mean,
                deviation_sd: sd,
                dimension: d,
                lambda: spec.lambda(),
                trials,
            });
        }
    }
    Ok(rows)
}

enum Reference {
    KGmm { blocks: Vec<PopBlockEstimate>, k: usize, d: usize },
    /// Dense `vv` and `W_iW_i` blocks.
    Xor(Vec<(BlockId, DMatrix<f64>)>),
}

impl Reference {
    fn build(point: &ParamState, spec: &MixtureSpec, kind: MatrixKind, n_mc: usize, seed: u64) -> Result<Self> {
        match point {
            ParamState::OneLayer(x) => {
                let k = x.k();
                let pairs: Vec<(usize, usize)> = (0..k).flat_map(|b| (0..k).map(move |c| (b, c))).collect();
                let blocks = kgmm_pop_blocks(x, spec, kind, &pairs, n_mc, seed)?;
                Ok(Reference::KGmm { blocks, k, d: spec.d })
            }
            ParamState::TwoLayer(_) => {
                let samples = spec.sample(rng::derive(seed, 0x726566), n_mc);
                let fq = spectra::assemble(&samples, point, kind)?;
                let mut blocks = vec![BlockId::Vv];
                blocks.extend((0..fq.n_blocks).map(|i| BlockId::Ww(i, i)));
                let dense = blocks.into_iter().map(|b| Ok((b, fq.dense_block(b)?))).collect::<Result<_>>()?;
                Ok(Reference::Xor(dense))
            }
        }
    }

    fn deviation(&self, fq: &FactorizedQuadratic, seed: u64) -> Result<f64> {
        match self {
            Reference::KGmm { blocks, k, d } => {
                let (k, d) = (*k, *d);
                let emp = fq.full_operator()?;
                let op = FnOperator {
                    n: k * d,
                    f: |u: &DVector<f64>| {
                        let mut out = emp.apply(u);
                        for b in 0..k {
                            let mut acc = DVector::zeros(d);
                            for c in 0..k {
                                acc += blocks[b * k + c].apply(&u.rows(c * d, d).into_owned());
                            }
                            let mut seg = out.rows_mut(b * d, d);
                            seg -= acc;
                        }
                        out
                    },
                };
                linalg::op_norm(&op, seed)
            }
            Reference::Xor(reference) => {
                let mut worst: f64 = 0.0;
                for (block, dense) in reference {
                    let diff = fq.dense_block(*block)? - dense;
                    worst = worst.max(SymmetricEigen::new(diff).eigenvalues.amax());
                }
                Ok(worst)
            }
        }
    }
}
