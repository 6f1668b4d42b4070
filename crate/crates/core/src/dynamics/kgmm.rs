//! Effective dynamics of `(m, R⊥)` for the one-layer model.
//!
//! Reduced Gaussian coordinates: `U_b = ⟨Z, μ_b⟩ ~ N(0, M̄/λ)` and
//! `V_b = ⟨Z, x^{b,⊥}⟩ ~ N(0, R⊥/λ)` are independent, and
//! `x^a·Z = Σ_c C_ac U_c + V_a` with `C = m M̄⁻¹`. For a class-`c` sample the
//! logits are `m_{·c} + C U + V`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{OdeSystem, PerpDecay};
use crate::error::{Error, Result};
use crate::mixtures::MixtureSpec;
use crate::nets;
use crate::population::psd_sqrt;
use crate::rng;
use crate::sgd::KGmmSummary;

const MC_BATCHES: usize = 8;

#[derive(Clone, Debug)]
pub struct KGmmIntegrals {
    /// `p[(a, c)] = E[π_{Y_c}(a)]`
    pub p: DMatrix<f64>,
    /// `q_mu[c][(a, b)] = E[⟨Z, μ_b⟩ π_{Y_c}(a)]`
    pub q_mu: Vec<DMatrix<f64>>,
    /// `q_perp[c][(a, b)] = E[⟨Z, x^{b,⊥}⟩ π_{Y_c}(a)]`
    pub q_perp: Vec<DMatrix<f64>>,
    /// `corr[c][(a, b)] = E[(π_{Y_c}(a) − 1_{a=c})(π_{Y_c}(b) − 1_{b=c})]`
    pub corr: Vec<DMatrix<f64>>,
}

/// `π̄_c(a) = e^{m_ac} / Σ_b e^{m_bc}` (column softmax).
pub fn pibar(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for c in 0..m.ncols() {
        let col = nets::softmax(&m.column(c).into_owned());
        out.set_column(c, &col);
    }
    out
}

pub(crate) fn check_psd(r: &DMatrix<f64>) -> Result<()> {
    let min_eig = r.clone().symmetric_eigenvalues().min();
    if min_eig < -1e-8 * r.amax().max(1.0) {
        return Err(Error::NonPsdRperp { min_eig });
    }
    Ok(())
}

fn gram_factor(spec: &MixtureSpec) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let gram = spec.mean_gram();
    let chol = gram
        .clone()
        .cholesky()
        .ok_or(Error::DegenerateGram { min_eig: gram.symmetric_eigenvalues().min() })?;
    Ok((chol.l(), chol.inverse()))
}

pub fn gauss_integrals_kgmm(u: &KGmmSummary, spec: &MixtureSpec, n_mc: usize, seed: u64) -> Result<KGmmIntegrals> {
    let k = u.m.nrows();
    if spec.k() != k {
        return Err(Error::DimensionMismatch { expected: spec.k(), got: k });
    }
    check_psd(&u.rperp)?;
    let (l, inv) = gram_factor(spec)?;
    let il = spec.inv_lambda();
    let zero = || DMatrix::zeros(k, k);
    if il == 0.0 {
        let p = pibar(&u.m);
        let corr = (0..k)
            .map(|c| {
                let mut r = p.column(c).into_owned();
                r[c] -= 1.0;
                &r * r.transpose()
            })
            .collect();
        return Ok(KGmmIntegrals { p, q_mu: vec![zero(); k], q_perp: vec![zero(); k], corr });
    }
    let coef = &u.m * inv;
    let su = l * il.sqrt();
    let sv = psd_sqrt(&u.rperp) * il.sqrt();
    let pairs = (n_mc / 2).max(MC_BATCHES);
    let per_batch = pairs.div_ceil(MC_BATCHES);
    let parts: Vec<KGmmIntegrals> = (0..MC_BATCHES)
        .into_par_iter()
        .map(|batch| {
            let mut r = rng::stream(seed, batch as u64);
            let mut acc = KGmmIntegrals { p: zero(), q_mu: vec![zero(); k], q_perp: vec![zero(); k], corr: vec![zero(); k] };
            let mut logits = DVector::zeros(k);
            for _ in 0..per_batch {
                let x1 = DVector::from_fn(k, |_, _| r.sample::<f64, _>(StandardNormal));
                let x2 = DVector::from_fn(k, |_, _| r.sample::<f64, _>(StandardNormal));
                let uu = &su * x1;
                let vv = &sv * x2;
                let g = &coef * &uu + &vv;
                for sign in [1.0, -1.0] {
                    for c in 0..k {
                        for a in 0..k {
                            logits[a] = u.m[(a, c)] + sign * g[a];
                        }
                        let pi = nets::softmax(&logits);
                        let (qm, qp, co) = (&mut acc.q_mu[c], &mut acc.q_perp[c], &mut acc.corr[c]);
                        for a in 0..k {
                            let pa = pi[a];
                            acc.p[(a, c)] += pa;
                            let ra = pa - if a == c { 1.0 } else { 0.0 };
                            for b in 0..k {
                                qm[(a, b)] += sign * uu[b] * pa;
                                qp[(a, b)] += sign * vv[b] * pa;
                                co[(a, b)] += ra * (pi[b] - if b == c { 1.0 } else { 0.0 });
                            }
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let n = (2 * per_batch * MC_BATCHES) as f64;
    let mut out = KGmmIntegrals { p: zero(), q_mu: vec![zero(); k], q_perp: vec![zero(); k], corr: vec![zero(); k] };
    for part in parts {
        out.p += part.p;
        for c in 0..k {
            out.q_mu[c] += &part.q_mu[c];
            out.q_perp[c] += &part.q_perp[c];
            out.corr[c] += &part.corr[c];
        }
    }
    out.p /= n;
    for c in 0..k {
        out.q_mu[c] /= n;
        out.q_perp[c] /= n;
        out.corr[c] /= n;
    }
    Ok(out)
}

fn perp_rate(decay: PerpDecay) -> f64 {
    match decay {
        PerpDecay::SingleBeta => 1.0,
        PerpDecay::DoubleBeta => 2.0,
    }
}

/// Drift of the finite-`λ` system.
pub fn kgmm_drift_finite(u: &KGmmSummary, sys: &OdeSystem) -> Result<KGmmSummary> {
    let spec = &sys.spec;
    let k = u.m.nrows();
    let ints = gauss_integrals_kgmm(u, spec, sys.n_mc, sys.seed)?;
    let mbar = spec.mean_gram();
    let p = &spec.probs;
    let il = spec.inv_lambda();
    let mut dm = DMatrix::zeros(k, k);
    let mut dr = DMatrix::zeros(k, k);
    let kappa = perp_rate(sys.perp_decay);
    for a in 0..k {
        for b in 0..k {
            let mut s = p[a] * mbar[(a, b)] - sys.beta * u.m[(a, b)];
            let mut t = -kappa * sys.beta * u.rperp[(a, b)];
            for c in 0..k {
                s -= p[c] * (mbar[(c, b)] * ints.p[(a, c)] + ints.q_mu[c][(a, b)]);
                t -= p[c] * (ints.q_perp[c][(a, b)] + ints.q_perp[c][(b, a)]);
                t += sys.c_delta * il * p[c] * ints.corr[c][(a, b)];
            }
            dm[(a, b)] = s;
            dr[(a, b)] = t;
        }
    }
    Ok(KGmmSummary { m: dm, rperp: (&dr + dr.transpose()) * 0.5 })
}

/// Drift of the `λ = ∞` system, in closed form.
pub fn kgmm_drift_infinite(u: &KGmmSummary, sys: &OdeSystem) -> Result<KGmmSummary> {
    let spec = &sys.spec;
    let k = u.m.nrows();
    if spec.k() != k {
        return Err(Error::DimensionMismatch { expected: spec.k(), got: k });
    }
    let mbar = spec.mean_gram();
    let pb = pibar(&u.m);
    let p = &spec.probs;
    let mut dm = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let mut s = p[a] * mbar[(a, b)] - sys.beta * u.m[(a, b)];
            for c in 0..k {
                s -= p[c] * mbar[(c, b)] * pb[(a, c)];
            }
            dm[(a, b)] = s;
        }
    }
    Ok(KGmmSummary { m: dm, rperp: &u.rperp * (-perp_rate(sys.perp_decay) * sys.beta) })
}

/// `−Σ_a p_a m_aa + Σ_c p_c log Σ_b e^{m_bc} + (β/2)(‖m‖² + ‖R⊥‖²)`; the
/// `λ = ∞` flow with orthonormal means decreases it.
pub fn energy(u: &KGmmSummary, probs: &[f64], beta: f64) -> f64 {
    let k = u.m.nrows();
    let mut h = 0.5 * beta * (u.m.norm_squared() + u.rperp.norm_squared());
    for c in 0..k {
        h -= probs[c] * u.m[(c, c)];
        h += probs[c] * nets::log_sum_exp(&u.m.column(c).into_owned());
    }
    h
}

fn diag_equation(m: f64, pb: f64, beta: f64, k: usize) -> f64 {
    let km1 = (k - 1) as f64;
    let share = m.exp() / (km1 * (-m / km1).exp() + m.exp());
    m - (pb / beta) * (1.0 - share)
}

/// Stationary point of the `λ = ∞` flow with orthonormal means:
/// `m_bb` solves `m = (p_b/β)(1 − e^m/((k−1)e^{−m/(k−1)} + e^m))` and
/// `m_ab = −m_bb/(k−1)` off the diagonal.
pub fn kgmm_fixed_point_orthonormal(probs: &[f64], beta: f64, k: usize) -> Result<KGmmSummary> {
    if probs.len() != k || k < 2 || probs.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::BadProbs(format!("need {k} positive weights")));
    }
    if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
        return Err(Error::BadProbs("weights must sum to 1".into()));
    }
    if !(beta > 0.0) {
        return Err(Error::Config("beta must be positive".into()));
    }
    let mut m = DMatrix::zeros(k, k);
    for b in 0..k {
        let (mut lo, mut hi) = (0.0, probs[b] / beta);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if diag_equation(mid, probs[b], beta, k) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) {
                break;
            }
        }
        let root = 0.5 * (lo + hi);
        for a in 0..k {
            m[(a, b)] = if a == b { root } else { -root / (k - 1) as f64 };
        }
    }
    Ok(KGmmSummary { m, rperp: DMatrix::zeros(k, k) })
}

/// Max residual of `β m_ab = p_a 1_{a=b} − p_b π̄_b(a)`.
pub fn fixed_point_residual(m: &DMatrix<f64>, probs: &[f64], beta: f64) -> f64 {
    let pb = pibar(m);
    let k = m.nrows();
    let mut worst: f64 = 0.0;
    for a in 0..k {
        for b in 0..k {
            let rhs = if a == b { probs[a] } else { 0.0 } - probs[b] * pb[(a, b)];
            worst = worst.max((beta * m[(a, b)] - rhs).abs());
        }
    }
    worst
}
