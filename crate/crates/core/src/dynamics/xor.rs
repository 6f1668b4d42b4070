//! Effective dynamics of `(v, m^μ, m^ν, R⊥)` for the two-layer XOR model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kgmm::check_psd;
use super::OdeSystem;
use crate::error::{Error, Result};
use crate::mixtures::MixtureSpec;
use crate::nets::{relu, sigmoid};
use crate::population::psd_sqrt;
use crate::rng;
use crate::sgd::XorSummary;

const MC_BATCHES: usize = 8;

/// Center coordinates `(μ·ϑ, ν·ϑ)` and labels of the four components.
const CENTERS: [(f64, f64, f64); 4] = [(1.0, 0.0, 1.0), (-1.0, 0.0, 1.0), (0.0, 1.0, 0.0), (0.0, -1.0, 0.0)];

#[derive(Clone, Debug)]
pub struct XorIntegrals {
    /// `E[1_i ⟨μ, Y⟩ r]`, with `r = σ(v·g(WY)) − y`.
    pub a_mu: DVector<f64>,
    pub a_nu: DVector<f64>,
    /// `a_perp[(i, j)] = E[1_i ⟨W_j^⊥, Y⟩ r]`
    pub a_perp: DMatrix<f64>,
    /// `b[(i, j)] = E[1_i 1_j r²]`
    pub b: DMatrix<f64>,
}

impl XorIntegrals {
    fn zeros(k: usize) -> Self {
        XorIntegrals { a_mu: DVector::zeros(k), a_nu: DVector::zeros(k), a_perp: DMatrix::zeros(k, k), b: DMatrix::zeros(k, k) }
    }

    fn add_point(&mut self, u: &XorSummary, pmu: f64, pnu: f64, perp: &DVector<f64>, y: f64, w: f64) {
        let k = u.v.len();
        let pre = DVector::from_fn(k, |i, _| u.m_mu[i] * pmu + u.m_nu[i] * pnu + perp[i]);
        let out: f64 = (0..k).map(|i| u.v[i] * relu(pre[i])).sum();
        let r = sigmoid(out) - y;
        for i in 0..k {
            if pre[i] <= 0.0 {
                continue;
            }
            self.a_mu[i] += w * pmu * r;
            self.a_nu[i] += w * pnu * r;
            for j in 0..k {
                self.a_perp[(i, j)] += w * perp[j] * r;
                if pre[j] > 0.0 {
                    self.b[(i, j)] += w * r * r;
                }
            }
        }
    }

    fn scale_add(&mut self, other: &XorIntegrals, s: f64) {
        self.a_mu += &other.a_mu * s;
        self.a_nu += &other.a_nu * s;
        self.a_perp += &other.a_perp * s;
        self.b += &other.b * s;
    }
}

fn check_shape(u: &XorSummary) -> Result<usize> {
    let k = u.v.len();
    for (len, what) in [(u.m_mu.len(), k), (u.m_nu.len(), k), (u.rperp.nrows(), k), (u.rperp.ncols(), k)] {
        if len != what {
            return Err(Error::DimensionMismatch { expected: what, got: len });
        }
    }
    Ok(k)
}

/// Averages over the four centers with weight ¼; the noise is reduced to
/// `(⟨μ, Z⟩, ⟨ν, Z⟩, W⊥Z)`.
pub fn xor_integrals(u: &XorSummary, spec: &MixtureSpec, n_mc: usize, seed: u64) -> Result<XorIntegrals> {
    let k = check_shape(u)?;
    check_psd(&u.rperp)?;
    let il = spec.inv_lambda();
    let mut out = XorIntegrals::zeros(k);
    if il == 0.0 {
        let zero = DVector::zeros(k);
        for (pmu, pnu, y) in CENTERS {
            out.add_point(u, pmu, pnu, &zero, y, 0.25);
        }
        return Ok(out);
    }
    let s = il.sqrt();
    let root = psd_sqrt(&u.rperp) * s;
    let pairs = (n_mc / 2).max(MC_BATCHES);
    let per_batch = pairs.div_ceil(MC_BATCHES);
    let w = 0.25 / (2 * per_batch * MC_BATCHES) as f64;
    let parts: Vec<XorIntegrals> = (0..MC_BATCHES)
        .into_par_iter()
        .map(|batch| {
            let mut r = rng::stream(seed, batch as u64);
            let mut acc = XorIntegrals::zeros(k);
            for _ in 0..per_batch {
                let zmu: f64 = r.sample::<f64, _>(StandardNormal) * s;
                let znu: f64 = r.sample::<f64, _>(StandardNormal) * s;
                let perp = &root * DVector::from_fn(k, |_, _| r.sample::<f64, _>(StandardNormal));
                let neg = -&perp;
                for (pmu, pnu, y) in CENTERS {
                    acc.add_point(u, pmu + zmu, pnu + znu, &perp, y, w);
                    acc.add_point(u, pmu - zmu, pnu - znu, &neg, y, w);
                }
            }
            acc
        })
        .collect();
    for p in &parts {
        out.scale_add(p, 1.0);
    }
    Ok(out)
}

pub fn xor_drift_finite(u: &XorSummary, sys: &OdeSystem) -> Result<XorSummary> {
    let k = check_shape(u)?;
    let ints = xor_integrals(u, &sys.spec, sys.n_mc, sys.seed)?;
    let beta = sys.beta;
    let il = sys.spec.inv_lambda();
    let dv = DVector::from_fn(k, |i, _| {
        -(u.m_mu[i] * ints.a_mu[i] + u.m_nu[i] * ints.a_nu[i] + ints.a_perp[(i, i)]) - beta * u.v[i]
    });
    let dmu = DVector::from_fn(k, |i, _| -u.v[i] * ints.a_mu[i] - beta * u.m_mu[i]);
    let dnu = DVector::from_fn(k, |i, _| -u.v[i] * ints.a_nu[i] - beta * u.m_nu[i]);
    let dr = DMatrix::from_fn(k, k, |i, j| {
        -(u.v[i] * ints.a_perp[(i, j)] + u.v[j] * ints.a_perp[(j, i)]) - 2.0 * beta * u.rperp[(i, j)]
            + sys.c_delta * u.v[i] * u.v[j] * ints.b[(i, j)] * il
    });
    Ok(XorSummary { v: dv, m_mu: dmu, m_nu: dnu, rperp: dr })
}

fn indicator(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// Closed-form drift at `λ = ∞`. A coordinate sitting exactly at zero has
/// zero drift in `m`.
pub fn xor_drift_infinite(u: &XorSummary, beta: f64) -> Result<XorSummary> {
    let k = check_shape(u)?;
    let dot = |m: &DVector<f64>, s: f64| -> f64 { (0..k).map(|i| u.v[i] * relu(s * m[i])).sum() };
    let (sm_p, sm_m) = (sigmoid(-dot(&u.m_mu, 1.0)), sigmoid(-dot(&u.m_mu, -1.0)));
    let (sn_p, sn_m) = (sigmoid(dot(&u.m_nu, 1.0)), sigmoid(dot(&u.m_nu, -1.0)));
    let dv = DVector::from_fn(k, |i, _| {
        let (a, b) = (u.m_mu[i], u.m_nu[i]);
        0.25 * (relu(a) * sm_p + relu(-a) * sm_m) - 0.25 * (relu(b) * sn_p + relu(-b) * sn_m) - beta * u.v[i]
    });
    let dmu = DVector::from_fn(k, |i, _| {
        let a = u.m_mu[i];
        0.25 * u.v[i] * (indicator(a) * sm_p - indicator(-a) * sm_m) - beta * a
    });
    let dnu = DVector::from_fn(k, |i, _| {
        let b = u.m_nu[i];
        -0.25 * u.v[i] * (indicator(b) * sn_p - indicator(-b) * sn_m) - beta * b
    });
    Ok(XorSummary { v: dv, m_mu: dmu, m_nu: dnu, rperp: &u.rperp * (-2.0 * beta) })
}

/// Replaces exact zeros in `m^μ, m^ν` by `±1e-12` with random signs.
pub fn perturb_zero_orthants(u: &XorSummary, seed: u64) -> XorSummary {
    let mut r = rng::stream(seed, 0x0e7);
    let mut out = u.clone();
    for m in [&mut out.m_mu, &mut out.m_nu] {
        for z in m.iter_mut() {
            if *z == 0.0 {
                *z = if r.gen::<bool>() { 1e-12 } else { -1e-12 };
            }
        }
    }
    out
}

/// Coordinates of `m^μ, m^ν` whose sign strictly flipped during a step are
/// pinned at zero.
pub(crate) fn clamp_sign_flips(before: &XorSummary, after: &mut XorSummary) {
    for (b, a) in [(&before.m_mu, &mut after.m_mu), (&before.m_nu, &mut after.m_nu)] {
        for i in 0..b.len() {
            if b[i] * a[i] < 0.0 || b[i] == 0.0 {
                a[i] = 0.0;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrthantSet {
    Zero,
    MuPlus,
    MuMinus,
    NuPlus,
    NuMinus,
}

/// Assignment of each hidden unit to one of the five sets
/// `I₀, I_{μ+}, I_{μ−}, I_{ν+}, I_{ν−}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XorPartition {
    pub sets: Vec<OrthantSet>,
}

impl XorPartition {
    /// Builds a partition from explicit index lists, which must be disjoint
    /// and cover `0..k`.
    pub fn from_index_sets(
        k: usize,
        zero: &[usize],
        mu_plus: &[usize],
        mu_minus: &[usize],
        nu_plus: &[usize],
        nu_minus: &[usize],
    ) -> Result<Self> {
        let mut sets = vec![None; k];
        let lists = [
            (zero, OrthantSet::Zero),
            (mu_plus, OrthantSet::MuPlus),
            (mu_minus, OrthantSet::MuMinus),
            (nu_plus, OrthantSet::NuPlus),
            (nu_minus, OrthantSet::NuMinus),
        ];
        for (list, set) in lists {
            for &i in list {
                if i >= k {
                    return Err(Error::BadPartition(format!("index {i} out of range for width {k}")));
                }
                if sets[i].replace(set).is_some() {
                    return Err(Error::BadPartition(format!("index {i} appears twice")));
                }
            }
        }
        let sets = sets
            .into_iter()
            .enumerate()
            .map(|(i, s)| s.ok_or_else(|| Error::BadPartition(format!("index {i} is not assigned"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(XorPartition { sets })
    }

    pub fn count(&self, set: OrthantSet) -> usize {
        self.sets.iter().filter(|&&s| s == set).count()
    }
}

/// `ln((1 − 4β)/(4β))`, the squared mass each nonempty orthant set carries.
pub fn xor_orthant_mass(beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 0.125) {
        return Err(Error::BetaOutOfRange { beta });
    }
    Ok(((1.0 - 4.0 * beta) / (4.0 * beta)).ln())
}

/// Stationary point of the `λ = ∞` flow. Each nonempty set gets equal
/// magnitudes `sqrt(S/|I|)` unless `magnitudes` gives per-unit values, whose
/// squares must sum to `S` on every nonempty set.
pub fn xor_fixed_point(partition: &XorPartition, beta: f64, magnitudes: Option<&[f64]>) -> Result<XorSummary> {
    let s = xor_orthant_mass(beta)?;
    let k = partition.sets.len();
    if k == 0 {
        return Err(Error::BadPartition("empty partition".into()));
    }
    let mut v = DVector::zeros(k);
    let mut m_mu = DVector::zeros(k);
    let mut m_nu = DVector::zeros(k);
    for set in [OrthantSet::MuPlus, OrthantSet::MuMinus, OrthantSet::NuPlus, OrthantSet::NuMinus] {
        let members: Vec<usize> = (0..k).filter(|&i| partition.sets[i] == set).collect();
        if members.is_empty() {
            continue;
        }
        let mags: Vec<f64> = match magnitudes {
            Some(m) => {
                if m.len() != k {
                    return Err(Error::BadPartition(format!("expected {k} magnitudes, got {}", m.len())));
                }
                let sel: Vec<f64> = members.iter().map(|&i| m[i]).collect();
                let total: f64 = sel.iter().map(|a| a * a).sum();
                if sel.iter().any(|&a| !(a > 0.0)) || (total - s).abs() > 1e-10 * s.max(1.0) {
                    return Err(Error::BadPartition(format!("magnitudes of {set:?} must be positive with squares summing to {s}")));
                }
                sel
            }
            None => vec![(s / members.len() as f64).sqrt(); members.len()],
        };
        for (&i, a) in members.iter().zip(mags) {
            match set {
                OrthantSet::MuPlus => (m_mu[i], v[i]) = (a, a),
                OrthantSet::MuMinus => (m_mu[i], v[i]) = (-a, a),
                OrthantSet::NuPlus => (m_nu[i], v[i]) = (-a, -a),
                OrthantSet::NuMinus => (m_nu[i], v[i]) = (a, -a),
                OrthantSet::Zero => unreachable!(),
            }
        }
    }
    let u = XorSummary { v, m_mu, m_nu, rperp: DMatrix::zeros(k, k) };
    let drift = xor_drift_infinite(&u, beta)?;
    let residual = drift.v.amax().max(drift.m_mu.amax()).max(drift.m_nu.amax());
    if residual > 1e-8 {
        return Err(Error::ResidualTooLarge { residual });
    }
    Ok(u)
}
