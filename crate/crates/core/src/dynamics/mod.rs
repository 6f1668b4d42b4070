//! Ballistic ODE limits of the summary statistics.
//!
//! The one-layer system tracks `m_ab = x^a·μ_b` and the residual Gram
//! `R⊥`; the full Gram is recovered as `R = m M̄⁻¹ mᵀ + R⊥`, so every
//! expectation reduces to a `2k`-dimensional Gaussian integral. The XOR
//! system tracks `(v, m^μ, m^ν, R⊥)` and reduces to a `(K + 2)`-dimensional
//! one conditioned on the four centers.
//!
//! Finite-`λ` drifts are Monte Carlo estimates with antithetic pairs. The
//! seed is fixed per system, so every RK4 stage sees the same draws and the
//! integrated field is smooth in the state.

mod kgmm;
mod xor;

pub use kgmm::{
    energy, fixed_point_residual, gauss_integrals_kgmm, kgmm_drift_finite, kgmm_drift_infinite,
    kgmm_fixed_point_orthonormal, pibar, KGmmIntegrals,
};
pub use xor::{
    perturb_zero_orthants, xor_drift_finite, xor_drift_infinite, xor_fixed_point, xor_integrals, xor_orthant_mass,
    OrthantSet, XorIntegrals, XorPartition,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixtures::{MixtureKind, MixtureSpec};
use crate::sgd::{SummaryStats, Trajectory};

pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_N_MC: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OdeModel {
    KGmmFinite,
    KGmmInfinite,
    XorFinite,
    XorInfinite,
}

/// Decay rate of `R⊥` in the one-layer system. SGD on the regularized loss
/// contracts `x^{a,⊥}` at rate `β`, so the Gram contracts at `2β`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerpDecay {
    SingleBeta,
    #[default]
    DoubleBeta,
}

#[derive(Clone, Debug)]
pub struct OdeSystem {
    pub model: OdeModel,
    pub spec: MixtureSpec,
    pub beta: f64,
    /// `δ = c_δ/d`; zero drops the noise corrector.
    pub c_delta: f64,
    pub n_mc: usize,
    pub seed: u64,
    pub perp_decay: PerpDecay,
}

impl OdeSystem {
    pub fn new(model: OdeModel, spec: MixtureSpec, beta: f64, c_delta: f64) -> Result<Self> {
        let kind_ok = matches!(
            (model, spec.kind),
            (OdeModel::KGmmFinite | OdeModel::KGmmInfinite, MixtureKind::KGmm)
                | (OdeModel::XorFinite | OdeModel::XorInfinite, MixtureKind::Xor)
        );
        if !kind_ok {
            return Err(Error::WrongModel(format!("{model:?} does not fit a {:?} mixture", spec.kind)));
        }
        if !(c_delta >= 0.0) || !(beta >= 0.0) {
            return Err(Error::Config("c_delta and beta must be nonnegative".into()));
        }
        Ok(OdeSystem { model, spec, beta, c_delta, n_mc: DEFAULT_N_MC, seed: 0, perp_decay: PerpDecay::default() })
    }

    /// Picks the finite or infinite variant from the mixture's noise.
    pub fn for_spec(spec: MixtureSpec, beta: f64, c_delta: f64) -> Result<Self> {
        let infinite = spec.inv_lambda() == 0.0;
        let model = match (spec.kind, infinite) {
            (MixtureKind::KGmm, false) => OdeModel::KGmmFinite,
            (MixtureKind::KGmm, true) => OdeModel::KGmmInfinite,
            (MixtureKind::Xor, false) => OdeModel::XorFinite,
            (MixtureKind::Xor, true) => OdeModel::XorInfinite,
        };
        OdeSystem::new(model, spec, beta, c_delta)
    }

    pub fn with_mc(mut self, n_mc: usize, seed: u64) -> Self {
        self.n_mc = n_mc;
        self.seed = seed;
        self
    }

    pub fn with_perp_decay(mut self, decay: PerpDecay) -> Self {
        self.perp_decay = decay;
        self
    }

    pub fn drift(&self, u: &SummaryStats) -> Result<SummaryStats> {
        Ok(match self.model {
            OdeModel::KGmmFinite => SummaryStats::KGmm(kgmm_drift_finite(u.as_kgmm()?, self)?),
            OdeModel::KGmmInfinite => SummaryStats::KGmm(kgmm_drift_infinite(u.as_kgmm()?, self)?),
            OdeModel::XorFinite => SummaryStats::Xor(xor_drift_finite(u.as_xor()?, self)?),
            OdeModel::XorInfinite => SummaryStats::Xor(xor_drift_infinite(u.as_xor()?, self.beta)?),
        })
    }
}

/// One classical RK4 step of `ẏ = f(y)`.
pub fn rk4_step<F>(f: &mut F, y: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, z)| x + s * z).collect() };
    let k1 = f(y)?;
    let k2 = f(&axpy(y, 0.5 * dt, &k1))?;
    let k3 = f(&axpy(y, 0.5 * dt, &k2))?;
    let k4 = f(&axpy(y, dt, &k3))?;
    Ok((0..y.len()).map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<SummaryStats>,
    pub dt: f64,
    /// Largest ℓ∞ norm of the drift seen at any stage.
    pub max_drift_norm: f64,
}

impl OdeTrajectory {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        let Some(first) = self.states.first() else {
            return Ok(());
        };
        writeln!(out, "t,{}", first.names().join(","))?;
        for (t, s) in self.times.iter().zip(&self.states) {
            let row: Vec<String> = s.to_flat().iter().map(|&v| crate::fmt17(v)).collect();
            writeln!(out, "{},{}", crate::fmt17(*t), row.join(","))?;
        }
        Ok(())
    }

    pub fn last(&self) -> &SummaryStats {
        self.states.last().expect("trajectory has at least the initial state")
    }
}

/// Fixed-step RK4 on `[0, horizon]`, recording every `record_every` steps
/// (and the endpoint). XOR `λ = ∞` runs start from perturbed zeros and pin
/// coordinates that cross an orthant wall.
pub fn integrate(sys: &OdeSystem, u0: &SummaryStats, horizon: f64, dt: f64, record_every: usize) -> Result<OdeTrajectory> {
    if !(dt > 0.0) || !(horizon >= 0.0) {
        return Err(Error::Config(format!("need dt > 0 and horizon >= 0, got dt={dt}, horizon={horizon}")));
    }
    let record_every = record_every.max(1);
    let steps = (horizon / dt).round() as usize;
    let start = match (sys.model, u0) {
        (OdeModel::XorInfinite, SummaryStats::Xor(x)) => SummaryStats::Xor(perturb_zero_orthants(x, sys.seed)),
        _ => u0.clone(),
    };
    sys.drift(&start)?;
    let mut max_drift: f64 = 0.0;
    let mut f = |y: &[f64]| -> Result<Vec<f64>> {
        let d = sys.drift(&start.with_flat(y))?.to_flat();
        max_drift = d.iter().fold(max_drift, |m, v| m.max(v.abs()));
        Ok(d)
    };
    let mut y = start.to_flat();
    let mut times = vec![0.0];
    let mut states = vec![start.clone()];
    for step in 1..=steps {
        let mut next = rk4_step(&mut f, &y, dt)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        if let (OdeModel::XorInfinite, SummaryStats::Xor(_)) = (sys.model, &start) {
            let before = start.with_flat(&y);
            let SummaryStats::Xor(mut after) = start.with_flat(&next) else { unreachable!() };
            xor::clamp_sign_flips(before.as_xor()?, &mut after);
            next = SummaryStats::Xor(after).to_flat();
        }
        y = next;
        if step % record_every == 0 || step == steps {
            times.push(step as f64 * dt);
            states.push(start.with_flat(&y));
        }
    }
    Ok(OdeTrajectory { times, states, dt, max_drift_norm: max_drift })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Comparison {
    pub times: Vec<f64>,
    /// ℓ∞ distance between the two summaries at each time.
    pub gaps: Vec<f64>,
    pub sup_gap: f64,
    pub names: Vec<String>,
    /// Per-coordinate differences, indexed `[time][coordinate]`.
    pub per_coordinate: Vec<Vec<f64>>,
}

impl Comparison {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,gap,{}", self.names.join(","))?;
        for ((t, g), row) in self.times.iter().zip(&self.gaps).zip(&self.per_coordinate) {
            let row: Vec<String> = row.iter().map(|&v| crate::fmt17(v)).collect();
            writeln!(out, "{},{},{}", crate::fmt17(*t), crate::fmt17(*g), row.join(","))?;
        }
        Ok(())
    }
}

fn interpolate(times: &[f64], values: &[Vec<f64>], t: f64) -> Option<Vec<f64>> {
    let eps = 1e-9;
    if times.is_empty() || t < times[0] - eps || t > times[times.len() - 1] + eps {
        return None;
    }
    let hi = times.partition_point(|&s| s < t).min(times.len() - 1);
    if hi == 0 || (times[hi] - t).abs() <= eps {
        return Some(values[hi].clone());
    }
    let lo = hi - 1;
    let w = (t - times[lo]) / (times[hi] - times[lo]);
    Some(values[lo].iter().zip(&values[hi]).map(|(a, b)| a + w * (b - a)).collect())
}

fn compare_series(
    ref_times: &[f64],
    ref_states: &[Vec<f64>],
    other_times: &[f64],
    other_states: &[Vec<f64>],
    names: Vec<String>,
) -> Result<Comparison> {
    let mut out = Comparison { times: vec![], gaps: vec![], sup_gap: 0.0, names, per_coordinate: vec![] };
    for (t, s) in other_times.iter().zip(other_states) {
        let Some(r) = interpolate(ref_times, ref_states, *t) else { continue };
        if r.len() != s.len() {
            return Err(Error::GridMismatch(format!("summaries have {} and {} coordinates", r.len(), s.len())));
        }
        let diff: Vec<f64> = r.iter().zip(s).map(|(a, b)| a - b).collect();
        let gap = diff.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        out.sup_gap = out.sup_gap.max(gap);
        out.times.push(*t);
        out.gaps.push(gap);
        out.per_coordinate.push(diff);
    }
    if out.times.is_empty() {
        return Err(Error::GridMismatch("time grids do not overlap".into()));
    }
    Ok(out)
}

/// Sup-norm gap over the ODE grid, with the SGD records linearly
/// interpolated in `t`. Differences are `SGD − ODE`.
pub fn compare_sgd_ode(sgd: &Trajectory, ode: &OdeTrajectory) -> Result<Comparison> {
    let first = sgd.records.first().ok_or_else(|| Error::GridMismatch("empty SGD trajectory".into()))?;
    let names = first.summary.names();
    let st: Vec<f64> = sgd.records.iter().map(|r| r.t).collect();
    let sv: Vec<Vec<f64>> = sgd.records.iter().map(|r| r.summary.to_flat()).collect();
    let ov: Vec<Vec<f64>> = ode.states.iter().map(|s| s.to_flat()).collect();
    compare_series(&st, &sv, &ode.times, &ov, names)
}

/// Gap between two ODE trajectories on the grid of `b`.
pub fn compare_odes(a: &OdeTrajectory, b: &OdeTrajectory) -> Result<Comparison> {
    let names = a.states.first().map(|s| s.names()).unwrap_or_default();
    let av: Vec<Vec<f64>> = a.states.iter().map(|s| s.to_flat()).collect();
    let bv: Vec<Vec<f64>> = b.states.iter().map(|s| s.to_flat()).collect();
    compare_series(&a.times, &av, &b.times, &bv, names)
}
