//! Losses, gradients and per-sample second-derivative weights.
//!
//! One-layer network: logits `x·Y` with `x ∈ R^{k×d}`, softmax
//! cross-entropy. Two-layer network: `ŷ = σ(v·g(WY))` with ReLU `g`,
//! sigmoid `σ`, binary cross-entropy. `g'(0) = 0`.
//!
//! Second-derivative weights are the per-sample scalars that multiply
//! `Y⊗Y` (or `g(WY)⊗g(WY)`) in each Hessian or G block, so an empirical
//! block is `(1/M) Σ_ℓ w_ℓ Y_ℓ Y_ℓᵀ`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixtures::LabeledSample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OneLayer {
    pub x: DMatrix<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoLayer {
    pub w: DMatrix<f64>,
    pub v: DVector<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ParamState {
    OneLayer(OneLayer),
    TwoLayer(TwoLayer),
}

impl OneLayer {
    pub fn new(x: DMatrix<f64>) -> Self {
        OneLayer { x }
    }

    pub fn zeros(k: usize, d: usize) -> Self {
        OneLayer { x: DMatrix::zeros(k, d) }
    }

    pub fn k(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }
}

impl TwoLayer {
    /// Checked constructor; widths below 4 cannot express the XOR classifier.
    pub fn new(w: DMatrix<f64>, v: DVector<f64>) -> Result<Self> {
        if w.nrows() != v.len() {
            return Err(Error::DimensionMismatch { expected: w.nrows(), got: v.len() });
        }
        if w.nrows() < 4 {
            return Err(Error::WidthTooSmall { width: w.nrows() });
        }
        Ok(TwoLayer { w, v })
    }

    pub fn width(&self) -> usize {
        self.w.nrows()
    }

    pub fn d(&self) -> usize {
        self.w.ncols()
    }

    /// Parameters flattened as `(v, W row-major)`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.v.iter().copied().collect();
        for i in 0..self.width() {
            out.extend(self.w.row(i).iter());
        }
        out
    }

    pub fn from_flat(width: usize, d: usize, flat: &[f64]) -> Self {
        let v = DVector::from_column_slice(&flat[..width]);
        let w = DMatrix::from_row_slice(width, d, &flat[width..]);
        TwoLayer { w, v }
    }
}

impl ParamState {
    pub fn d(&self) -> usize {
        match self {
            ParamState::OneLayer(p) => p.d(),
            ParamState::TwoLayer(p) => p.d(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            ParamState::OneLayer(p) => p.x.iter().all(|v| v.is_finite()),
            ParamState::TwoLayer(p) => p.w.iter().chain(p.v.iter()).all(|v| v.is_finite()),
        }
    }

    pub fn as_one_layer(&self) -> Result<&OneLayer> {
        match self {
            ParamState::OneLayer(p) => Ok(p),
            _ => Err(Error::WrongModel("expected one-layer parameters".into())),
        }
    }

    pub fn as_two_layer(&self) -> Result<&TwoLayer> {
        match self {
            ParamState::TwoLayer(p) => Ok(p),
            _ => Err(Error::WrongModel("expected two-layer parameters".into())),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn relu(z: f64) -> f64 {
    z.max(0.0)
}

/// Softmax of a logit vector with max subtraction.
pub fn softmax(logits: &DVector<f64>) -> DVector<f64> {
    let max = logits.max();
    let mut p = logits.map(|l| (l - max).exp());
    let s = p.sum();
    p /= s;
    p
}

pub fn log_sum_exp(logits: &DVector<f64>) -> f64 {
    let max = logits.max();
    max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln()
}

fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

pub fn softmax_probs(x: &OneLayer, y: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(x.d(), y.len())?;
    Ok(softmax(&(&x.x * y)))
}

pub fn kgmm_loss(x: &OneLayer, s: &LabeledSample, beta: f64) -> Result<f64> {
    check_dim(x.d(), s.features.len())?;
    let logits = &x.x * &s.features;
    let c = s.class();
    if c >= x.k() {
        return Err(Error::DimensionMismatch { expected: x.k(), got: c + 1 });
    }
    Ok(-logits[c] + log_sum_exp(&logits) + 0.5 * beta * x.x.norm_squared())
}

/// Gradient of the unregularized loss; block `c` is `(π_c − y_c) Y`.
pub fn kgmm_grad(x: &OneLayer, s: &LabeledSample) -> Result<OneLayer> {
    let pi = softmax_probs(x, &s.features)?;
    let r = pi - s.onehot(x.k());
    Ok(OneLayer { x: &r * s.features.transpose() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KGmmWeights {
    pub pi: DVector<f64>,
    /// `π_b δ_bc − π_b π_c`
    pub dh: DMatrix<f64>,
    /// `(y_b − π_b)(y_c − π_c)`
    pub dg: DMatrix<f64>,
}

pub fn kgmm_second_weights(x: &OneLayer, s: &LabeledSample) -> Result<KGmmWeights> {
    let pi = softmax_probs(x, &s.features)?;
    Ok(kgmm_weights_from_pi(pi, &s.onehot(x.k())))
}

pub(crate) fn kgmm_weights_from_pi(pi: DVector<f64>, y: &DVector<f64>) -> KGmmWeights {
    let mut dh = -(&pi * pi.transpose());
    for b in 0..pi.len() {
        dh[(b, b)] += pi[b];
    }
    let r = y - &pi;
    let dg = &r * r.transpose();
    KGmmWeights { pi, dh, dg }
}

#[derive(Clone, Debug, PartialEq)]
pub struct XorForward {
    pub preact: DVector<f64>,
    pub gwy: DVector<f64>,
    pub gprime: DVector<f64>,
    pub yhat: f64,
}

pub fn xor_forward(p: &TwoLayer, y: &DVector<f64>) -> Result<XorForward> {
    check_dim(p.d(), y.len())?;
    let preact = &p.w * y;
    let gwy = preact.map(relu);
    let gprime = preact.map(|z| if z > 0.0 { 1.0 } else { 0.0 });
    let yhat = sigmoid(p.v.dot(&gwy));
    Ok(XorForward { preact, gwy, gprime, yhat })
}

pub fn xor_loss(p: &TwoLayer, s: &LabeledSample, beta: f64) -> Result<f64> {
    let f = xor_forward(p, &s.features)?;
    let z = p.v.dot(&f.gwy);
    Ok(-s.binary() * z + softplus(z) + 0.5 * beta * (p.w.norm_squared() + p.v.norm_squared()))
}

/// Gradient of the unregularized loss.
pub fn xor_grad(p: &TwoLayer, s: &LabeledSample) -> Result<TwoLayer> {
    let f = xor_forward(p, &s.features)?;
    let r = s.binary() - f.yhat;
    let v = -r * &f.gwy;
    let coef = f.gprime.component_mul(&p.v) * (-r);
    Ok(TwoLayer { w: &coef * s.features.transpose(), v })
}

#[derive(Clone, Debug, PartialEq)]
pub struct XorWeights {
    pub yhat: f64,
    pub gwy: DVector<f64>,
    pub gprime: DVector<f64>,
    pub hess_vv_scale: f64,
    pub hess_ww: DMatrix<f64>,
    pub g_vv_scale: f64,
    pub g_ww: DMatrix<f64>,
    /// Cross block `(v_i, W_j)` is `hess_vw[(i, j)] · Yᵀ`.
    pub hess_vw: DMatrix<f64>,
    pub g_vw: DMatrix<f64>,
}

pub fn xor_second_weights(p: &TwoLayer, s: &LabeledSample) -> Result<XorWeights> {
    let f = xor_forward(p, &s.features)?;
    if let Some(unit) = f.preact.iter().position(|&z| z == 0.0) {
        return Err(Error::ZeroPreactivation { unit });
    }
    let k = p.width();
    let r = s.binary() - f.yhat;
    let sp = f.yhat * (1.0 - f.yhat);
    let a = p.v.component_mul(&f.gprime);
    let aa = &a * a.transpose();
    let mut hess_vw = &f.gwy * a.transpose() * sp;
    for j in 0..k {
        hess_vw[(j, j)] -= r * f.gprime[j];
    }
    let g_vw = &f.gwy * a.transpose() * (r * r);
    Ok(XorWeights {
        yhat: f.yhat,
        hess_vv_scale: sp,
        hess_ww: &aa * sp,
        g_vv_scale: r * r,
        g_ww: &aa * (r * r),
        hess_vw,
        g_vw,
        gwy: f.gwy,
        gprime: f.gprime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixtures::Label;

    #[test]
    fn softmax_closed_forms() {
        let p = softmax(&DVector::from_vec(vec![1.0, 0.0]));
        let e = std::f64::consts::E;
        assert!((p[0] - e / (1.0 + e)).abs() < 1e-15);
        let p = softmax(&DVector::from_vec(vec![1000.0, 0.0]));
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.0);
    }

    #[test]
    fn kgmm_at_zero() {
        let x = OneLayer::zeros(2, 3);
        let s = LabeledSample { label: Label::Class(0), features: DVector::from_vec(vec![1.0, 2.0, 3.0]), component: 0 };
        assert!((kgmm_loss(&x, &s, 0.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        let g = kgmm_grad(&x, &s).unwrap();
        assert_eq!(g.x.row(0).transpose(), -&s.features / 2.0);
        assert_eq!(g.x.row(1).transpose(), &s.features / 2.0);
        let w = kgmm_second_weights(&x, &s).unwrap();
        assert_eq!(w.dh, DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]));
    }

    #[test]
    fn dead_units_are_inert() {
        let p = TwoLayer::new(DMatrix::from_element(4, 2, -1.0), DVector::from_element(4, 1.0)).unwrap();
        let s = LabeledSample { label: Label::Binary(1), features: DVector::from_vec(vec![1.0, 1.0]), component: 0 };
        let f = xor_forward(&p, &s.features).unwrap();
        assert_eq!(f.yhat, 0.5);
        let g = xor_grad(&p, &s).unwrap();
        assert!(g.w.iter().chain(g.v.iter()).all(|&z| z == 0.0));
    }

    #[test]
    fn zero_preactivation_rejected() {
        let mut w = DMatrix::from_element(4, 2, 1.0);
        w[(2, 0)] = -1.0;
        let p = TwoLayer::new(w, DVector::from_element(4, 1.0)).unwrap();
        let s = LabeledSample { label: Label::Binary(0), features: DVector::from_vec(vec![1.0, 1.0]), component: 2 };
        assert!(matches!(xor_second_weights(&p, &s), Err(Error::ZeroPreactivation { unit: 2 })));
    }

    #[test]
    fn narrow_width_rejected() {
        assert!(matches!(
            TwoLayer::new(DMatrix::zeros(3, 2), DVector::zeros(3)),
            Err(Error::WidthTooSmall { width: 3 })
        ));
    }
}
