//! Empirical Hessian and G-matrix blocks in factorized form
//! `(1/M) A diag(w) Aᵀ`, where `A` holds one column per sample.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, EigOptions, FnOperator, LinearOperator, SpectralReport};
use crate::mixtures::{LabeledSample, MixtureKind};
use crate::nets::{self, ParamState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixKind {
    Hessian,
    G,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BlockId {
    /// `(x^b, x^c)` block of the one-layer model.
    Class(usize, usize),
    /// Second-layer block of the two-layer model (size K×K).
    Vv,
    /// `(W_i, W_j)` block of the two-layer model.
    Ww(usize, usize),
}

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockId::Class(b, c) => write!(f, "x{b}x{c}"),
            BlockId::Vv => write!(f, "vv"),
            BlockId::Ww(i, j) => write!(f, "W{i}W{j}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FactorizedQuadratic {
    pub model: MixtureKind,
    pub kind: MatrixKind,
    /// d×M, one feature column per sample.
    pub features: DMatrix<f64>,
    /// K×M columns `g(WY)` (two-layer only).
    pub hidden: Option<DMatrix<f64>>,
    /// Weight vectors of length M, indexed `b·n + c` over the `n` first-layer
    /// blocks (classes or hidden units).
    pub weights: Vec<DVector<f64>>,
    pub vv_weights: Option<DVector<f64>>,
    /// Cross-block coefficients `(v_i, W_j)`, indexed `i·K + j`: the block is
    /// `(1/M) Σ_ℓ c_ℓ e_i Y_ℓᵀ`.
    pub cross_weights: Option<Vec<DVector<f64>>>,
    pub n_blocks: usize,
    pub m: usize,
}

pub fn assemble(samples: &[LabeledSample], params: &ParamState, kind: MatrixKind) -> Result<FactorizedQuadratic> {
    if samples.is_empty() {
        return Err(Error::EmptySampleSet);
    }
    let m = samples.len();
    let d = params.d();
    for s in samples {
        if s.features.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: s.features.len() });
        }
    }
    let mut features = DMatrix::zeros(d, m);
    for (l, s) in samples.iter().enumerate() {
        features.set_column(l, &s.features);
    }
    match params {
        ParamState::OneLayer(x) => {
            let k = x.k();
            let per: Vec<DMatrix<f64>> = samples
                .par_iter()
                .map(|s| {
                    let w = nets::kgmm_second_weights(x, s)?;
                    Ok(match kind {
                        MatrixKind::Hessian => w.dh,
                        MatrixKind::G => w.dg,
                    })
                })
                .collect::<Result<_>>()?;
            let weights = (0..k * k)
                .map(|bc| DVector::from_fn(m, |l, _| per[l][(bc / k, bc % k)]))
                .collect();
            Ok(FactorizedQuadratic {
                model: MixtureKind::KGmm,
                kind,
                features,
                hidden: None,
                weights,
                vv_weights: None,
                cross_weights: None,
                n_blocks: k,
                m,
            })
        }
        ParamState::TwoLayer(p) => {
            let k = p.width();
            if kind == MatrixKind::Hessian {
                if let Some(row) = p.w.row_iter().position(|r| r.iter().all(|&z| z == 0.0)) {
                    return Err(Error::ZeroPreactivation { unit: row });
                }
            }
            let per: Vec<nets::XorWeights> = samples
                .par_iter()
                .map(|s| nets::xor_second_weights(p, s))
                .collect::<Result<_>>()?;
            let mut hidden = DMatrix::zeros(k, m);
            for (l, w) in per.iter().enumerate() {
                hidden.set_column(l, &w.gwy);
            }
            let (ww, vv, cross): (Vec<&DMatrix<f64>>, Vec<f64>, Vec<&DMatrix<f64>>) = match kind {
                MatrixKind::Hessian => (
                    per.iter().map(|w| &w.hess_ww).collect(),
                    per.iter().map(|w| w.hess_vv_scale).collect(),
                    per.iter().map(|w| &w.hess_vw).collect(),
                ),
                MatrixKind::G => (
                    per.iter().map(|w| &w.g_ww).collect(),
                    per.iter().map(|w| w.g_vv_scale).collect(),
                    per.iter().map(|w| &w.g_vw).collect(),
                ),
            };
            let weights = (0..k * k).map(|ij| DVector::from_fn(m, |l, _| ww[l][(ij / k, ij % k)])).collect();
            let cross_weights = (0..k * k).map(|ij| DVector::from_fn(m, |l, _| cross[l][(ij / k, ij % k)])).collect();
            Ok(FactorizedQuadratic {
                model: MixtureKind::Xor,
                kind,
                features,
                hidden: Some(hidden),
                weights,
                vv_weights: Some(DVector::from_vec(vv)),
                cross_weights: Some(cross_weights),
                n_blocks: k,
                m,
            })
        }
    }
}

impl FactorizedQuadratic {
    fn parts(&self, block: BlockId) -> Result<(&DMatrix<f64>, &DVector<f64>)> {
        let n = self.n_blocks;
        match (block, self.model) {
            (BlockId::Class(b, c), MixtureKind::KGmm) | (BlockId::Ww(b, c), MixtureKind::Xor) => {
                if b >= n || c >= n {
                    return Err(Error::BadIndices { b, c, n });
                }
                Ok((&self.features, &self.weights[b * n + c]))
            }
            (BlockId::Vv, MixtureKind::Xor) => Ok((self.hidden.as_ref().unwrap(), self.vv_weights.as_ref().unwrap())),
            _ => Err(Error::WrongModel(format!("block {block} does not exist for this model"))),
        }
    }

    pub fn block_dim(&self, block: BlockId) -> usize {
        match block {
            BlockId::Vv => self.n_blocks,
            _ => self.features.nrows(),
        }
    }

    /// `(1/M) A diag(w) Aᵀ u` without forming the block.
    pub fn matvec(&self, block: BlockId, u: &DVector<f64>) -> Result<DVector<f64>> {
        let (a, w) = self.parts(block)?;
        if u.len() != a.nrows() {
            return Err(Error::DimensionMismatch { expected: a.nrows(), got: u.len() });
        }
        let mut t = a.tr_mul(u);
        t.component_mul_assign(w);
        Ok(a * t / self.m as f64)
    }

    pub fn dense_block(&self, block: BlockId) -> Result<DMatrix<f64>> {
        let (a, w) = self.parts(block)?;
        let mut scaled = a.clone();
        for (l, mut col) in scaled.column_iter_mut().enumerate() {
            col *= w[l];
        }
        Ok(scaled * a.transpose() / self.m as f64)
    }

    /// Dense `(v, W_j)` cross block, K×d.
    pub fn dense_cross(&self, j: usize) -> Result<DMatrix<f64>> {
        let cw = self
            .cross_weights
            .as_ref()
            .ok_or_else(|| Error::WrongModel("cross blocks exist only for the two-layer model".into()))?;
        let k = self.n_blocks;
        if j >= k {
            return Err(Error::BadIndices { b: 0, c: j, n: k });
        }
        let mut out = DMatrix::zeros(k, self.features.nrows());
        for i in 0..k {
            let row = &self.features * &cw[i * k + j] / self.m as f64;
            out.set_row(i, &row.transpose());
        }
        Ok(out)
    }

    pub fn operator(&self, block: BlockId) -> Result<impl LinearOperator + '_> {
        let n = self.block_dim(block);
        self.parts(block)?;
        Ok(FnOperator { n, f: move |u: &DVector<f64>| self.matvec(block, u).expect("checked block") })
    }

    /// The whole one-layer matrix on `R^{kd}` (blocks stacked by class).
    pub fn full_operator(&self) -> Result<impl LinearOperator + '_> {
        if self.model != MixtureKind::KGmm {
            return Err(Error::WrongModel("full operator is for the one-layer model".into()));
        }
        let k = self.n_blocks;
        let d = self.features.nrows();
        Ok(FnOperator {
            n: k * d,
            f: move |u: &DVector<f64>| {
                let a = &self.features;
                let t: Vec<DVector<f64>> = (0..k).map(|c| a.tr_mul(&u.rows(c * d, d).into_owned())).collect();
                let mut out = DVector::zeros(k * d);
                for b in 0..k {
                    let mut s = DVector::zeros(self.m);
                    for (c, tc) in t.iter().enumerate() {
                        s += self.weights[b * k + c].component_mul(tc);
                    }
                    out.rows_mut(b * d, d).copy_from(&(a * s / self.m as f64));
                }
                out
            },
        })
    }

    /// Top `r` eigenpairs of a block: dense for small blocks, Lanczos otherwise.
    pub fn eigs(&self, block: BlockId, r: usize, opts: &EigOptions) -> Result<SpectralReport> {
        let n = self.block_dim(block);
        if n <= 64 {
            return linalg::dense_eigs(&self.dense_block(block)?, r, opts);
        }
        let op = self.operator(block)?;
        linalg::top_eigs(&op, r, opts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixtures::{orthonormal_means, MixtureSpec, Noise};
    use crate::nets::OneLayer;

    #[test]
    fn zero_weights_give_zero_block() {
        let spec = MixtureSpec::xor_axes(6, 1, Noise::Precision(5.0)).unwrap();
        let p = ParamState::TwoLayer(nets::TwoLayer::new(DMatrix::from_element(4, 6, 0.3), DVector::zeros(4)).unwrap());
        let fq = assemble(&spec.sample(1, 10), &p, MatrixKind::Hessian).unwrap();
        assert_eq!(fq.dense_block(BlockId::Ww(1, 2)).unwrap().amax(), 0.0);
    }

    #[test]
    fn matvec_of_zero() {
        let spec = MixtureSpec::kgmm_uniform(orthonormal_means(2, 5, 1).unwrap(), Noise::Precision(5.0)).unwrap();
        let p = ParamState::OneLayer(OneLayer::zeros(2, 5));
        let fq = assemble(&spec.sample(1, 10), &p, MatrixKind::G).unwrap();
        assert_eq!(fq.matvec(BlockId::Class(0, 1), &DVector::zeros(5)).unwrap().amax(), 0.0);
        assert!(matches!(fq.matvec(BlockId::Vv, &DVector::zeros(2)), Err(Error::WrongModel(_))));
        assert!(matches!(fq.matvec(BlockId::Class(0, 2), &DVector::zeros(5)), Err(Error::BadIndices { .. })));
    }
}
