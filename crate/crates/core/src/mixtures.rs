//! Data models: a k-class Gaussian mixture with linearly independent unit
//! means, and the four-component XOR mixture with means ±μ (label 1) and
//! ±ν (label 0). Noise is isotropic with covariance `I/λ`; `Noise::Zero`
//! stands for the noiseless limit.
//!
//! Sample `i` of a stream is a pure function of `(seed, i)`, so any index
//! range can be generated independently and in parallel.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const UNIT_TOL: f64 = 1e-12;
const GRAM_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MixtureKind {
    KGmm,
    Xor,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Noise {
    Precision(f64),
    Zero,
}

#[derive(Clone, Debug)]
pub struct MixtureSpec {
    pub kind: MixtureKind,
    pub d: usize,
    /// Rows are the means. For XOR the two rows are μ and ν.
    pub means: DMatrix<f64>,
    /// Class weights (KGmm). For XOR this holds the four component weights.
    pub probs: Vec<f64>,
    pub noise: Noise,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Label {
    Class(usize),
    Binary(u8),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSample {
    pub label: Label,
    pub features: DVector<f64>,
    /// Mixture component the sample was drawn from. For XOR: 0 → +μ,
    /// 1 → −μ, 2 → +ν, 3 → −ν.
    pub component: usize,
}

impl LabeledSample {
    pub fn onehot(&self, k: usize) -> DVector<f64> {
        let mut y = DVector::zeros(k);
        if let Label::Class(c) = self.label {
            y[c] = 1.0;
        }
        y
    }

    pub fn class(&self) -> usize {
        match self.label {
            Label::Class(c) => c,
            Label::Binary(b) => b as usize,
        }
    }

    pub fn binary(&self) -> f64 {
        match self.label {
            Label::Binary(b) => b as f64,
            Label::Class(c) => c as f64,
        }
    }
}

/// `μ_i = e_{i·spacing}` for `i = 0..k`.
pub fn orthonormal_means(k: usize, d: usize, spacing: usize) -> Result<DMatrix<f64>> {
    let spacing = spacing.max(1);
    if k == 0 || (k - 1) * spacing >= d {
        return Err(Error::DimensionMismatch { expected: (k.max(1) - 1) * spacing + 1, got: d });
    }
    let mut m = DMatrix::zeros(k, d);
    for i in 0..k {
        m[(i, i * spacing)] = 1.0;
    }
    Ok(m)
}

impl MixtureSpec {
    pub fn kgmm(means: DMatrix<f64>, probs: Vec<f64>, noise: Noise) -> Result<Self> {
        let spec = MixtureSpec { kind: MixtureKind::KGmm, d: means.ncols(), means, probs, noise };
        spec.validate()?;
        Ok(spec)
    }

    /// Equal class weights.
    pub fn kgmm_uniform(means: DMatrix<f64>, noise: Noise) -> Result<Self> {
        let k = means.nrows();
        Self::kgmm(means, vec![1.0 / k as f64; k], noise)
    }

    pub fn xor(mu: &DVector<f64>, nu: &DVector<f64>, noise: Noise) -> Result<Self> {
        if mu.len() != nu.len() {
            return Err(Error::DimensionMismatch { expected: mu.len(), got: nu.len() });
        }
        let d = mu.len();
        let mut means = DMatrix::zeros(2, d);
        means.set_row(0, &mu.transpose());
        means.set_row(1, &nu.transpose());
        let spec = MixtureSpec { kind: MixtureKind::Xor, d, means, probs: vec![0.25; 4], noise };
        spec.validate()?;
        Ok(spec)
    }

    /// XOR task with μ = e_0 and ν = e_spacing.
    pub fn xor_axes(d: usize, spacing: usize, noise: Noise) -> Result<Self> {
        let m = orthonormal_means(2, d, spacing)?;
        Self::xor(&m.row(0).transpose(), &m.row(1).transpose(), noise)
    }

    /// Number of classes (KGmm) or hidden components (XOR, always 4).
    pub fn k(&self) -> usize {
        match self.kind {
            MixtureKind::KGmm => self.means.nrows(),
            MixtureKind::Xor => 4,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self.noise {
            Noise::Precision(l) => l,
            Noise::Zero => f64::INFINITY,
        }
    }

    pub fn inv_lambda(&self) -> f64 {
        match self.noise {
            Noise::Precision(l) => 1.0 / l,
            Noise::Zero => 0.0,
        }
    }

    pub fn mean(&self, a: usize) -> DVector<f64> {
        self.means.row(a).transpose()
    }

    pub fn mu(&self) -> DVector<f64> {
        self.mean(0)
    }

    pub fn nu(&self) -> DVector<f64> {
        self.mean(1)
    }

    /// The four XOR centers (+μ, −μ, +ν, −ν) with their labels.
    pub fn xor_centers(&self) -> [(DVector<f64>, f64); 4] {
        let mu = self.mu();
        let nu = self.nu();
        [(mu.clone(), 1.0), (-mu, 1.0), (nu.clone(), 0.0), (-nu, 0.0)]
    }

    pub fn mean_gram(&self) -> DMatrix<f64> {
        &self.means * self.means.transpose()
    }

    pub fn validate(&self) -> Result<()> {
        validate_spec(self)
    }

    pub fn sample_one(&self, seed: u64, index: u64) -> LabeledSample {
        let mut r = rng::stream(seed, index);
        let u: f64 = r.gen();
        let (component, label) = match self.kind {
            MixtureKind::KGmm => {
                let mut acc = 0.0;
                let mut c = self.probs.len() - 1;
                for (i, p) in self.probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        c = i;
                        break;
                    }
                }
                (c, Label::Class(c))
            }
            MixtureKind::Xor => {
                let c = ((u * 4.0) as usize).min(3);
                (c, Label::Binary(if c < 2 { 1 } else { 0 }))
            }
        };
        let mut features = match self.kind {
            MixtureKind::KGmm => self.mean(component),
            MixtureKind::Xor => {
                let sign = if component % 2 == 0 { 1.0 } else { -1.0 };
                self.mean(component / 2) * sign
            }
        };
        if let Noise::Precision(l) = self.noise {
            let s = 1.0 / l.sqrt();
            for f in features.iter_mut() {
                let z: f64 = r.sample(StandardNormal);
                *f += s * z;
            }
        }
        LabeledSample { label, features, component }
    }

    pub fn sample_range(&self, seed: u64, start: u64, n: usize) -> Vec<LabeledSample> {
        (0..n as u64).into_par_iter().map(|i| self.sample_one(seed, start + i)).collect()
    }

    pub fn sample(&self, seed: u64, n: usize) -> Vec<LabeledSample> {
        self.sample_range(seed, 0, n)
    }
}

pub fn validate_spec(spec: &MixtureSpec) -> Result<()> {
    if spec.means.ncols() != spec.d {
        return Err(Error::DimensionMismatch { expected: spec.d, got: spec.means.ncols() });
    }
    if let Noise::Precision(l) = spec.noise {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Config(format!("noise precision must be positive and finite, got {l}")));
        }
    }
    for (i, row) in spec.means.row_iter().enumerate() {
        let norm = row.norm();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NonUnitMean { index: i, norm });
        }
    }
    match spec.kind {
        MixtureKind::KGmm => {
            let k = spec.means.nrows();
            if spec.probs.len() != k {
                return Err(Error::BadProbs(format!("{} weights for {k} classes", spec.probs.len())));
            }
            if spec.probs.iter().any(|&p| !(p > 0.0)) {
                return Err(Error::BadProbs("weights must be positive".into()));
            }
            let s: f64 = spec.probs.iter().sum();
            if (s - 1.0).abs() > 1e-12 {
                return Err(Error::BadProbs(format!("weights sum to {s}")));
            }
            let min_eig = SymmetricEigen::new(spec.mean_gram()).eigenvalues.min();
            if min_eig <= GRAM_TOL {
                return Err(Error::DegenerateGram { min_eig });
            }
        }
        MixtureKind::Xor => {
            if spec.means.nrows() != 2 {
                return Err(Error::DimensionMismatch { expected: 2, got: spec.means.nrows() });
            }
            let dot = spec.means.row(0).dot(&spec.means.row(1));
            if dot.abs() >= 1e-12 {
                return Err(Error::NonOrthogonalXorMeans { dot });
            }
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeansMode {
    Orthonormal,
    Random,
}

/// Flat key-value description of a mixture:
///
/// ```text
/// kind = kgmm        # or xor
/// d = 200
/// k = 5
/// lambda = 10        # or inf
/// seed = 1
/// means_mode = orthonormal
/// spacing = 1
/// probs = uniform    # or 0.2,0.3,0.5
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub kind: MixtureKind,
    pub d: usize,
    pub k: usize,
    pub lambda: Option<f64>,
    pub seed: u64,
    pub means_mode: MeansMode,
    pub spacing: usize,
    pub probs: Option<Vec<f64>>,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig {
            kind: MixtureKind::KGmm,
            d: 200,
            k: 5,
            lambda: Some(10.0),
            seed: 0,
            means_mode: MeansMode::Orthonormal,
            spacing: 1,
            probs: None,
        }
    }
}

impl MixtureConfig {
    pub fn parse_kv(text: &str) -> Result<Self> {
        let map = parse_kv_map(text)?;
        let mut cfg = MixtureConfig::default();
        for (key, value) in &map {
            let bad = |what: &str| Error::Config(format!("{key}: expected {what}, got `{value}`"));
            match key.as_str() {
                "kind" => {
                    cfg.kind = match value.to_ascii_lowercase().as_str() {
                        "kgmm" => MixtureKind::KGmm,
                        "xor" => MixtureKind::Xor,
                        _ => return Err(bad("kgmm or xor")),
                    }
                }
                "d" => cfg.d = value.parse().map_err(|_| bad("integer"))?,
                "k" => cfg.k = value.parse().map_err(|_| bad("integer"))?,
                "lambda" => {
                    cfg.lambda = if value.eq_ignore_ascii_case("inf") {
                        None
                    } else {
                        Some(value.parse().map_err(|_| bad("number or inf"))?)
                    }
                }
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "means_mode" => {
                    cfg.means_mode = match value.as_str() {
                        "orthonormal" => MeansMode::Orthonormal,
                        "random" => MeansMode::Random,
                        _ => return Err(bad("orthonormal or random")),
                    }
                }
                "spacing" => cfg.spacing = value.parse().map_err(|_| bad("integer"))?,
                "probs" => {
                    cfg.probs = if value == "uniform" {
                        None
                    } else {
                        let v: std::result::Result<Vec<f64>, _> =
                            value.split(',').map(|s| s.trim().parse::<f64>()).collect();
                        Some(v.map_err(|_| bad("comma separated numbers"))?)
                    }
                }
                _ => return Err(Error::Config(format!("unknown key `{key}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        let kind = match self.kind {
            MixtureKind::KGmm => "kgmm",
            MixtureKind::Xor => "xor",
        };
        let lambda = self.lambda.map_or("inf".to_string(), |l| format!("{l}"));
        let mode = match self.means_mode {
            MeansMode::Orthonormal => "orthonormal",
            MeansMode::Random => "random",
        };
        let probs = self.probs.as_ref().map_or("uniform".to_string(), |p| {
            p.iter().map(|x| format!("{x}")).collect::<Vec<_>>().join(",")
        });
        format!(
            "kind = {kind}\nd = {}\nk = {}\nlambda = {lambda}\nseed = {}\nmeans_mode = {mode}\nspacing = {}\nprobs = {probs}\n",
            self.d, self.k, self.seed, self.spacing
        )
    }

    pub fn build(&self) -> Result<MixtureSpec> {
        let noise = self.lambda.map_or(Noise::Zero, Noise::Precision);
        let rows = match self.kind {
            MixtureKind::KGmm => self.k,
            MixtureKind::Xor => 2,
        };
        let means = match self.means_mode {
            MeansMode::Orthonormal => orthonormal_means(rows, self.d, self.spacing)?,
            MeansMode::Random => random_means(rows, self.d, self.seed, self.kind == MixtureKind::Xor),
        };
        match self.kind {
            MixtureKind::KGmm => {
                let probs = self.probs.clone().unwrap_or_else(|| vec![1.0 / rows as f64; rows]);
                MixtureSpec::kgmm(means, probs, noise)
            }
            MixtureKind::Xor => MixtureSpec::xor(&means.row(0).transpose(), &means.row(1).transpose(), noise),
        }
    }
}

/// Random unit means; orthogonalized when `orthogonal` is set.
fn random_means(k: usize, d: usize, seed: u64, orthogonal: bool) -> DMatrix<f64> {
    let mut r = rng::stream(rng::derive(seed, 0x6d65616e), 0);
    let mut m = DMatrix::zeros(k, d);
    for a in 0..k {
        let mut v = DVector::from_fn(d, |_, _| r.sample::<f64, _>(StandardNormal));
        if orthogonal {
            for b in 0..a {
                let prev = m.row(b).transpose();
                let c = v.dot(&prev);
                v -= prev * c;
            }
        }
        v /= v.norm();
        m.set_row(a, &v.transpose());
    }
    m
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_kv_map(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .or_else(|| line.split_once(':'))
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().trim_matches('"').to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_cases() {
        let m = orthonormal_means(2, 3, 1).unwrap();
        assert!(MixtureSpec::kgmm(m.clone(), vec![0.5, 0.5], Noise::Precision(10.0)).is_ok());
        assert!(matches!(
            MixtureSpec::kgmm(m.clone(), vec![0.6, 0.6], Noise::Precision(10.0)),
            Err(Error::BadProbs(_))
        ));
        let mut same = m.clone();
        same.set_row(1, &m.row(0).clone_owned());
        assert!(matches!(
            MixtureSpec::kgmm(same, vec![0.5, 0.5], Noise::Precision(10.0)),
            Err(Error::DegenerateGram { .. })
        ));
        let mut long = m.clone();
        long[(0, 0)] = 2.0;
        assert!(matches!(
            MixtureSpec::kgmm(long, vec![0.5, 0.5], Noise::Precision(10.0)),
            Err(Error::NonUnitMean { index: 0, .. })
        ));
        let mu = DVector::from_vec(vec![1.0, 0.0]);
        let nu = DVector::from_vec(vec![(0.5f64).sqrt(), (0.5f64).sqrt()]);
        assert!(matches!(MixtureSpec::xor(&mu, &nu, Noise::Zero), Err(Error::NonOrthogonalXorMeans { .. })));
    }

    #[test]
    fn noiseless_samples_sit_on_means() {
        let spec = MixtureSpec::kgmm_uniform(orthonormal_means(3, 6, 2).unwrap(), Noise::Zero).unwrap();
        for s in spec.sample(4, 50) {
            assert_eq!(s.features, spec.mean(s.class()));
        }
    }

    #[test]
    fn kv_roundtrip() {
        let cfg = MixtureConfig {
            kind: MixtureKind::Xor,
            d: 40,
            k: 2,
            lambda: None,
            seed: 9,
            means_mode: MeansMode::Random,
            spacing: 3,
            probs: None,
        };
        let back = MixtureConfig::parse_kv(&cfg.to_kv()).unwrap();
        assert_eq!(cfg, back);
        let spec = back.build().unwrap();
        assert_eq!(spec.kind, MixtureKind::Xor);
        let probs = MixtureConfig { probs: Some(vec![0.25, 0.75]), k: 2, ..Default::default() };
        assert_eq!(MixtureConfig::parse_kv(&probs.to_kv()).unwrap(), probs);
    }
}
