//! Online SGD on Gaussian-mixture classification, the spectra of its
//! empirical Hessian and G-matrices, population-level oracles for those
//! matrices, and the effective ODEs followed by the summary statistics.
//!
//! Module map:
//!
//! * [`mixtures`]: the k-class mixture and the XOR mixture, seeded sampling.
//! * [`nets`]: losses, gradients, per-sample second-derivative weights.
//! * [`sgd`]: the trainer and summary-statistic extraction.
//! * [`spectra`] and [`linalg`]: factorized empirical blocks, eigensolvers,
//!   alignment metrics.
//! * [`population`]: Monte-Carlo population blocks and concentration probes.
//! * [`dynamics`]: drifts, Gaussian integrals, RK4, fixed points.
//! * [`experiments`]: figure pipelines, CSV/SVG output, manifests.

pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod mixtures;
pub mod nets;
pub mod population;
pub mod rng;
pub mod sgd;
pub mod spectra;

pub use error::{Error, Result};

/// Formats a float with 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}
