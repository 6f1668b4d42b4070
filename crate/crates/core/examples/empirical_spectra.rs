//! Empirical Hessian and G spectra of a trained one-layer classifier.
//!
//! Trains for T = 20, builds the factorized test matrices from 4d fresh
//! samples, and reports the top eigenvalues, the bulk edge and how much of
//! each outlier eigenvector lies in span(μ_1, …, μ_k).

use spectral_sgd::linalg::{alignment, EigOptions};
use spectral_sgd::mixtures::{orthonormal_means, MixtureSpec, Noise};
use spectral_sgd::sgd::{run_online, SgdConfig};
use spectral_sgd::spectra::{assemble, BlockId, MatrixKind};

fn main() -> spectral_sgd::Result<()> {
    let (k, d) = (3, 400);
    let spec = MixtureSpec::kgmm_uniform(orthonormal_means(k, d, 50)?, Noise::Precision(10.0))?;
    let traj = run_online(&spec, &SgdConfig::ballistic(1.0, d, 0.01, 20.0, 0, 1))?;
    let means: Vec<_> = (0..k).map(|a| spec.mean(a)).collect();
    let test = spec.sample(99, 4 * d);

    for kind in [MatrixKind::Hessian, MatrixKind::G] {
        let fq = assemble(&test, &traj.final_params, kind)?;
        println!("{kind:?}");
        for c in 0..k {
            let rep = fq.eigs(BlockId::Class(c, c), k, &EigOptions::default())?;
            let top: Vec<String> = rep.eigenvalues.iter().take(k + 1).map(|v| format!("{v:.4}")).collect();
            let align: Vec<String> = rep
                .eigenvectors
                .iter()
                .take(rep.outlier_count)
                .map(|v| alignment(v, &means).map(|a| format!("{a:.3}")))
                .collect::<spectral_sgd::Result<_>>()?;
            println!(
                "  block x{c}x{c}: top {} | edge {:.4} | {} outliers, alignment [{}]",
                top.join(" "),
                rep.bulk_edge_estimate,
                rep.outlier_count,
                align.join(", ")
            );
        }
    }
    Ok(())
}
