//! Operator-norm distance between empirical and population matrices as
//! the number of samples per dimension grows.

use spectral_sgd::experiments::{random_points, Experiment, ExperimentConfig};
use spectral_sgd::population::concentration_probe;
use spectral_sgd::spectra::MatrixKind;

fn main() -> spectral_sgd::Result<()> {
    let cfg = ExperimentConfig { d: 100, n_mc: 20_000, ..ExperimentConfig::preset(Experiment::ConcentrationSweep, false) };
    let spec = cfg.kgmm_spec()?;
    let points = random_points(&spec, 0, 2, 4)?;
    for kind in [MatrixKind::Hessian, MatrixKind::G] {
        let rows = concentration_probe(&points, &spec, kind, &cfg.alphas, 5, cfg.n_mc, 9)?;
        for r in rows {
            println!("{kind:?} point {} α = {:>3}: ‖Â - A‖ = {:.4} ± {:.4}", r.point, r.alpha, r.deviation_mean, r.deviation_sd);
        }
    }
    Ok(())
}
