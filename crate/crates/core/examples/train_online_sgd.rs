//! Online SGD on a 3-class mixture in d = 300, printing the overlaps
//! `m = X Mᵀ` and the perpendicular Gram `R⊥` once per time unit.

use spectral_sgd::mixtures::{orthonormal_means, MixtureSpec, Noise};
use spectral_sgd::sgd::{run_online, SgdConfig};

fn main() -> spectral_sgd::Result<()> {
    let d = 300;
    let spec = MixtureSpec::kgmm_uniform(orthonormal_means(3, d, 50)?, Noise::Precision(10.0))?;
    // δ = 1/d, β = 0.01, T = 10, one record per d steps.
    let cfg = SgdConfig::ballistic(1.0, d, 0.01, 10.0, 0, 42);
    let traj = run_online(&spec, &cfg)?;

    println!("{:>5} {:>9} {:>8} {:>8} {:>8} {:>8}", "t", "loss", "m00", "m01", "m11", "R⊥00");
    for rec in &traj.records {
        let s = rec.summary.as_kgmm()?;
        println!(
            "{:5.1} {:9.5} {:8.4} {:8.4} {:8.4} {:8.4}",
            rec.t,
            rec.loss,
            s.m[(0, 0)],
            s.m[(0, 1)],
            s.m[(1, 1)],
            s.rperp[(0, 0)]
        );
    }
    let out = std::env::temp_dir().join("spectral_sgd_trajectory.csv");
    traj.write_csv(std::fs::File::create(&out)?)?;
    println!("trajectory written to {}", out.display());
    Ok(())
}
