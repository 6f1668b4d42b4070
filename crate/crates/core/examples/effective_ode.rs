//! Integrates the finite-noise summary ODE for a 3-class mixture and lays
//! it next to one SGD run in d = 500.

use spectral_sgd::dynamics::{compare_sgd_ode, integrate, OdeSystem};
use spectral_sgd::mixtures::{orthonormal_means, MixtureSpec, Noise};
use spectral_sgd::sgd::{run_online, SgdConfig};

fn main() -> spectral_sgd::Result<()> {
    let (k, d) = (3, 500);
    let spec = MixtureSpec::kgmm_uniform(orthonormal_means(k, d, 50)?, Noise::Precision(10.0))?;
    let sgd = run_online(&spec, &SgdConfig::ballistic(1.0, d, 0.01, 15.0, 0, 3))?;

    // Start the ODE from the SGD initial summaries.
    let u0 = sgd.records[0].summary.clone();
    let sys = OdeSystem::for_spec(spec, 0.01, 1.0)?.with_mc(4000, 5);
    let ode = integrate(&sys, &u0, 15.0, 0.05, 20)?;

    for (t, u) in ode.times.iter().zip(&ode.states).step_by(3) {
        let m = &u.as_kgmm()?.m;
        println!("t = {t:5.2}: ODE m00 {:.4} m01 {:.4}", m[(0, 0)], m[(0, 1)]);
    }
    let cmp = compare_sgd_ode(&sgd, &ode)?;
    println!("sup over t and coordinates of |SGD - ODE|: {:.4}", cmp.sup_gap);
    Ok(())
}
