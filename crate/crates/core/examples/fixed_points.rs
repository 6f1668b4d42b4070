//! Fixed points of the noiseless flows: the k-class overlap matrix and a
//! few XOR orthant partitions.

use spectral_sgd::dynamics::{
    fixed_point_residual, kgmm_fixed_point_orthonormal, xor_drift_infinite, xor_fixed_point, xor_orthant_mass, XorPartition,
};

fn main() -> spectral_sgd::Result<()> {
    let probs = [0.5, 0.3, 0.2];
    let beta = 0.05;
    let u = kgmm_fixed_point_orthonormal(&probs, beta, 3)?;
    println!("k-GMM fixed point, p = {probs:?}, β = {beta}:\n{:.4}", u.m);
    println!("residual {:.1e}", fixed_point_residual(&u.m, &probs, beta));

    let beta = 0.01;
    println!("XOR orthant level S at β = {beta}: {:.4}", xor_orthant_mass(beta)?);
    let partitions = [
        ("one unit per center", XorPartition::from_index_sets(4, &[], &[0], &[1], &[2], &[3])?),
        ("missing -ν", XorPartition::from_index_sets(5, &[4], &[0, 1], &[2], &[3], &[])?),
    ];
    for (name, p) in partitions {
        let u = xor_fixed_point(&p, beta, None)?;
        let r = xor_drift_infinite(&u, beta)?;
        let res = r.v.amax().max(r.m_mu.amax()).max(r.m_nu.amax());
        println!("{name}: v = {:.3?}, drift residual {res:.1e}", u.v.as_slice());
    }
    Ok(())
}
