//! Population Hessian and G blocks at a point, compared with an empirical
//! average over many samples.

use nalgebra::DMatrix;
use spectral_sgd::mixtures::{orthonormal_means, MixtureSpec, Noise};
use spectral_sgd::nets::{OneLayer, ParamState, TwoLayer};
use spectral_sgd::population::{kgmm_pop_blocks, xor_pop_vv};
use spectral_sgd::spectra::{assemble, BlockId, MatrixKind};

fn main() -> spectral_sgd::Result<()> {
    let (k, d) = (3, 20);
    let spec = MixtureSpec::kgmm_uniform(orthonormal_means(k, d, 5)?, Noise::Precision(4.0))?;
    let x = OneLayer::new(DMatrix::from_fn(k, d, |a, j| if j == 5 * a { 1.5 } else { 0.05 * ((a + j) % 3) as f64 }));
    let point = ParamState::OneLayer(x.clone());
    let samples = spec.sample(5, 200_000);

    for kind in [MatrixKind::Hessian, MatrixKind::G] {
        let pop = kgmm_pop_blocks(&x, &spec, kind, &[(0, 0), (0, 1)], 50_000, 11)?;
        let emp = assemble(&samples, &point, kind)?;
        for (est, (b, c)) in pop.iter().zip([(0, 0), (0, 1)]) {
            let gap = (est.dense() - emp.dense_block(BlockId::Class(b, c))?).norm();
            println!(
                "{kind:?} x{b}x{c}: ‖pop‖_F {:.4}, ‖pop - empirical‖_F {gap:.4} (MC se {:.1e}), low-rank part has {} terms",
                est.dense().norm(),
                est.mc_error_bar,
                est.low_rank_part().len()
            );
        }
    }

    let xor = MixtureSpec::xor_axes(d, 10, Noise::Precision(8.0))?;
    let p = TwoLayer::new(DMatrix::from_fn(4, d, |i, j| if j == 10 * (i % 2) { 1.0 - 2.0 * (i / 2) as f64 } else { 0.02 }), nalgebra::dvector![1.0, 1.0, -1.0, -1.0])?;
    let vv = xor_pop_vv(&p, &xor, MatrixKind::G)?;
    println!("XOR G_vv population block (error budget {:.1e}):", vv.mc_error_bar);
    for row in vv.dense().row_iter() {
        println!("  {:.4?}", row.iter().collect::<Vec<_>>());
    }
    Ok(())
}
