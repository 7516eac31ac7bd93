//! Block Hankel operator, its adjoint, and nuclear-norm regularized
//! estimation on a first-order system.
//!
//! `cargo run --release --example hankel_nuclear_norm`

use kernel_sysid::experiment::{generate_random_system, simulate_data, DataConfig, SystemConfig};
use kernel_sysid::linalg::sorted_svd;
use kernel_sysid::model::{build_fir_regression, least_squares, InitialConditions};
use kernel_sysid::structure::{nuclear_norm_identify, HankelMap, NuclearNormConfig};
use nalgebra::{DMatrix, DVector};

fn main() -> kernel_sysid::Result<()> {
    let sys = SystemConfig { order: 1, pole_radius: (0.8, 0.8), seed: 2, ..Default::default() };
    let truth = generate_random_system(&sys)?;
    let sim = simulate_data(&truth, &DataConfig { samples: 200, snr_db: 20.0, ..Default::default() }, [1, 2, 3])?;
    let problem = build_fir_regression(&sim.train, 30, InitialConditions::ZeroPad)?;
    let map = HankelMap::square(problem.dims)?;

    // ⟨H(g), X⟩ = ⟨g, H*(X)⟩
    let g = DVector::from_fn(problem.d(), |i, _| (i as f64 * 0.37).sin());
    let x = DMatrix::from_fn(map.shape().0, map.shape().1, |i, j| ((i * 7 + j) as f64).cos());
    let lhs = map.apply(&g)?.dot(&x);
    let rhs = g.dot(&map.adjoint(&x)?);
    println!("Hankel {:?}: adjoint mismatch {:.1e}", map.shape(), (lhs - rhs).abs());

    let ls = least_squares(&problem);
    let sigma = sim.noise_variance.sqrt();
    let eta = 2.0 * sigma * (problem.n_rows() as f64).sqrt();
    let fit = nuclear_norm_identify(&problem, eta, &map, &NuclearNormConfig::default())?;
    println!(
        "η = {eta:.3}: {} iterations, converged {}, objective {:.4} → {:.4}",
        fit.iterations,
        fit.converged,
        fit.history[0],
        fit.objective
    );
    let top = |v: &DVector<f64>| -> kernel_sysid::Result<Vec<String>> {
        let s = sorted_svd(&map.apply(v)?).s;
        Ok(s.iter().take(5).map(|x| format!("{x:.2e}")).collect())
    };
    println!("LS singular values:           {:?}", top(ls.response.as_vec())?);
    println!("nuclear-norm singular values: {:?}", top(fit.response.as_vec())?);
    Ok(())
}
