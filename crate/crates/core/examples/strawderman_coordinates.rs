//! Change of coordinates that diagonalizes both the prior and the least
//! squares covariance, shrinkage in those coordinates, and the large-sample
//! limit λ* of the maximum likelihood scale.
//!
//! `cargo run --example strawderman_coordinates`

use kernel_sysid::bayes::{empirical_bayes, EvidenceProblem, KernelTemplate, NoisePolicy, OptimizerConfig, ShapePolicy};
use kernel_sysid::compound::{eb_strawderman, lambda_star, shrinkage_in_coordinates, CoordinateChange};
use kernel_sysid::kernels::{tc_kernel, KernelFamily};
use kernel_sysid::model::{build_fir_regression, simulate_oe, ImpulseResponse, InitialConditions};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> kernel_sysid::Result<()> {
    let t = 20;
    let beta = 0.25;
    let coeffs: Vec<f64> = (1..=t).map(|k| 0.8f64.powi(k as i32) * (0.9 * k as f64).sin()).collect();
    let truth = ImpulseResponse::siso(&coeffs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u = DMatrix::from_fn(400, 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    let sigma2: f64 = 0.01;
    let data = simulate_oe(&truth, &u, sigma2.sqrt(), 4, 1.0)?;
    let problem = build_fir_regression(&data, t, InitialConditions::ZeroPad)?;

    let k = tc_kernel(t, 1.0, beta, 1.0)?;
    let cc = CoordinateChange::from_kernel(&problem.phi, k.matrix(), &problem.y)?;
    println!("‖AKAᵀ − D‖/‖D‖ = {:.1e}", cc.kernel_residual);
    println!("‖A(ΦᵀΦ)⁻¹Aᵀ − I‖ = {:.1e}", cc.design_residual.unwrap_or(f64::NAN));
    println!("largest/smallest d: {:.3e} / {:.3e}", cc.d[0], cc.d[cc.d.len() - 1]);

    let lam_star = lambda_star(truth.as_vec(), k.matrix(), t)?;
    let ebs = eb_strawderman(&cc.z, &cc.d, sigma2)?;
    println!("λ* = {lam_star:.4e}, EB-Strawderman λ = {:.4e}", ebs.lambda);

    // Evidence maximization over the scale with the shape held at β.
    let template = KernelTemplate::Channels {
        family: KernelFamily::Tc,
        dims: problem.dims,
        sample_time: 1.0,
        shared_scale: true,
        shape: ShapePolicy::Fixed(vec![beta]),
    };
    let ep = EvidenceProblem::new(&problem, template, NoisePolicy::Fixed(sigma2))?;
    let est = empirical_bayes(&ep, &OptimizerConfig::default())?;
    let lam_ml = est.hyperparams.scales()[0];
    println!("maximum likelihood λ = {lam_ml:.4e}");

    // Shrinking Z with the ML scale and mapping back is the posterior mean.
    let beta_bar = shrinkage_in_coordinates(&cc.z, &cc.d, lam_ml, sigma2)?;
    let g = cc.to_original(&beta_bar)?;
    let diff = (&g - est.g_hat.as_vec()).norm() / est.g_hat.as_vec().norm();
    println!("coordinates vs posterior mean: relative difference {diff:.1e}");
    Ok(())
}
