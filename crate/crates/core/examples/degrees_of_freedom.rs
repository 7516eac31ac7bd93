//! Degrees of freedom of the regularized estimate along a scale grid, and
//! the extra degrees of freedom spent on tuning hyperparameters.
//!
//! `cargo run --release --example degrees_of_freedom`

use kernel_sysid::bayes::{
    degrees_of_freedom, excess_degrees_of_freedom, EvidenceProblem, ExcessDofConfig, KernelTemplate, NoisePolicy,
};
use kernel_sysid::experiment::{generate_random_system, simulate_data, DataConfig, SystemConfig};
use kernel_sysid::kernels::tc_kernel;
use kernel_sysid::model::{build_fir_regression, InitialConditions};

fn main() -> kernel_sysid::Result<()> {
    let truth = generate_random_system(&SystemConfig { seed: 8, ..Default::default() })?;
    let sim = simulate_data(&truth, &DataConfig::default(), [1, 2, 3])?;
    let problem = build_fir_regression(&sim.train, 30, InitialConditions::ZeroPad)?;
    let sigma2 = sim.noise_variance;

    let shape = tc_kernel(problem.d(), 1.0, 0.2, 1.0)?;
    for lam in [0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e3] {
        let k = shape.scaled(lam);
        println!("λ = {lam:>7.0e}: dof = {:.3}", degrees_of_freedom(&problem, &k, sigma2)?);
    }

    let ep = EvidenceProblem::new(&problem, KernelTemplate::tc(problem.dims, 1.0), NoisePolicy::Fixed(sigma2))?;
    let cfg = ExcessDofConfig { replicates: 3, seed: 1, ..Default::default() };
    let excess = excess_degrees_of_freedom(&ep, &cfg)?;
    println!("excess dof from tuning (λ, β): {:.4} over replicates {:?}", excess.value, excess.per_replicate);
    Ok(())
}
