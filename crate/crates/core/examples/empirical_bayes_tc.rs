//! Empirical Bayes with the TC kernel against plain least squares.
//!
//! `cargo run --example empirical_bayes_tc`

use kernel_sysid::bayes::{empirical_bayes, EvidenceProblem, KernelTemplate, NoisePolicy, OptimizerConfig};
use kernel_sysid::experiment::{generate_random_system, simulate_data, DataConfig, SystemConfig};
use kernel_sysid::model::{build_fir_regression, fit_metrics, least_squares, InitialConditions};

fn main() -> kernel_sysid::Result<()> {
    let truth = generate_random_system(&SystemConfig { seed: 5, ..Default::default() })?;
    let sim = simulate_data(&truth, &DataConfig { samples: 200, snr_db: 10.0, ..Default::default() }, [7, 8, 9])?;
    let problem = build_fir_regression(&sim.train, 50, InitialConditions::ZeroPad)?;

    let ls = least_squares(&problem);
    let ls_report = fit_metrics(Some(&truth), &ls.response, &sim.test)?;
    println!("LS        impulse fit {:6.2}%", ls_report.impulse_fit.unwrap_or(f64::NAN));

    for noise in [NoisePolicy::ResidualPlugin, NoisePolicy::Profile] {
        let template = KernelTemplate::tc(problem.dims, 1.0);
        let ep = EvidenceProblem::new(&problem, template, noise.clone())?;
        let est = empirical_bayes(&ep, &OptimizerConfig::default())?;
        let report = fit_metrics(Some(&truth), &est.g_hat, &sim.test)?;
        let hp = &est.hyperparams;
        println!(
            "EB-TC {:<15} impulse fit {:6.2}%  λ = {:.3e}  β = {:.3}  σ² = {:.3e} (true {:.3e})  dof = {:.1}  log evidence {:.2}",
            format!("{noise:?}"),
            report.impulse_fit.unwrap_or(f64::NAN),
            hp.scales()[0],
            hp.shapes()[0],
            hp.sigma2,
            sim.noise_variance,
            est.dof,
            est.log_evidence
        );
    }
    Ok(())
}
