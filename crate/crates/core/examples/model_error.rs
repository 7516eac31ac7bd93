//! Two-stage fit: a short nominal FIR by least squares, then a kernel model
//! of the unmodeled dynamics fitted to its residuals.
//!
//! `cargo run --example model_error`

use kernel_sysid::bayes::{model_error_fit, NoisePolicy, OptimizerConfig};
use kernel_sysid::experiment::{generate_random_system, simulate_data, DataConfig, SystemConfig};
use kernel_sysid::model::{fit_metrics, ImpulseResponse};

fn main() -> kernel_sysid::Result<()> {
    let truth = generate_random_system(&SystemConfig { seed: 13, ..Default::default() })?;
    let sim = simulate_data(&truth, &DataConfig { samples: 400, snr_db: 20.0, ..Default::default() }, [1, 2, 3])?;
    let fit = model_error_fit(&sim.train, 3, 40, NoisePolicy::ResidualPlugin, &OptimizerConfig::default())?;
    println!("error model scale {:.3e}, decay ρ = {:.3}", fit.scale, fit.rho);
    let nominal = fit_metrics(Some(&truth), &fit.nominal.response, &sim.test)?;
    let error = fit.error.g_hat.as_vec();
    let combined = ImpulseResponse::from_vec(fit.error.g_hat.dims(), fit.nominal.response.with_lags(40).into_vec() + error)?;
    let combined = fit_metrics(Some(&truth), &combined, &sim.test)?;
    println!("nominal FIR(3) validation fit {:.2}%", nominal.fit_percent);
    println!("nominal + error model validation fit {:.2}%", combined.fit_percent);
    Ok(())
}
