//! Least squares and AIC/BIC order selection on a simulated FIR record.
//!
//! `cargo run --example fir_least_squares`

use kernel_sysid::experiment::{generate_random_system, simulate_data, DataConfig, SystemConfig};
use kernel_sysid::model::{
    build_fir_regression, fit_metrics, least_squares, order_selection_baseline, InitialConditions, OrderCriterion,
};

fn main() -> kernel_sysid::Result<()> {
    let truth = generate_random_system(&SystemConfig { order: 3, seed: 11, ..Default::default() })?;
    let sim = simulate_data(&truth, &DataConfig { samples: 300, snr_db: 15.0, ..Default::default() }, [1, 2, 3])?;
    println!("true response: {} lags, noise variance {:.3e}", truth.lags(), sim.noise_variance);

    for lags in [10, 30, 60] {
        let problem = build_fir_regression(&sim.train, lags, InitialConditions::ZeroPad)?;
        let fit = least_squares(&problem);
        let report = fit_metrics(Some(&truth), &fit.response, &sim.test)?;
        println!(
            "LS  T = {lags:>3}: impulse fit {:6.2}%  validation fit {:6.2}%",
            report.impulse_fit.unwrap_or(f64::NAN),
            report.fit_percent
        );
    }

    for criterion in [OrderCriterion::Aic, OrderCriterion::Bic] {
        let sel = order_selection_baseline(&sim.train, 60, criterion, InitialConditions::Trim)?;
        let report = fit_metrics(Some(&truth), &sel.response, &sim.test)?;
        println!(
            "{criterion:?} picks T = {:>2}: impulse fit {:6.2}%  validation fit {:6.2}%",
            sel.order,
            report.impulse_fit.unwrap_or(f64::NAN),
            report.fit_percent
        );
    }
    Ok(())
}
