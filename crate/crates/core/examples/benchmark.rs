//! A small Monte Carlo benchmark of LS, AIC-selected FIR and EB-TC, written
//! as CSV to stdout with a summary on stderr.
//!
//! `cargo run --release --example benchmark`

use kernel_sysid::experiment::{run_benchmark, summarize, write_benchmark_csv, ExperimentConfig, MonteCarloConfig};

fn main() -> kernel_sysid::Result<()> {
    let cfg = ExperimentConfig { monte_carlo: MonteCarloConfig { runs: 10, seed: 42 }, ..Default::default() };
    let rows = run_benchmark(&cfg, 2)?;
    write_benchmark_csv(&rows, std::io::stdout())?;
    for s in summarize(&rows) {
        let q = s.impulse_fit.expect("some runs succeeded");
        eprintln!(
            "{:<8} ok {:>2}  impulse fit median {:.2}% (IQR {:.2}–{:.2})",
            s.estimator, s.ok, q.median, q.q1, q.q3
        );
    }
    Ok(())
}
