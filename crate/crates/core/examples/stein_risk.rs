//! Monte Carlo risk of least squares, James–Stein and empirical Bayes
//! shrinkage for the Gaussian means problem, with the exact James–Stein risk.
//!
//! `cargo run --release --example stein_risk`

use kernel_sysid::compound::{james_stein_exact_risk, np_sign_rule, positive_part_js, CompoundProblem};
use kernel_sysid::experiment::{run_compound_study, CompoundConfig};
use nalgebra::DVector;

fn main() -> kernel_sysid::Result<()> {
    let cfg = CompoundConfig { replicates: 20_000, alpha_norms: vec![0.0, 1.0, 2.0, 5.0, 20.0], ..Default::default() };
    let rows = run_compound_study(&cfg)?;
    println!("{:<16} {:>3} {:>6} {:>8} {:>8} {:>10}", "rule", "B", "|α|", "risk", "stderr", "exact JS");
    for r in &rows {
        let exact = if r.rule == "james_stein" {
            format!("{:.4}", james_stein_exact_risk(r.b, r.alpha_norm, cfg.sigma2)?)
        } else {
            String::new()
        };
        println!("{:<16} {:>3} {:>6.1} {:>8.4} {:>8.4} {:>10}", r.rule, r.b, r.alpha_norm, r.risk, r.stderr, exact);
    }

    // One draw in detail.
    let alpha = DVector::from_vec(vec![1.0, -0.5, 0.2, 2.0, 0.0, -1.5, 0.3, 0.8, -0.1, 1.2]);
    let y = &alpha + DVector::from_vec(vec![0.3, -0.9, 1.1, -0.2, 0.5, 0.4, -1.3, 0.1, 0.7, -0.6]);
    let problem = CompoundProblem::new(y.clone(), 1.0)?.with_truth(alpha)?;
    let ppjs = positive_part_js(&y, 1.0)?;
    println!("loss LS {:.3}, loss JS+ {:.3}", problem.loss(&y)?, problem.loss(&ppjs)?);
    println!("sign decisions {:?}", np_sign_rule(&y).signs);
    Ok(())
}
