use std::io::Write;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::CompoundConfig;
use crate::compound::{risk_monte_carlo, RiskLoss, ShrinkageRule};
use crate::error::{Error, Result};
use crate::seed::derive_seed;

pub const COMPOUND_COLUMNS: [&str; 5] = ["rule", "B", "alpha_norm", "risk", "stderr"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompoundRow {
    pub rule: String,
    #[serde(rename = "B")]
    pub b: usize,
    pub alpha_norm: f64,
    pub risk: f64,
    pub stderr: f64,
}

/// Mean vector of norm `norm` spread evenly over `b` coordinates.
pub fn even_alpha(b: usize, norm: f64) -> DVector<f64> {
    DVector::from_element(b, norm / (b as f64).sqrt())
}

fn rule_label(rule: &ShrinkageRule) -> String {
    match rule {
        ShrinkageRule::Bayes { lambda } => format!("{}({lambda})", rule.name()),
        _ => rule.name().to_string(),
    }
}

/// Monte Carlo risk of every rule on a grid of dimensions and ‖α‖.
///
/// All rules in one (B, ‖α‖) cell see the same noise draws, so their
/// differences are much less noisy than the individual risks.
pub fn run_compound_study(cfg: &CompoundConfig) -> Result<Vec<CompoundRow>> {
    if cfg.dimensions.is_empty() || cfg.alpha_norms.is_empty() || cfg.rules.is_empty() {
        return Err(Error::Config("compound study needs dimensions, alpha norms and rules".into()));
    }
    let mut rows = Vec::new();
    let mut cell = 0u64;
    for &b in &cfg.dimensions {
        for &norm in &cfg.alpha_norms {
            let alpha = even_alpha(b, norm);
            let seed = derive_seed(cfg.seed, cell);
            cell += 1;
            for rule in &cfg.rules {
                let r = risk_monte_carlo(rule, &alpha, cfg.sigma2, cfg.replicates, seed, &RiskLoss::Compound)?;
                rows.push(CompoundRow { rule: rule_label(rule), b, alpha_norm: norm, risk: r.risk, stderr: r.stderr });
            }
        }
    }
    Ok(rows)
}

pub fn write_compound_csv<W: Write>(rows: &[CompoundRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COMPOUND_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.rule.clone(),
            r.b.to_string(),
            r.alpha_norm.to_string(),
            r.risk.to_string(),
            r.stderr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ls_risk_is_sigma2_and_js_is_below() {
        let cfg = CompoundConfig {
            dimensions: vec![10],
            alpha_norms: vec![0.0, 5.0],
            replicates: 4000,
            rules: vec![ShrinkageRule::LeastSquares, ShrinkageRule::JamesStein],
            ..Default::default()
        };
        let rows = run_compound_study(&cfg).unwrap();
        assert_eq!(rows.len(), 4);
        for pair in rows.chunks(2) {
            assert!((pair[0].risk - 1.0).abs() < 4.0 * pair[0].stderr);
            assert!(pair[1].risk < pair[0].risk);
        }
        let mut buf = Vec::new();
        write_compound_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("rule,B,alpha_norm,risk,stderr\n"));
    }

    #[test]
    fn even_alpha_has_requested_norm() {
        assert!((even_alpha(7, 3.0).norm() - 3.0).abs() < 1e-12);
    }
}
