use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{EstimatorConfig, EstimatorKind, ExperimentConfig};
use super::system::{generate_random_system, simulate_data, SimulatedData};
use crate::bayes::{empirical_bayes, EvidenceProblem, KernelTemplate, OptimizerConfig, ShapePolicy};
use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, sorted_svd};
use crate::model::{
    build_fir_regression, fit_metrics, least_squares, order_selection_baseline, FitReport, IODataset,
    ImpulseResponse, InitialConditions, OrderCriterion,
};
use crate::seed::derive_seed;
use crate::structure::{
    ard_mimo_identify, nuclear_norm_identify, stable_hankel_identify, ArdConfig, HankelMap, NuclearNormConfig,
    StableHankelConfig,
};

/// Column names of the benchmark CSV, in order.
pub const BENCHMARK_COLUMNS: [&str; 11] = [
    "run_id",
    "seed",
    "estimator",
    "status",
    "order",
    "impulse_mse",
    "impulse_fit",
    "prediction_mse",
    "fit_percent",
    "log_evidence",
    "dof",
];

/// Fitted response plus the bookkeeping reported in the CSV.
#[derive(Debug, Clone)]
pub struct EstimatorOutput {
    pub response: ImpulseResponse,
    /// FIR length, selected FIR order, or selected McMillan degree.
    pub order: usize,
    pub log_evidence: Option<f64>,
    pub dof: Option<f64>,
}

/// Run one configured estimator on an estimation record.
pub fn run_estimator(
    est: &EstimatorConfig,
    data: &IODataset,
    lags: usize,
    optimizer: &OptimizerConfig,
) -> Result<EstimatorOutput> {
    let handling = InitialConditions::ZeroPad;
    match &est.kind {
        EstimatorKind::Ls => {
            let problem = build_fir_regression(data, lags, handling)?;
            let fit = least_squares(&problem);
            Ok(EstimatorOutput { response: fit.response, order: lags, log_evidence: None, dof: Some(fit.rank as f64) })
        }
        EstimatorKind::Aic | EstimatorKind::Bic => {
            let criterion = if est.kind == EstimatorKind::Aic { OrderCriterion::Aic } else { OrderCriterion::Bic };
            let sel = order_selection_baseline(data, lags, criterion, handling)?;
            let channels = data.n_inputs() * data.n_outputs();
            Ok(EstimatorOutput {
                response: sel.response,
                order: sel.order,
                log_evidence: None,
                dof: Some((sel.order * channels) as f64),
            })
        }
        EstimatorKind::Eb { family, noise } => {
            let problem = build_fir_regression(data, lags, handling)?;
            let template = KernelTemplate::Channels {
                family: *family,
                dims: problem.dims,
                sample_time: data.sample_time(),
                shared_scale: true,
                shape: ShapePolicy::Shared,
            };
            let ep = EvidenceProblem::new(&problem, template, noise.clone())?;
            let e = empirical_bayes(&ep, optimizer)?;
            Ok(EstimatorOutput { response: e.g_hat, order: lags, log_evidence: Some(e.log_evidence), dof: Some(e.dof) })
        }
        EstimatorKind::Ard { family, noise } => {
            let cfg = ArdConfig {
                base_family: *family,
                noise: noise.clone(),
                optimizer: optimizer.clone(),
                ..Default::default()
            };
            let fit = ard_mimo_identify(data, lags, &cfg)?;
            let e = fit.estimate;
            Ok(EstimatorOutput { response: e.g_hat, order: lags, log_evidence: Some(e.log_evidence), dof: Some(e.dof) })
        }
        EstimatorKind::StableHankel { n_max, noise } => {
            let problem = build_fir_regression(data, lags, handling)?;
            let cfg = StableHankelConfig {
                n_max: *n_max,
                noise: noise.clone(),
                optimizer: optimizer.clone(),
                ..Default::default()
            };
            let fit = stable_hankel_identify(&problem, &cfg)?;
            let e = fit.estimate;
            Ok(EstimatorOutput { response: e.g_hat, order: fit.order, log_evidence: Some(e.log_evidence), dof: Some(e.dof) })
        }
        EstimatorKind::NuclearNorm { eta } => {
            let problem = build_fir_regression(data, lags, handling)?;
            let map = HankelMap::square(problem.dims)?;
            let fit = nuclear_norm_identify(&problem, *eta, &map, &NuclearNormConfig::default())?;
            let h = map.apply(fit.response.as_vec())?;
            let rank = numerical_rank(&sorted_svd(&h).s, 1e-6);
            Ok(EstimatorOutput { response: fit.response, order: rank, log_evidence: None, dof: None })
        }
    }
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub run_id: usize,
    pub seed: u64,
    pub estimator: String,
    /// `ok`, or `error: …` when the estimator failed on this run.
    pub status: String,
    pub order: Option<usize>,
    pub impulse_mse: Option<f64>,
    pub impulse_fit: Option<f64>,
    pub prediction_mse: Option<f64>,
    pub fit_percent: Option<f64>,
    pub log_evidence: Option<f64>,
    pub dof: Option<f64>,
}

impl BenchmarkRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// Seeds of run `index`: system, input, noise and validation input.
pub fn run_seeds(master: u64, index: usize) -> (u64, [u64; 4]) {
    let run = derive_seed(master, index as u64);
    (run, [0, 1, 2, 3].map(|k| derive_seed(run, k)))
}

fn failed_row(run_id: usize, seed: u64, estimator: &str, err: &Error) -> BenchmarkRow {
    BenchmarkRow {
        run_id,
        seed,
        estimator: estimator.to_string(),
        status: format!("error: {err}"),
        order: None,
        impulse_mse: None,
        impulse_fit: None,
        prediction_mse: None,
        fit_percent: None,
        log_evidence: None,
        dof: None,
    }
}

fn run_once(cfg: &ExperimentConfig, run_id: usize) -> Vec<BenchmarkRow> {
    let (seed, [sys_seed, u_seed, e_seed, test_seed]) = run_seeds(cfg.monte_carlo.seed, run_id);
    let system = crate::experiment::SystemConfig { seed: sys_seed, ..cfg.system.clone() };
    let sim: Result<(ImpulseResponse, SimulatedData)> = generate_random_system(&system)
        .and_then(|truth| simulate_data(&truth, &cfg.data, [u_seed, e_seed, test_seed]).map(|d| (truth, d)));
    let (truth, sim) = match sim {
        Ok(v) => v,
        Err(e) => return cfg.estimators.iter().map(|est| failed_row(run_id, seed, &est.name, &e)).collect(),
    };
    cfg.estimators
        .iter()
        .map(|est| {
            let scored = run_estimator(est, &sim.train, cfg.fir_lags, &cfg.optimizer)
                .and_then(|out| fit_metrics(Some(&truth), &out.response, &sim.test).map(|r| (out, r)));
            match scored {
                Ok((out, report)) => ok_row(run_id, seed, &est.name, &out, &report),
                Err(e) => failed_row(run_id, seed, &est.name, &e),
            }
        })
        .collect()
}

fn ok_row(run_id: usize, seed: u64, name: &str, out: &EstimatorOutput, r: &FitReport) -> BenchmarkRow {
    BenchmarkRow {
        run_id,
        seed,
        estimator: name.to_string(),
        status: "ok".into(),
        order: Some(out.order),
        impulse_mse: r.impulse_mse,
        impulse_fit: r.impulse_fit,
        prediction_mse: Some(r.prediction_mse),
        fit_percent: Some(r.fit_percent),
        log_evidence: out.log_evidence,
        dof: out.dof,
    }
}

/// Monte Carlo comparison of the configured estimators on random systems.
/// Runs are spread over `workers` threads; rows come back in run order and
/// do not depend on the thread count.
pub fn run_benchmark(cfg: &ExperimentConfig, workers: usize) -> Result<Vec<BenchmarkRow>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<Vec<BenchmarkRow>> =
        pool.install(|| (0..cfg.monte_carlo.runs).into_par_iter().map(|r| run_once(cfg, r)).collect());
    Ok(rows.into_iter().flatten().collect())
}

fn fmt_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(String::new, T::to_string)
}

/// CSV with the columns of [`BENCHMARK_COLUMNS`]; missing values are empty.
pub fn write_benchmark_csv<W: Write>(rows: &[BenchmarkRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCHMARK_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.run_id.to_string(),
            r.seed.to_string(),
            r.estimator.clone(),
            r.status.clone(),
            fmt_opt(&r.order),
            fmt_opt(&r.impulse_mse),
            fmt_opt(&r.impulse_fit),
            fmt_opt(&r.prediction_mse),
            fmt_opt(&r.fit_percent),
            fmt_opt(&r.log_evidence),
            fmt_opt(&r.dof),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Median and quartiles of a metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Option<Self> {
        let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Self { q1: quantile(&v, 0.25), median: quantile(&v, 0.5), q3: quantile(&v, 0.75) })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub ok: usize,
    pub failed: usize,
    pub impulse_fit: Option<Quartiles>,
    pub fit_percent: Option<Quartiles>,
    pub impulse_mse: Option<Quartiles>,
}

/// Per-estimator medians and quartiles, in configuration order.
pub fn summarize(rows: &[BenchmarkRow]) -> Vec<EstimatorSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.estimator.as_str()) {
            names.push(&r.estimator);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let mine: Vec<&BenchmarkRow> = rows.iter().filter(|r| r.estimator == name).collect();
            let ok: Vec<&&BenchmarkRow> = mine.iter().filter(|r| r.is_ok()).collect();
            let col = |f: fn(&BenchmarkRow) -> Option<f64>| Quartiles::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            EstimatorSummary {
                estimator: name.to_string(),
                ok: ok.len(),
                failed: mine.len() - ok.len(),
                impulse_fit: col(|r| r.impulse_fit),
                fit_percent: col(|r| r.fit_percent),
                impulse_mse: col(|r| r.impulse_mse),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayes::NoisePolicy;
    use crate::experiment::{DataConfig, MonteCarloConfig, SystemConfig};
    use crate::kernels::KernelFamily;
    use approx::assert_relative_eq;

    fn small_config() -> ExperimentConfig {
        ExperimentConfig {
            data: DataConfig { samples: 120, test_samples: 200, ..Default::default() },
            fir_lags: 12,
            monte_carlo: MonteCarloConfig { runs: 3, seed: 5 },
            ..Default::default()
        }
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [4.0, 1.0, 3.0, 2.0, f64::NAN];
        let q = Quartiles::of(&v).unwrap();
        assert_relative_eq!(q.median, 2.5);
        assert_relative_eq!(q.q1, 1.75);
        assert_relative_eq!(q.q3, 3.25);
        assert!(Quartiles::of(&[f64::NAN]).is_none());
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let (run, sub) = run_seeds(1, 0);
        assert_eq!(run_seeds(1, 0), (run, sub));
        assert_ne!(run_seeds(1, 1).0, run);
        let mut all = sub.to_vec();
        all.push(run);
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 5);
    }

    #[test]
    fn every_estimator_kind_runs() {
        let sys = SystemConfig { order: 2, seed: 3, ..Default::default() };
        let truth = generate_random_system(&sys).unwrap();
        let sim = simulate_data(&truth, &DataConfig { samples: 150, snr_db: 20.0, ..Default::default() }, [1, 2, 3]).unwrap();
        let noise = NoisePolicy::ResidualPlugin;
        let kinds = [
            EstimatorKind::Ls,
            EstimatorKind::Aic,
            EstimatorKind::Bic,
            EstimatorKind::Eb { family: KernelFamily::Tc, noise: noise.clone() },
            EstimatorKind::Ard { family: KernelFamily::Tc, noise: noise.clone() },
            EstimatorKind::StableHankel { n_max: 2, noise },
            EstimatorKind::NuclearNorm { eta: 1.0 },
        ];
        for kind in kinds {
            let est = EstimatorConfig::new("x", kind.clone());
            let out = run_estimator(&est, &sim.train, 12, &OptimizerConfig::default()).unwrap();
            assert!(out.order >= 1 && out.order <= 12, "{kind:?}");
            let fit = fit_metrics(Some(&truth), &out.response, &sim.test).unwrap();
            assert!(fit.impulse_fit.unwrap() > 50.0, "{kind:?}: {fit:?}");
        }
    }

    #[test]
    fn benchmark_rows_in_run_order_with_schema() {
        let cfg = small_config();
        let rows = run_benchmark(&cfg, 2).unwrap();
        assert_eq!(rows.len(), 9);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(r.run_id, i / 3);
            assert_eq!(r.estimator, cfg.estimators[i % 3].name);
            assert!(r.is_ok());
        }
        let mut buf = Vec::new();
        write_benchmark_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), BENCHMARK_COLUMNS.join(","));
        // LS rows have no evidence: an empty cell, not a placeholder.
        assert!(text.lines().nth(1).unwrap().contains(",,"));
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 3);
        assert!(summary.iter().all(|s| s.ok == 3 && s.failed == 0 && s.impulse_fit.is_some()));
    }
}
