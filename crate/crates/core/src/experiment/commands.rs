use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::benchmark::{run_benchmark, run_estimator, summarize, write_benchmark_csv, EstimatorSummary};
use super::compound_study::{run_compound_study, write_compound_csv};
use super::config::{ExperimentConfig, SystemConfig};
use super::system::{generate_random_system, simulate_data};
use crate::error::{Error, Result};
use crate::model::{fit_metrics, FitReport, IODataset, ImpulseResponse};
use crate::seed::derive_seed;

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    Ok(dir.join(name))
}

/// Draws one random system, simulates it and writes `truth.json`,
/// `train.csv` and `test.csv`.
pub fn simulate_command(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let seed = cfg.system.seed;
    let system = SystemConfig { seed: derive_seed(seed, 0), ..cfg.system.clone() };
    let truth = generate_random_system(&system)?;
    let sim = simulate_data(&truth, &cfg.data, [1, 2, 3].map(|k| derive_seed(seed, k)))?;
    let mut written = vec![write_json(out_dir, "truth.json", &truth.to_json())?];
    sim.train.write_csv(create(out_dir, "train.csv")?)?;
    sim.test.write_csv(create(out_dir, "test.csv")?)?;
    written.push(out_dir.join("train.csv"));
    written.push(out_dir.join("test.csv"));
    Ok(written)
}

#[derive(Debug, Serialize)]
struct IdentifyEntry {
    estimator: String,
    status: String,
    report: Option<FitReport>,
    log_evidence: Option<f64>,
    dof: Option<f64>,
}

/// Runs every configured estimator on the CSV record named in
/// `identify.data`, writing one `<name>.json` response per estimator and a
/// `report.json` with fit metrics. Fails when every estimator fails.
pub fn identify_command(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    let path = cfg.identify.data.as_ref().ok_or_else(|| Error::Config("identify.data is not set".into()))?;
    let file = File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let data = IODataset::read_csv(file, cfg.data.sample_time)?;
    let truth = match &cfg.identify.truth {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            Some(ImpulseResponse::from_json(&serde_json::from_str(&text)?)?)
        }
        None => None,
    };
    let fraction = cfg.identify.train_fraction.unwrap_or(0.7);
    let split = (data.len() as f64 * fraction).round() as usize;
    let (train, test) = data.split_at(split)?;

    let mut written = Vec::new();
    let mut entries = Vec::new();
    for est in &cfg.estimators {
        let result = run_estimator(est, &train, cfg.fir_lags, &cfg.optimizer)
            .and_then(|out| fit_metrics(truth.as_ref(), &out.response, &test).map(|r| (out, r)));
        match result {
            Ok((out, report)) => {
                written.push(write_json(out_dir, &format!("{}.json", est.name), &out.response.to_json())?);
                entries.push(IdentifyEntry {
                    estimator: est.name.clone(),
                    status: "ok".into(),
                    report: Some(report),
                    log_evidence: out.log_evidence,
                    dof: out.dof,
                });
            }
            Err(e) => entries.push(IdentifyEntry {
                estimator: est.name.clone(),
                status: format!("error: {e}"),
                report: None,
                log_evidence: None,
                dof: None,
            }),
        }
    }
    written.push(write_json(out_dir, "report.json", &entries)?);
    if entries.iter().all(|e| e.report.is_none()) {
        return Err(Error::Numerical("every estimator failed".into()));
    }
    Ok(written)
}

#[derive(Debug, Serialize)]
struct BenchmarkSummary {
    runs: usize,
    seed: u64,
    estimators: Vec<EstimatorSummary>,
}

/// Writes `benchmark.csv` and `summary.json`. Fails when no row succeeded.
pub fn benchmark_command(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<Vec<PathBuf>> {
    let rows = run_benchmark(cfg, workers)?;
    write_benchmark_csv(&rows, create(out_dir, "benchmark.csv")?)?;
    let summary =
        BenchmarkSummary { runs: cfg.monte_carlo.runs, seed: cfg.monte_carlo.seed, estimators: summarize(&rows) };
    let written = vec![out_dir.join("benchmark.csv"), write_json(out_dir, "summary.json", &summary)?];
    if rows.iter().all(|r| !r.is_ok()) {
        return Err(Error::Numerical("every benchmark run failed".into()));
    }
    Ok(written)
}

/// Writes `compound.csv`.
pub fn compound_command(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let rows = run_compound_study(&cfg.compound)?;
    write_compound_csv(&rows, create(out_dir, "compound.csv")?)?;
    Ok(vec![out_dir.join("compound.csv")])
}
