//! Config-driven studies: random systems, estimator benchmarks and
//! compound-risk sweeps, with CSV and JSON output.

mod benchmark;
mod commands;
mod compound_study;
mod config;
mod system;

pub use benchmark::{
    quantile, run_benchmark, run_estimator, run_seeds, summarize, write_benchmark_csv, BenchmarkRow,
    EstimatorOutput, EstimatorSummary, Quartiles, BENCHMARK_COLUMNS,
};
pub use commands::{benchmark_command, compound_command, identify_command, simulate_command};
pub use compound_study::{even_alpha, run_compound_study, write_compound_csv, CompoundRow, COMPOUND_COLUMNS};
pub use config::{
    CompoundConfig, DataConfig, EstimatorConfig, EstimatorKind, ExperimentConfig, IdentifyConfig, InputKind,
    MonteCarloConfig, SystemConfig,
};
pub use system::{
    generate_input, generate_random_system, noise_variance_for_snr, sample_random_system, simulate_data,
    RandomSystem, RationalChannel, SimulatedData, TAIL_ENERGY,
};
