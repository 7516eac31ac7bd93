use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kernel_sysid::experiment::{
    benchmark_command, compound_command, identify_command, simulate_command, ExperimentConfig,
};
use kernel_sysid::Error;

#[derive(Parser)]
#[command(name = "ksid", version, about = "Kernel-based identification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a random system and write truth.json, train.csv and test.csv.
    Simulate(Common),
    /// Fit the configured estimators to a CSV record.
    Identify(Common),
    /// Monte Carlo comparison of estimators on random systems.
    Benchmark(Common),
    /// Monte Carlo risk of shrinkage rules.
    Compound(Common),
}

#[derive(Args)]
struct Common {
    /// JSON config; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn load(&self) -> kernel_sysid::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_path(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.system.seed = seed;
            cfg.monte_carlo.seed = seed;
            cfg.compound.seed = seed;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => c.load().and_then(|cfg| simulate_command(&cfg, &cfg.out_dir)),
        Command::Identify(c) => c.load().and_then(|cfg| identify_command(&cfg, &cfg.out_dir)),
        Command::Benchmark(c) => c.load().and_then(|cfg| benchmark_command(&cfg, &cfg.out_dir, cfg.workers)),
        Command::Compound(c) => c.load().and_then(|cfg| compound_command(&cfg, &cfg.out_dir)),
    };
    match result {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("ksid: {e}");
            match e {
                Error::Numerical(_) | Error::NotPsd { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
