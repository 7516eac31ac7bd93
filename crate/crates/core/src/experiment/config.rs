use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bayes::{NoisePolicy, OptimizerConfig};
use crate::compound::ShrinkageRule;
use crate::error::{Error, Result};
use crate::kernels::KernelFamily;

/// Random rational systems, one per (output, input) channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub outputs: usize,
    pub inputs: usize,
    /// Number of poles per channel.
    pub order: usize,
    /// Poles and zeros are drawn uniformly (by area) from this annulus.
    pub pole_radius: (f64, f64),
    /// Hard cap on the truncation length of the true response.
    pub max_lags: usize,
    pub seed: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self { outputs: 1, inputs: 1, order: 3, pole_radius: (0.5, 0.95), max_lags: 20_000, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    /// Unit-variance white Gaussian.
    White,
    /// Unit-variance first-order low-pass filtered Gaussian.
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub samples: usize,
    /// Length of the noise-free validation record used for prediction scores.
    pub test_samples: usize,
    pub input: InputKind,
    /// Pole of the input filter for `filtered` inputs.
    pub input_pole: f64,
    pub snr_db: f64,
    pub sample_time: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            test_samples: 1000,
            input: InputKind::White,
            input_pole: 0.9,
            snr_db: 10.0,
            sample_time: 1.0,
        }
    }
}

fn default_family() -> KernelFamily {
    KernelFamily::Tc
}

fn default_noise() -> NoisePolicy {
    NoisePolicy::ResidualPlugin
}

fn default_n_max() -> usize {
    4
}

/// What an estimator entry runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Least squares with the configured FIR length.
    Ls,
    /// FIR order chosen by AIC among `1..=fir_lags`.
    Aic,
    /// FIR order chosen by BIC among `1..=fir_lags`.
    Bic,
    /// Empirical Bayes with one kernel shared by all channels.
    Eb {
        #[serde(default = "default_family")]
        family: KernelFamily,
        #[serde(default = "default_noise")]
        noise: NoisePolicy,
    },
    /// Empirical Bayes with one scale per channel.
    Ard {
        #[serde(default = "default_family")]
        family: KernelFamily,
        #[serde(default = "default_noise")]
        noise: NoisePolicy,
    },
    StableHankel {
        #[serde(default = "default_n_max")]
        n_max: usize,
        #[serde(default = "default_noise")]
        noise: NoisePolicy,
    },
    NuclearNorm { eta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub name: String,
    #[serde(flatten)]
    pub kind: EstimatorKind,
}

impl EstimatorConfig {
    pub fn new(name: &str, kind: EstimatorKind) -> Self {
        Self { name: name.to_string(), kind }
    }

    /// LS, AIC-selected FIR and empirical Bayes TC.
    pub fn defaults() -> Vec<Self> {
        vec![
            Self::new("ls", EstimatorKind::Ls),
            Self::new("aic_fir", EstimatorKind::Aic),
            Self::new("eb_tc", EstimatorKind::Eb { family: KernelFamily::Tc, noise: default_noise() }),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloConfig {
    pub runs: usize,
    pub seed: u64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { runs: 100, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompoundConfig {
    pub dimensions: Vec<usize>,
    pub sigma2: f64,
    pub alpha_norms: Vec<f64>,
    pub replicates: usize,
    pub rules: Vec<ShrinkageRule>,
    pub seed: u64,
}

impl Default for CompoundConfig {
    fn default() -> Self {
        Self {
            dimensions: vec![10],
            sigma2: 1.0,
            alpha_norms: vec![0.0, 1.0, 5.0, 20.0],
            replicates: 100_000,
            rules: vec![
                ShrinkageRule::LeastSquares,
                ShrinkageRule::JamesStein,
                ShrinkageRule::PositivePartJs,
                ShrinkageRule::EbShrinkage,
            ],
            seed: 1,
        }
    }
}

/// Inputs of the `identify` command.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifyConfig {
    /// CSV with columns `u1..um, y1..yp`.
    pub data: Option<PathBuf>,
    /// Optional true response (JSON) to score against.
    pub truth: Option<PathBuf>,
    /// Fraction of samples used for estimation; the rest scores prediction.
    pub train_fraction: Option<f64>,
}

/// Everything the command-line runner reads from its JSON config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    pub data: DataConfig,
    pub estimators: Vec<EstimatorConfig>,
    pub fir_lags: usize,
    pub optimizer: OptimizerConfig,
    pub monte_carlo: MonteCarloConfig,
    pub compound: CompoundConfig,
    pub identify: IdentifyConfig,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            data: DataConfig::default(),
            estimators: EstimatorConfig::defaults(),
            fir_lags: 50,
            optimizer: OptimizerConfig::default(),
            monte_carlo: MonteCarloConfig::default(),
            compound: CompoundConfig::default(),
            identify: IdentifyConfig::default(),
            out_dir: PathBuf::from("results"),
            workers: 1,
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        let (lo, hi) = s.pole_radius;
        if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
            return Err(bad(format!("pole radii must satisfy 0 < lo <= hi < 1, got ({lo}, {hi})")));
        }
        if s.order == 0 || s.outputs == 0 || s.inputs == 0 {
            return Err(bad("system order and channel counts must be positive"));
        }
        let d = &self.data;
        if !d.snr_db.is_finite() {
            return Err(bad("SNR must be finite"));
        }
        if d.samples == 0 || d.test_samples == 0 {
            return Err(bad("sample counts must be positive"));
        }
        if !(d.input_pole.abs() < 1.0) {
            return Err(bad("input filter pole must lie in (-1, 1)"));
        }
        if !(d.sample_time > 0.0 && d.sample_time.is_finite()) {
            return Err(bad("sample time must be positive"));
        }
        if self.fir_lags == 0 {
            return Err(bad("fir_lags must be positive"));
        }
        if self.monte_carlo.runs == 0 {
            return Err(bad("monte_carlo.runs must be at least 1"));
        }
        if self.estimators.is_empty() {
            return Err(bad("at least one estimator is required"));
        }
        let c = &self.compound;
        if !(c.sigma2 > 0.0 && c.sigma2.is_finite()) {
            return Err(bad("compound.sigma2 must be positive"));
        }
        if c.replicates < 100 {
            return Err(bad("compound.replicates must be at least 100"));
        }
        if c.alpha_norms.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(bad("alpha norms must be finite and nonnegative"));
        }
        if let Some(f) = self.identify.train_fraction {
            if !(f > 0.0 && f < 1.0) {
                return Err(bad("train_fraction must lie in (0, 1)"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&json).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn partial_json_and_tagged_estimators() {
        let cfg = ExperimentConfig::from_json(
            r#"{"fir_lags": 30, "data": {"snr_db": 20},
                "estimators": [{"name": "eb", "kind": "eb", "family": "diag_exp"},
                               {"name": "nn", "kind": "nuclear_norm", "eta": 2.5},
                               {"name": "sh", "kind": "stable_hankel"}]}"#,
        )
        .unwrap();
        assert_eq!(cfg.fir_lags, 30);
        assert_eq!(cfg.data.snr_db, 20.0);
        assert_eq!(cfg.data.samples, 200);
        assert_eq!(
            cfg.estimators[0].kind,
            EstimatorKind::Eb { family: KernelFamily::DiagExp, noise: NoisePolicy::ResidualPlugin }
        );
        assert_eq!(cfg.estimators[1].kind, EstimatorKind::NuclearNorm { eta: 2.5 });
        assert_eq!(cfg.estimators[2].kind, EstimatorKind::StableHankel { n_max: 4, noise: NoisePolicy::ResidualPlugin });
    }

    #[test]
    fn invalid_configs_are_config_errors() {
        for text in [
            r#"{"unknown": 1}"#,
            r#"{"fir_lags": 0}"#,
            r#"{"system": {"pole_radius": [0.5, 1.0]}}"#,
            r#"{"monte_carlo": {"runs": 0}}"#,
            r#"{"estimators": []}"#,
            r#"{"compound": {"sigma2": -1}}"#,
            r#"{"identify": {"train_fraction": 1.0}}"#,
            r#"{"data": {"input_pole": 1.5}}"#,
            "not json",
        ] {
            assert!(matches!(ExperimentConfig::from_json(text), Err(Error::Config(_))), "{text}");
        }
        assert!(matches!(ExperimentConfig::from_path(Path::new("/nonexistent/cfg.json")), Err(Error::Config(_))));
    }
}
