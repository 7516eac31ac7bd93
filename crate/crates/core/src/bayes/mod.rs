//! Gaussian posterior mean, marginal likelihood and empirical Bayes tuning.
//!
//! Everything is computed from the Gram statistics `ΦᵀΦ`, `ΦᵀY`, `YᵀY` in
//! parameter space unless there are fewer rows than coefficients, in which
//! case the `pN × pN` data-space system is factorized instead.

mod eb;
mod evidence;
mod optim;
mod template;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use eb::{
    empirical_bayes, empirical_bayes_from, estimate_noise_variance, excess_degrees_of_freedom, EvidenceProblem,
    ExcessDof, ExcessDofConfig, ModelErrorFit, NoisePolicy, model_error_fit,
};
pub use evidence::GramStats;
pub use optim::{nelder_mead, newton_polish, start_design, OptimizerConfig, SimplexResult};
pub use template::{KernelTemplate, ParamKind, ShapePolicy};

use crate::error::{dim_err, param_err, Error, Result};
use crate::kernels::KernelMatrix;
use crate::linalg::{psd_factor, symmetrize};
use crate::model::{FirRegression, ImpulseResponse};
use evidence::{cov_eval, Factor};

/// Value reported for the log evidence when the covariance cannot be factorized.
pub const EVIDENCE_FAILURE: f64 = -1e300;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Tuned (or given) hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub kinds: Vec<ParamKind>,
    pub values: Vec<f64>,
    pub sigma2: f64,
}

impl Hyperparams {
    fn select(&self, pick: impl Fn(ParamKind) -> bool) -> Vec<f64> {
        self.kinds
            .iter()
            .zip(&self.values)
            .filter(|(k, _)| pick(**k))
            .map(|(_, v)| *v)
            .collect()
    }

    /// Kernel scales (or precision weights).
    pub fn scales(&self) -> Vec<f64> {
        self.select(|k| matches!(k, ParamKind::Scale | ParamKind::PrecisionWeight))
    }

    pub fn shapes(&self) -> Vec<f64> {
        self.select(|k| matches!(k, ParamKind::Beta | ParamKind::Rho | ParamKind::Alpha))
    }
}

/// Optimizer bookkeeping attached to an [`Estimate`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EstimateFlags {
    /// The winning start met the simplex tolerances.
    pub converged: bool,
    pub evaluations: usize,
    pub failed_starts: usize,
    /// Indices of scale hyperparameters pruned to exactly zero.
    pub pruned: Vec<usize>,
}

/// Posterior mean together with its diagnostics.
#[derive(Debug, Clone)]
pub struct Estimate {
    pub g_hat: ImpulseResponse,
    pub posterior_cov: Option<DMatrix<f64>>,
    pub hyperparams: Hyperparams,
    pub log_evidence: f64,
    pub dof: f64,
    pub flags: EstimateFlags,
}

/// Log evidence, with `failed` set (and `value` at [`EVIDENCE_FAILURE`]) when
/// the marginal covariance could not be factorized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEvidence {
    pub value: f64,
    pub failed: bool,
}

impl LogEvidence {
    fn ok(value: f64) -> Self {
        Self { value, failed: false }
    }

    fn failure() -> Self {
        Self { value: EVIDENCE_FAILURE, failed: true }
    }
}

fn check_inputs(problem: &FirRegression, k: &KernelMatrix, sigma2: f64) -> Result<()> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(param_err(format!("noise variance must be positive, got {sigma2}")));
    }
    if k.dim() != problem.d() {
        return Err(dim_err(format!(
            "kernel is {0}×{0} but the regression has {1} coefficients",
            k.dim(),
            problem.d()
        )));
    }
    Ok(())
}

/// Indices of coefficients with nonzero prior variance.
fn support(k: &DMatrix<f64>) -> Vec<usize> {
    (0..k.nrows()).filter(|&i| k.row(i).iter().any(|v| *v != 0.0)).collect()
}

fn restrict(stats: &GramStats, idx: &[usize]) -> GramStats {
    GramStats {
        gram: stats.gram.select_rows(idx).select_columns(idx),
        cross: stats.cross.select_rows(idx),
        yy: stats.yy,
        n: stats.n,
    }
}

/// Parameter-space posterior for `K = LLᵀ`: mean, covariance, evidence, dof.
pub(crate) struct CovPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub logp: f64,
    pub dof: f64,
}

pub(crate) fn cov_posterior(stats: &GramStats, l: &DMatrix<f64>, sigma2: f64) -> Result<CovPosterior> {
    let ev = cov_eval(stats, &Factor::dense(l), sigma2)?;
    let mean = l * &ev.z;
    let r = l.ncols();
    let ainv = if r == 0 { DMatrix::zeros(0, 0) } else { ev.chol_a.inverse() };
    let cov = symmetrize(&(l * &ainv * l.transpose() * sigma2));
    let dof = (r as f64 - sigma2 * ainv.trace()).max(0.0);
    Ok(CovPosterior { mean, cov, logp: ev.logp, dof })
}

fn param_space(problem: &FirRegression, k: &KernelMatrix, sigma2: f64) -> Result<CovPosterior> {
    let d = problem.d();
    let stats = GramStats::from_regression(problem);
    let idx = support(k.matrix());
    let sub = k.matrix().select_rows(&idx).select_columns(&idx);
    let l_sub = psd_factor(&sub);
    let mut l = DMatrix::zeros(d, l_sub.ncols());
    for (r, &i) in idx.iter().enumerate() {
        l.row_mut(i).copy_from(&l_sub.row(r));
    }
    // Working on the support keeps pruned coefficients exactly zero.
    let post = cov_posterior(&restrict(&stats, &idx), &l_sub, sigma2)?;
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    for (a, &i) in idx.iter().enumerate() {
        mean[i] = post.mean[a];
        for (b, &j) in idx.iter().enumerate() {
            cov[(i, j)] = post.cov[(a, b)];
        }
    }
    Ok(CovPosterior { mean, cov, ..post })
}

fn data_space(problem: &FirRegression, k: &KernelMatrix, sigma2: f64) -> Result<CovPosterior> {
    let phi = &problem.phi;
    let n = problem.n_rows();
    let kphit = k.matrix() * phi.transpose();
    let mut s = phi * &kphit;
    for i in 0..n {
        s[(i, i)] += sigma2;
    }
    let chol = symmetrize(&s)
        .cholesky()
        .ok_or_else(|| Error::Numerical("marginal covariance is not positive definite".into()))?;
    let alpha = chol.solve(&problem.y);
    let mean = &kphit * &alpha;
    let cov = symmetrize(&(k.matrix() - &kphit * chol.solve(&kphit.transpose())));
    let logdet = crate::linalg::chol_logdet(&chol);
    let logp = -0.5 * (n as f64 * LN_2PI + logdet + problem.y.dot(&alpha));
    let dof = (n as f64 - sigma2 * chol.inverse().trace()).max(0.0);
    Ok(CovPosterior { mean, cov, logp, dof })
}

/// Posterior mean `KΦᵀ(ΦKΦᵀ + σ²I)⁻¹Y` from the `pN × pN` data-space system.
pub fn posterior_mean_data_space(problem: &FirRegression, k: &KernelMatrix, sigma2: f64) -> Result<DVector<f64>> {
    check_inputs(problem, k, sigma2)?;
    Ok(data_space(problem, k, sigma2)?.mean)
}

/// Posterior mean through the factor `K = LLᵀ`: `L(LᵀΦᵀΦL + σ²I)⁻¹LᵀΦᵀY`.
pub fn posterior_mean_param_space(problem: &FirRegression, k: &KernelMatrix, sigma2: f64) -> Result<DVector<f64>> {
    check_inputs(problem, k, sigma2)?;
    Ok(param_space(problem, k, sigma2)?.mean)
}

/// Posterior mean and covariance for a fixed kernel and noise variance.
pub fn posterior_mean(problem: &FirRegression, k: &KernelMatrix, sigma2: f64) -> Result<Estimate> {
    check_inputs(problem, k, sigma2)?;
    k.check_psd()?;
    let post = if problem.n_rows() < problem.d() {
        data_space(problem, k, sigma2)?
    } else {
        param_space(problem, k, sigma2)?
    };
    Ok(Estimate {
        g_hat: ImpulseResponse::from_vec(problem.dims, post.mean)?,
        posterior_cov: Some(post.cov),
        hyperparams: spec_hyperparams(k, sigma2),
        log_evidence: post.logp,
        dof: post.dof,
        flags: EstimateFlags { converged: true, ..Default::default() },
    })
}

fn spec_hyperparams(k: &KernelMatrix, sigma2: f64) -> Hyperparams {
    let spec = &k.spec;
    let shape_kind = match spec.base.unwrap_or(spec.family) {
        crate::kernels::KernelFamily::DiagExp => ParamKind::Rho,
        crate::kernels::KernelFamily::PowerDecay => ParamKind::Alpha,
        _ => ParamKind::Beta,
    };
    let mut kinds = vec![ParamKind::Scale; spec.scale.len()];
    kinds.extend(std::iter::repeat_n(shape_kind, spec.shape.len()));
    let mut values = spec.scale.clone();
    values.extend(&spec.shape);
    Hyperparams { kinds, values, sigma2 }
}

/// Log density of `Y ~ N(0, ΦKΦᵀ + σ²I)`.
pub fn log_marginal_likelihood(problem: &FirRegression, k: &KernelMatrix, sigma2: f64) -> LogEvidence {
    if check_inputs(problem, k, sigma2).is_err() {
        return LogEvidence::failure();
    }
    let res = if problem.n_rows() <= problem.d() {
        data_space(problem, k, sigma2)
    } else {
        param_space(problem, k, sigma2)
    };
    match res {
        Ok(p) if p.logp.is_finite() => LogEvidence::ok(p.logp),
        _ => LogEvidence::failure(),
    }
}

/// Trace of the hat matrix `ΦKΦᵀ(ΦKΦᵀ + σ²I)⁻¹`.
pub fn degrees_of_freedom(problem: &FirRegression, k: &KernelMatrix, sigma2: f64) -> Result<f64> {
    check_inputs(problem, k, sigma2)?;
    let post = if problem.n_rows() < problem.d() {
        data_space(problem, k, sigma2)?
    } else {
        param_space(problem, k, sigma2)?
    };
    Ok(post.dof)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::tc_kernel;
    use crate::model::Dims;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn problem(n: usize, d: usize, seed: u64) -> FirRegression {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let phi = DMatrix::from_fn(n, d, |_, _| draw());
        let y = DVector::from_fn(n, |_, _| draw());
        FirRegression::from_parts(y, phi, Dims::siso(d)).unwrap()
    }

    #[test]
    fn both_posterior_forms_agree() {
        for (n, d) in [(5, 12), (40, 12)] {
            let p = problem(n, d, n as u64);
            let k = tc_kernel(d, 2.0, 0.3, 1.0).unwrap();
            let a = posterior_mean_data_space(&p, &k, 0.5).unwrap();
            let b = posterior_mean_param_space(&p, &k, 0.5).unwrap();
            assert!((&a - &b).amax() < 1e-9 * a.amax());
        }
    }

    #[test]
    fn evidence_is_gaussian_log_density() {
        let p = problem(8, 5, 1);
        let k = tc_kernel(5, 1.5, 0.4, 1.0).unwrap();
        let s = &p.phi * k.matrix() * p.phi.transpose() + DMatrix::identity(8, 8) * 0.2;
        let chol = s.cholesky().unwrap();
        let direct = -0.5 * (8.0 * LN_2PI + crate::linalg::chol_logdet(&chol) + p.y.dot(&chol.solve(&p.y)));
        let ev = log_marginal_likelihood(&p, &k, 0.2);
        assert!(!ev.failed);
        assert_relative_eq!(ev.value, direct, max_relative = 1e-10);
        assert_relative_eq!(posterior_mean(&p, &k, 0.2).unwrap().log_evidence, direct, max_relative = 1e-10);
    }

    #[test]
    fn dof_limits_and_monotonicity() {
        let p = problem(30, 6, 2);
        let base = tc_kernel(6, 1.0, 0.2, 1.0).unwrap();
        assert_eq!(degrees_of_freedom(&p, &base.scaled(0.0), 1.0).unwrap(), 0.0);
        assert_relative_eq!(degrees_of_freedom(&p, &base.scaled(1e12), 1.0).unwrap(), 6.0, epsilon = 1e-6);
        let mut last = 0.0;
        for lam in [1e-3, 1e-2, 1e-1, 1.0, 10.0] {
            let dof = degrees_of_freedom(&p, &base.scaled(lam), 1.0).unwrap();
            assert!(dof > last);
            last = dof;
        }
    }

    #[test]
    fn singular_kernel_keeps_null_directions_at_zero() {
        let p = problem(20, 4, 3);
        let k = KernelMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0, 2.0, 0.0]))).unwrap();
        let est = posterior_mean(&p, &k, 0.3).unwrap();
        assert_eq!(est.g_hat.as_vec()[1], 0.0);
        assert_eq!(est.g_hat.as_vec()[3], 0.0);
        assert!(est.dof > 0.0 && est.dof < 2.0);
    }

    #[test]
    fn input_validation() {
        let p = problem(10, 4, 4);
        let k = tc_kernel(4, 1.0, 0.2, 1.0).unwrap();
        assert!(posterior_mean(&p, &k, 0.0).is_err());
        assert!(posterior_mean(&p, &tc_kernel(5, 1.0, 0.2, 1.0).unwrap(), 1.0).is_err());
        assert!(log_marginal_likelihood(&p, &k, -1.0).failed);
    }

    #[test]
    fn hyperparams_split_scales_and_shapes() {
        let hp = Hyperparams {
            kinds: vec![ParamKind::Scale, ParamKind::Scale, ParamKind::Beta, ParamKind::NoiseVariance],
            values: vec![1.0, 2.0, 0.3, 0.1],
            sigma2: 0.1,
        };
        assert_eq!(hp.scales(), vec![1.0, 2.0]);
        assert_eq!(hp.shapes(), vec![0.3]);
    }
}
