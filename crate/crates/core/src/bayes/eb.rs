//! Evidence maximization over kernel hyperparameters.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::evidence::{cov_eval, cov_gradient, prec_eval, Factor, GramStats};
use super::optim::{nelder_mead, newton_polish, start_design, OptimizerConfig};
use super::template::{KernelTemplate, ParamKind, Prior};
use super::{cov_posterior, Estimate, EstimateFlags, Hyperparams, LogEvidence};
use crate::error::{param_err, Error, Result};
use crate::kernels::KernelFamily;
use crate::model::{build_fir_regression, least_squares, min_norm_lstsq, FirRegression, IODataset, ImpulseResponse, InitialConditions, LsFit};
use crate::seed::derive_seed;

/// How the noise variance enters the evidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePolicy {
    Fixed(f64),
    /// Tuned jointly with the kernel hyperparameters.
    Profile,
    /// Least-squares residual variance `RSS / (pN − d)`.
    ResidualPlugin,
}

/// Noise variance under a policy. `Profile` tunes σ² together with a TC
/// kernel and returns the tuned value.
pub fn estimate_noise_variance(problem: &FirRegression, policy: &NoisePolicy) -> Result<f64> {
    match policy {
        NoisePolicy::Fixed(s2) => {
            if *s2 > 0.0 && s2.is_finite() {
                Ok(*s2)
            } else {
                Err(param_err(format!("noise variance must be positive, got {s2}")))
            }
        }
        NoisePolicy::ResidualPlugin => {
            let (n, d) = (problem.n_rows(), problem.d());
            if n <= d {
                return Err(param_err(format!(
                    "residual plug-in needs more rows ({n}) than coefficients ({d})"
                )));
            }
            let (g, _) = min_norm_lstsq(&problem.phi, &problem.y);
            Ok(problem.rss(&g) / (n - d) as f64)
        }
        NoisePolicy::Profile => {
            let template = KernelTemplate::tc(problem.dims, 1.0);
            let ep = EvidenceProblem::new(problem, template, NoisePolicy::Profile)?;
            Ok(empirical_bayes(&ep, &OptimizerConfig::default())?.hyperparams.sigma2)
        }
    }
}

/// A regression together with a prior family to tune.
///
/// Hyperparameter vectors are in natural units: the template's parameters
/// (see [`KernelTemplate::kinds`]) followed by σ² when it is profiled.
#[derive(Debug, Clone)]
pub struct EvidenceProblem {
    problem: FirRegression,
    stats: GramStats,
    template: KernelTemplate,
    kinds: Vec<ParamKind>,
    bounds: Vec<(f64, f64)>,
    sigma2: Option<f64>,
}

impl EvidenceProblem {
    pub fn new(problem: &FirRegression, template: KernelTemplate, policy: NoisePolicy) -> Result<Self> {
        template.validate()?;
        if template.dim() != problem.d() {
            return Err(Error::Dimension(format!(
                "template has {} coefficients, regression has {}",
                template.dim(),
                problem.d()
            )));
        }
        let stats = GramStats::from_regression(problem);
        let mut kinds = template.kinds();
        let mut bounds = template.default_bounds(&stats);
        let sigma2 = match policy {
            NoisePolicy::Profile => {
                kinds.push(ParamKind::NoiseVariance);
                let scale = (stats.yy / stats.n as f64).max(f64::MIN_POSITIVE);
                bounds.push((1e-10 * scale, 10.0 * scale));
                None
            }
            other => Some(estimate_noise_variance(problem, &other)?),
        };
        if sigma2 == Some(0.0) {
            return Err(param_err("noise variance estimate is zero; use a fixed positive value"));
        }
        let ep = Self { problem: problem.clone(), stats, template, kinds, bounds, sigma2 };
        ep.check_bounds(&ep.bounds)?;
        Ok(ep)
    }

    /// Replace the search box (natural units, one pair per hyperparameter).
    pub fn with_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != self.kinds.len() {
            return Err(param_err(format!(
                "expected {} bounds, got {}",
                self.kinds.len(),
                bounds.len()
            )));
        }
        self.check_bounds(&bounds)?;
        self.bounds = bounds;
        Ok(self)
    }

    fn check_bounds(&self, bounds: &[(f64, f64)]) -> Result<()> {
        for (kind, &(lo, hi)) in self.kinds.iter().zip(bounds) {
            let ok = lo.is_finite()
                && hi.is_finite()
                && lo < hi
                && match kind {
                    ParamKind::Rho => lo > 0.0 && hi < 1.0,
                    ParamKind::Alpha => lo > 1.0,
                    _ => lo > 0.0,
                };
            if !ok {
                return Err(param_err(format!("invalid bounds [{lo}, {hi}] for {kind:?}")));
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> &FirRegression {
        &self.problem
    }

    pub fn stats(&self) -> &GramStats {
        &self.stats
    }

    pub fn template(&self) -> &KernelTemplate {
        &self.template
    }

    pub fn kinds(&self) -> &[ParamKind] {
        &self.kinds
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// The fixed noise variance, or `None` when it is profiled.
    pub fn fixed_sigma2(&self) -> Option<f64> {
        self.sigma2
    }

    fn n_template(&self) -> usize {
        self.kinds.len() - usize::from(self.sigma2.is_none())
    }

    fn split<'a>(&self, theta: &'a [f64]) -> (&'a [f64], f64) {
        let nt = self.n_template();
        (&theta[..nt], self.sigma2.unwrap_or_else(|| theta[nt]))
    }

    fn eval(&self, stats: &GramStats, theta: &[f64], grad: bool) -> Result<(f64, Vec<f64>)> {
        if theta.len() != self.kinds.len() {
            return Err(param_err(format!(
                "expected {} hyperparameters, got {}",
                self.kinds.len(),
                theta.len()
            )));
        }
        let (tpl, s2) = self.split(theta);
        match self.template.instantiate(tpl, grad)? {
            Prior::Cov { l, dk, layout } => {
                let f = Factor { l: &l, layout: layout.as_ref() };
                let ev = cov_eval(stats, &f, s2)?;
                if !grad {
                    return Ok((ev.logp, vec![]));
                }
                let cg = cov_gradient(stats, &f, &ev);
                let mut g: Vec<f64> = dk.iter().map(|m| cg.directional(m)).collect();
                if self.sigma2.is_none() {
                    g.push(cg.dlog_sigma2);
                }
                Ok((ev.logp, g))
            }
            Prior::Prec { p, dp } => {
                let ev = prec_eval(stats, &p, s2)?;
                if !grad {
                    return Ok((ev.logp, vec![]));
                }
                let pg = ev.gradient();
                let mut g: Vec<f64> = dp.iter().map(|m| pg.directional(m)).collect();
                if self.sigma2.is_none() {
                    g.push(pg.dlog_sigma2(stats, &p));
                }
                Ok((ev.logp, g))
            }
        }
    }

    /// Log evidence at natural hyperparameters.
    pub fn log_evidence(&self, theta: &[f64]) -> LogEvidence {
        match self.eval(&self.stats, theta, false) {
            Ok((v, _)) => LogEvidence { value: v, failed: false },
            Err(_) => LogEvidence { value: super::EVIDENCE_FAILURE, failed: true },
        }
    }

    /// Log evidence and its gradient with respect to the search coordinates
    /// (`ln λ`, `ln β`, `logit ρ`, `ln(α−1)`, `ln σ²`).
    pub fn log_evidence_gradient(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.eval(&self.stats, theta, true)
    }

    /// Posterior at natural hyperparameters.
    pub fn posterior(&self, theta: &[f64]) -> Result<Estimate> {
        self.posterior_with(&self.stats, theta, EstimateFlags { converged: true, ..Default::default() })
    }

    fn posterior_mean_vec(&self, stats: &GramStats, theta: &[f64]) -> Result<DVector<f64>> {
        let (tpl, s2) = self.split(theta);
        Ok(match self.template.instantiate(tpl, false)? {
            Prior::Cov { l, .. } => cov_posterior(stats, &l, s2)?.mean,
            Prior::Prec { p, .. } => prec_eval(stats, &p, s2)?.mean,
        })
    }

    fn posterior_with(&self, stats: &GramStats, theta: &[f64], flags: EstimateFlags) -> Result<Estimate> {
        let (tpl, s2) = self.split(theta);
        let (mean, cov, logp, dof) = match self.template.instantiate(tpl, false)? {
            Prior::Cov { l, .. } => {
                let post = cov_posterior(stats, &l, s2)?;
                (post.mean, post.cov, post.logp, post.dof)
            }
            Prior::Prec { p, .. } => {
                let ev = prec_eval(stats, &p, s2)?;
                let binv = ev.chol_b.inverse();
                let dof = (stats.d() as f64 - s2 * (&binv * &p).trace()).max(0.0);
                let cov = crate::linalg::symmetrize(&(binv * s2));
                (ev.mean, cov, ev.logp, dof)
            }
        };
        Ok(Estimate {
            g_hat: ImpulseResponse::from_vec(self.problem.dims, mean)?,
            posterior_cov: Some(cov),
            hyperparams: Hyperparams { kinds: self.template.kinds(), values: tpl.to_vec(), sigma2: s2 },
            log_evidence: logp,
            dof,
            flags,
        })
    }

    fn is_covariance(&self) -> bool {
        !matches!(self.template, KernelTemplate::PrecisionSum { .. })
    }

    /// Maximize the evidence over the coordinates flagged in `free`, starting
    /// from `start` (natural units) or from a multi-start design when `None`.
    fn optimize(
        &self,
        stats: &GramStats,
        start: Option<&[f64]>,
        free: &[bool],
        cfg: &OptimizerConfig,
    ) -> Result<(Vec<f64>, f64, EstimateFlags)> {
        let np = self.kinds.len();
        let mut theta: Vec<f64> = match start {
            Some(s) => s.to_vec(),
            None => self
                .kinds
                .iter()
                .zip(&self.bounds)
                .map(|(k, &(lo, hi))| k.from_search(0.5 * (k.to_search(lo) + k.to_search(hi))))
                .collect(),
        };
        let mut free: Vec<bool> = (0..np).map(|i| free[i] && theta[i] != 0.0).collect();
        let mut flags = EstimateFlags::default();

        let search = |theta: &[f64], free: &[bool]| Search::new(self, stats, theta, free);

        if start.is_none() {
            let s = search(&theta, &free);
            let design = start_design(&s.lo, &s.hi, cfg.starts);
            let run = |x0: &Vec<f64>| nelder_mead(|x| -s.logp(x), x0, &s.lo, &s.hi, cfg);
            let results: Vec<_> = if cfg.parallel {
                design.par_iter().map(run).collect()
            } else {
                design.iter().map(run).collect()
            };
            flags.failed_starts = results.iter().filter(|r| !r.f.is_finite()).count();
            flags.evaluations = results.iter().map(|r| r.evals).sum();
            let best = results
                .iter()
                .enumerate()
                .filter(|(_, r)| r.f.is_finite())
                .min_by(|a, b| a.1.f.total_cmp(&b.1.f).then(a.0.cmp(&b.0)))
                .map(|(_, r)| r.clone())
                .ok_or_else(|| Error::Numerical("evidence could not be evaluated at any start".into()))?;
            flags.converged = best.converged;
            theta = s.natural(&best.x);
        } else {
            flags.converged = true;
        }

        let polish = |theta: &mut Vec<f64>, free: &[bool], evals: &mut usize| {
            let s = search(theta, free);
            let x0 = s.search_point(theta);
            let (x, _, n) = newton_polish(|x| s.value_grad(x), &x0, &s.lo, &s.hi, &vec![true; x0.len()], 100);
            *evals += n;
            *theta = s.natural(&x);
        };
        if cfg.polish {
            polish(&mut theta, &free, &mut flags.evaluations);
        }
        let mut logp = self.eval(stats, &theta, false)?.0;

        // Scales whose evidence is no better than at zero are pruned exactly.
        if self.is_covariance() {
            loop {
                let mut snapped = false;
                for i in 0..self.n_template() {
                    if self.kinds[i] != ParamKind::Scale || theta[i] == 0.0 || !free[i] {
                        continue;
                    }
                    let mut trial = theta.clone();
                    trial[i] = 0.0;
                    if let Ok((l0, _)) = self.eval(stats, &trial, false) {
                        if l0 >= logp - 1e-9 * (1.0 + logp.abs()) {
                            theta = trial;
                            logp = l0;
                            free[i] = false;
                            flags.pruned.push(i);
                            snapped = true;
                        }
                    }
                }
                if !snapped {
                    break;
                }
                if cfg.polish {
                    polish(&mut theta, &free, &mut flags.evaluations);
                    logp = self.eval(stats, &theta, false)?.0;
                }
            }
            flags.pruned.sort_unstable();
        }
        Ok((theta, logp, flags))
    }
}

/// Restriction of the evidence to a subset of search coordinates.
struct Search<'a> {
    ep: &'a EvidenceProblem,
    stats: &'a GramStats,
    base: Vec<f64>,
    idx: Vec<usize>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> Search<'a> {
    fn new(ep: &'a EvidenceProblem, stats: &'a GramStats, base: &[f64], free: &[bool]) -> Self {
        let idx: Vec<usize> = (0..base.len()).filter(|&i| free[i]).collect();
        let lo = idx.iter().map(|&i| ep.kinds[i].to_search(ep.bounds[i].0)).collect();
        let hi = idx.iter().map(|&i| ep.kinds[i].to_search(ep.bounds[i].1)).collect();
        Self { ep, stats, base: base.to_vec(), idx, lo, hi }
    }

    fn natural(&self, x: &[f64]) -> Vec<f64> {
        let mut theta = self.base.clone();
        for (c, &i) in self.idx.iter().enumerate() {
            theta[i] = self.ep.kinds[i].from_search(x[c]);
        }
        theta
    }

    fn search_point(&self, theta: &[f64]) -> Vec<f64> {
        self.idx
            .iter()
            .enumerate()
            .map(|(c, &i)| self.ep.kinds[i].to_search(theta[i]).clamp(self.lo[c], self.hi[c]))
            .collect()
    }

    fn logp(&self, x: &[f64]) -> f64 {
        match self.ep.eval(self.stats, &self.natural(x), false) {
            Ok((v, _)) if v.is_finite() => v,
            _ => f64::NEG_INFINITY,
        }
    }

    fn value_grad(&self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (v, g) = self.ep.eval(self.stats, &self.natural(x), true).ok()?;
        if !v.is_finite() || g.iter().any(|x| !x.is_finite()) {
            return None;
        }
        Some((v, self.idx.iter().map(|&i| g[i]).collect()))
    }
}

/// Maximize the evidence and return the plug-in posterior.
pub fn empirical_bayes(ep: &EvidenceProblem, cfg: &OptimizerConfig) -> Result<Estimate> {
    let free = vec![true; ep.kinds.len()];
    let (theta, _, flags) = ep.optimize(&ep.stats, None, &free, cfg)?;
    ep.posterior_with(&ep.stats, &theta, flags)
}

/// Settings for [`excess_degrees_of_freedom`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExcessDofConfig {
    pub seed: u64,
    /// Replicate 0 uses the observed data; later replicates are drawn from
    /// the fitted model with the tuned noise variance.
    pub replicates: usize,
    /// Finite-difference step; defaults to `1e-4·std(Y)`.
    pub step: Option<f64>,
    /// Also re-tune the shape hyperparameters under perturbation.
    pub include_shape: bool,
    pub optimizer: OptimizerConfig,
}

impl Default for ExcessDofConfig {
    fn default() -> Self {
        Self { seed: 0, replicates: 1, step: None, include_shape: false, optimizer: OptimizerConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcessDof {
    /// Average over the replicates that succeeded.
    pub value: f64,
    pub per_replicate: Vec<f64>,
    pub dropped: usize,
}

/// Extra sensitivity of the fitted values caused by tuning the hyperparameters
/// on the data: `Σ_j ∂δ_j/∂λ · ∂λ̂/∂Y_j`, by central differences in each `Y_j`.
pub fn excess_degrees_of_freedom(ep: &EvidenceProblem, cfg: &ExcessDofConfig) -> Result<ExcessDof> {
    if cfg.replicates == 0 {
        return Err(param_err("need at least one replicate"));
    }
    let y = &ep.problem.y;
    let n = y.len();
    let h = match cfg.step {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => return Err(param_err(format!("finite-difference step must be positive, got {h}"))),
        None => {
            let mean = y.mean();
            let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.max(2).saturating_sub(1) as f64).sqrt();
            1e-4 * if sd > 0.0 { sd } else { 1.0 }
        }
    };
    let phi = &ep.problem.phi;
    let mut per_replicate = Vec::with_capacity(cfg.replicates);
    let mut dropped = 0;
    let mut fitted_model = None;

    for r in 0..cfg.replicates {
        let y_r = if r == 0 {
            y.clone()
        } else {
            let (g_hat, s2): &(DVector<f64>, f64) = match &fitted_model {
                Some(m) => m,
                None => unreachable!("replicate 0 is always attempted first"),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, r as u64));
            let sd = s2.sqrt();
            let mut yr = phi * g_hat;
            for v in yr.iter_mut() {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += sd * e;
            }
            yr
        };
        let stats = GramStats::from_parts(phi, &y_r);
        let all = vec![true; ep.kinds.len()];
        let fit = ep.optimize(&stats, None, &all, &cfg.optimizer);
        let Ok((theta, _, _)) = fit else {
            if r == 0 {
                return Err(Error::Numerical("empirical Bayes failed on the observed data".into()));
            }
            dropped += 1;
            continue;
        };
        if r == 0 {
            let g = ep.posterior_mean_vec(&stats, &theta)?;
            fitted_model = Some((g, ep.split(&theta).1));
        }
        let free: Vec<bool> = ep
            .kinds
            .iter()
            .enumerate()
            .map(|(i, k)| {
                i < ep.n_template()
                    && match k {
                        ParamKind::Scale | ParamKind::PrecisionWeight => true,
                        ParamKind::NoiseVariance => false,
                        _ => cfg.include_shape,
                    }
            })
            .collect();
        if !free.iter().zip(&theta).any(|(f, t)| *f && *t != 0.0) {
            per_replicate.push(0.0);
            continue;
        }
        let local = OptimizerConfig { polish: true, ..cfg.optimizer.clone() };
        let terms: Vec<Option<f64>> = (0..n)
            .into_par_iter()
            .map(|j| {
                let row: Vec<f64> = phi.row(j).iter().copied().collect();
                let mut delta = [0.0; 2];
                for (s, sign) in [1.0, -1.0].into_iter().enumerate() {
                    let pert = stats.perturbed(&row, y_r[j], sign * h);
                    let (th, _, _) = ep.optimize(&pert, Some(&theta), &free, &local).ok()?;
                    let g = ep.posterior_mean_vec(&stats, &th).ok()?;
                    delta[s] = row.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
                }
                Some((delta[0] - delta[1]) / (2.0 * h))
            })
            .collect();
        if terms.iter().any(Option::is_none) {
            dropped += 1;
            continue;
        }
        per_replicate.push(terms.into_iter().flatten().sum());
    }
    if per_replicate.is_empty() {
        return Err(Error::Numerical("every replicate failed".into()));
    }
    let value = per_replicate.iter().sum::<f64>() / per_replicate.len() as f64;
    Ok(ExcessDof { value, per_replicate, dropped })
}

/// Two-stage model-error fit: a short FIR nominal model by least squares,
/// then a diagonal exponentially decaying prior fitted by evidence
/// maximization to its residuals over a longer lag window.
#[derive(Debug, Clone)]
pub struct ModelErrorFit {
    pub nominal: LsFit,
    pub error: Estimate,
    /// Tuned `(λ, ρ)` of the model-error prior.
    pub scale: f64,
    pub rho: f64,
}

pub fn model_error_fit(
    data: &IODataset,
    nominal_lags: usize,
    error_lags: usize,
    noise: NoisePolicy,
    cfg: &OptimizerConfig,
) -> Result<ModelErrorFit> {
    let nominal_problem = build_fir_regression(data, nominal_lags, InitialConditions::ZeroPad)?;
    let nominal = least_squares(&nominal_problem);
    let fitted = nominal_problem.predict(&nominal.response);
    let error_problem = build_fir_regression(data, error_lags, InitialConditions::ZeroPad)?;
    let residual = &nominal_problem.y - fitted;
    let error_problem = FirRegression::from_parts(residual, error_problem.phi, error_problem.dims)?;
    let template = KernelTemplate::Channels {
        family: KernelFamily::DiagExp,
        dims: error_problem.dims,
        sample_time: data.sample_time(),
        shared_scale: true,
        shape: super::ShapePolicy::Shared,
    };
    let ep = EvidenceProblem::new(&error_problem, template, noise)?;
    let error = empirical_bayes(&ep, cfg)?;
    let scale = error.hyperparams.values[0];
    let rho = error.hyperparams.values[1];
    Ok(ModelErrorFit { nominal, error, scale, rho })
}

/// Local evidence maximization from a given point (natural units), without
/// the multi-start phase. Useful for warm-started refits.
pub fn empirical_bayes_from(ep: &EvidenceProblem, start: &[f64], cfg: &OptimizerConfig) -> Result<Estimate> {
    if start.len() != ep.kinds.len() {
        return Err(param_err(format!("expected {} hyperparameters, got {}", ep.kinds.len(), start.len())));
    }
    let start: Vec<f64> = start
        .iter()
        .zip(&ep.bounds)
        .map(|(v, &(lo, hi))| if *v == 0.0 { 0.0 } else { v.clamp(lo, hi) })
        .collect();
    let free = vec![true; ep.kinds.len()];
    let (theta, _, flags) = ep.optimize(&ep.stats, Some(&start), &free, cfg)?;
    ep.posterior_with(&ep.stats, &theta, flags)
}
