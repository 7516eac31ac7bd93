//! Compound estimation of a mean vector `Y = α + E`, `E ~ N(0, σ²I)`:
//! Stein-type shrinkage, scalar empirical Bayes and the change of
//! coordinates that turns kernel regression into independent shrinkage.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Error, Result};
use crate::linalg::{check_psd, psd_factor, sorted_svd, symmetrize, PSD_REL_TOL};
use crate::seed::derive_seed;

/// Observations of a compound problem and, for risk studies, the truth.
#[derive(Debug, Clone)]
pub struct CompoundProblem {
    pub y: DVector<f64>,
    pub sigma2: f64,
    pub truth: Option<DVector<f64>>,
    /// Loss weights `Q`; `None` means the plain compound loss.
    pub weights: Option<DMatrix<f64>>,
}

impl CompoundProblem {
    pub fn new(y: DVector<f64>, sigma2: f64) -> Result<Self> {
        if y.is_empty() {
            return Err(dim_err("need at least one observation"));
        }
        check_sigma2(sigma2)?;
        Ok(Self { y, sigma2, truth: None, weights: None })
    }

    pub fn with_truth(mut self, alpha: DVector<f64>) -> Result<Self> {
        if alpha.len() != self.y.len() {
            return Err(dim_err("truth and observations differ in length"));
        }
        self.truth = Some(alpha);
        Ok(self)
    }

    pub fn with_weights(mut self, q: DMatrix<f64>) -> Result<Self> {
        let b = self.y.len();
        if q.nrows() != b || q.ncols() != b {
            return Err(dim_err(format!("weights must be {b}×{b}")));
        }
        check_psd(&q)?;
        self.weights = Some(q);
        Ok(self)
    }

    pub fn b(&self) -> usize {
        self.y.len()
    }

    /// Loss of `delta` against the truth: compound, or `(δ−α)ᵀQ(δ−α)` with weights.
    pub fn loss(&self, delta: &DVector<f64>) -> Result<f64> {
        let alpha = self.truth.as_ref().ok_or_else(|| param_err("the problem has no truth"))?;
        match &self.weights {
            None => compound_loss(alpha, delta),
            Some(q) => {
                let e = delta - alpha;
                if e.len() != q.nrows() {
                    return Err(dim_err("estimate has the wrong length"));
                }
                Ok(e.dot(&(q * &e)))
            }
        }
    }
}

fn check_sigma2(sigma2: f64) -> Result<()> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(param_err(format!("noise variance must be positive, got {sigma2}")))
    }
}

/// Componentwise sign decisions with ties broken towards `+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignDecision {
    pub signs: Vec<i8>,
    /// Set when some component was exactly zero.
    pub had_zero: bool,
}

pub fn np_sign_rule(y: &DVector<f64>) -> SignDecision {
    let signs = y.iter().map(|&v| if v < 0.0 { -1 } else { 1 }).collect();
    SignDecision { signs, had_zero: y.iter().any(|&v| v == 0.0) }
}

/// `(1 − (B−2)σ²/‖Y‖²)·Y`.
pub fn james_stein(y: &DVector<f64>, sigma2: f64) -> Result<DVector<f64>> {
    let b = y.len();
    if b < 3 {
        return Err(param_err(format!("James–Stein needs B >= 3, got {b}")));
    }
    check_sigma2(sigma2)?;
    let n2 = y.norm_squared();
    if n2 == 0.0 {
        return Err(param_err("James–Stein factor is undefined at Y = 0"));
    }
    Ok(y * (1.0 - (b as f64 - 2.0) * sigma2 / n2))
}

fn clipped_factor(y: &DVector<f64>, c: f64) -> f64 {
    let n2 = y.norm_squared();
    if n2 == 0.0 { 0.0 } else { (1.0 - c / n2).max(0.0) }
}

/// James–Stein with the shrinkage factor clipped at zero.
pub fn positive_part_js(y: &DVector<f64>, sigma2: f64) -> Result<DVector<f64>> {
    let b = y.len();
    if b < 3 {
        return Err(param_err(format!("James–Stein needs B >= 3, got {b}")));
    }
    check_sigma2(sigma2)?;
    Ok(y * clipped_factor(y, (b as f64 - 2.0) * sigma2))
}

/// Empirical Bayes shrinkage `(1 − Bσ²/‖Y‖²)⁺·Y`.
pub fn eb_shrinkage(y: &DVector<f64>, sigma2: f64) -> Result<DVector<f64>> {
    if y.is_empty() {
        return Err(dim_err("need at least one observation"));
    }
    check_sigma2(sigma2)?;
    Ok(y * clipped_factor(y, y.len() as f64 * sigma2))
}

/// Maximum marginal likelihood prior variance for `α ~ N(0, λI)`.
pub fn scalar_ml_lambda(y: &DVector<f64>, sigma2: f64) -> Result<f64> {
    if y.is_empty() {
        return Err(dim_err("need at least one observation"));
    }
    check_sigma2(sigma2)?;
    Ok((y.norm_squared() / y.len() as f64 - sigma2).max(0.0))
}

/// Posterior mean `λ/(λ+σ²)·Y` under `α ~ N(0, λI)`.
pub fn bayes_shrinkage(y: &DVector<f64>, lambda: f64, sigma2: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(param_err(format!("lambda must be nonnegative, got {lambda}")));
    }
    check_sigma2(sigma2)?;
    Ok(y * (lambda / (lambda + sigma2)))
}

/// Exact compound risk of James–Stein at `‖α‖`, from the Poisson mixture
/// representation of the noncentral chi-square.
pub fn james_stein_exact_risk(b: usize, alpha_norm: f64, sigma2: f64) -> Result<f64> {
    if b < 3 {
        return Err(param_err("James–Stein needs B >= 3"));
    }
    check_sigma2(sigma2)?;
    let mu = alpha_norm * alpha_norm / (2.0 * sigma2);
    let bf = b as f64;
    // E[1/‖Y‖²] = Σ_k Pois(k; μ) / (σ²(B − 2 + 2k)).
    let mut inv = 0.0;
    let mut log_w = -mu;
    let mut k = 0usize;
    loop {
        let w = log_w.exp();
        inv += w / (sigma2 * (bf - 2.0 + 2.0 * k as f64));
        k += 1;
        if k as f64 > mu && w < 1e-18 {
            break;
        }
        log_w += mu.ln() - (k as f64).ln();
        if mu == 0.0 {
            break;
        }
    }
    Ok(sigma2 * (1.0 - (bf - 2.0).powi(2) * sigma2 * inv / bf))
}

/// Change of coordinates that makes the prior and the design simultaneously
/// diagonal: with `ΦΨ = Q D^{1/2} Vᵀ` and `A = QᵀΦ`, `A K Aᵀ = D` and
/// `A (ΦᵀΦ)⁻¹ Aᵀ = I`. In these coordinates `Z = QᵀY = β̄ + ε` with
/// `β̄ = A g` and independent noise of variance σ².
#[derive(Debug, Clone)]
pub struct CoordinateChange {
    pub a: DMatrix<f64>,
    /// Squared singular values of `ΦΨ`, decreasing.
    pub d: DVector<f64>,
    pub q: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub z: DVector<f64>,
    /// `‖A K Aᵀ − D‖_F / ‖D‖_F`.
    pub kernel_residual: f64,
    /// `‖A (ΦᵀΦ)⁻¹ Aᵀ − I‖_F / √r`; `None` when `Φ` is rank deficient.
    pub design_residual: Option<f64>,
    pub rank_deficient: bool,
}

/// Coordinates for a kernel given through a factor `K = ΨΨᵀ`.
pub fn strawderman_transform(phi: &DMatrix<f64>, psi: &DMatrix<f64>, y: &DVector<f64>) -> Result<CoordinateChange> {
    if psi.nrows() != phi.ncols() {
        return Err(dim_err(format!("Ψ has {} rows, Φ has {} columns", psi.nrows(), phi.ncols())));
    }
    if y.len() != phi.nrows() {
        return Err(dim_err("Y and Φ differ in rows"));
    }
    let svd = sorted_svd(&(phi * psi));
    let mut q = svd.u;
    let mut v = svd.v;
    // Fix the sign of each singular pair for reproducibility.
    for c in 0..v.ncols() {
        let imax = v.column(c).iamax();
        if v[(imax, c)] < 0.0 {
            v.column_mut(c).neg_mut();
            q.column_mut(c).neg_mut();
        }
    }
    let d = svd.s.map(|s| s * s);
    let a = q.tr_mul(phi);
    let z = q.tr_mul(y);
    let k = psi * psi.transpose();

    let dnorm = d.norm().max(f64::MIN_POSITIVE);
    let kernel_residual = (&a * &k * a.transpose() - DMatrix::from_diagonal(&d)).norm() / dnorm;

    let gram = phi.tr_mul(phi);
    let gsv = SymmetricEigen::new(symmetrize(&gram)).eigenvalues;
    let gmax = gsv.max();
    let rank_deficient = gsv.min() <= 1e-12 * gmax.max(f64::MIN_POSITIVE) || phi.nrows() < phi.ncols();
    let design_residual = if rank_deficient {
        None
    } else {
        let ginv = gram.cholesky().ok_or_else(|| Error::Numerical("ΦᵀΦ is not invertible".into()))?.inverse();
        let r = a.nrows();
        Some((&a * ginv * a.transpose() - DMatrix::identity(r, r)).norm() / (r as f64).sqrt().max(1.0))
    };
    Ok(CoordinateChange {
        a,
        d,
        q,
        v,
        psi: psi.clone(),
        z,
        kernel_residual,
        design_residual,
        rank_deficient,
    })
}

impl CoordinateChange {
    /// Coordinates for a PSD kernel, factored through its eigendecomposition.
    pub fn from_kernel(phi: &DMatrix<f64>, k: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        check_psd(k)?;
        strawderman_transform(phi, &psd_factor(k), y)
    }

    /// `g = ΨVD^{-1/2}β̄`; components with `d_i = 0` are dropped.
    pub fn to_original(&self, beta_bar: &DVector<f64>) -> Result<DVector<f64>> {
        if beta_bar.len() != self.d.len() {
            return Err(dim_err("coordinate vector has the wrong length"));
        }
        let w = DVector::from_fn(self.d.len(), |i, _| {
            if self.d[i] > 0.0 { beta_bar[i] / self.d[i].sqrt() } else { 0.0 }
        });
        Ok(&self.psi * (&self.v * w))
    }

    /// `β̄ = A g`.
    pub fn to_coordinates(&self, g: &DVector<f64>) -> DVector<f64> {
        &self.a * g
    }

    /// Normalized coefficients `β = D^{-1/2} A g`, with `gᵀK⁺g = ‖β‖²` for `g` in range(K).
    pub fn normalized(&self, g: &DVector<f64>) -> DVector<f64> {
        let bb = self.to_coordinates(g);
        DVector::from_fn(bb.len(), |i, _| if self.d[i] > 0.0 { bb[i] / self.d[i].sqrt() } else { 0.0 })
    }
}

/// Posterior mean of `β̄_i ~ N(0, λ d_i)` from `Z_i = β̄_i + ε_i`:
/// `(1 − (σ²/d_i)/(λ + σ²/d_i))·Z_i`, zero where `d_i = 0`.
pub fn shrinkage_in_coordinates(z: &DVector<f64>, d: &DVector<f64>, lambda: f64, sigma2: f64) -> Result<DVector<f64>> {
    if z.len() != d.len() {
        return Err(dim_err("Z and D differ in length"));
    }
    if d.iter().any(|v| !(*v >= 0.0)) {
        return Err(param_err("D must be nonnegative"));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(param_err(format!("lambda must be nonnegative, got {lambda}")));
    }
    check_sigma2(sigma2)?;
    Ok(DVector::from_fn(z.len(), |i, _| {
        if d[i] <= 0.0 {
            return 0.0;
        }
        let w = sigma2 / d[i];
        if lambda == 0.0 { 0.0 } else { (1.0 - w / (lambda + w)) * z[i] }
    }))
}

/// `gᵀK⁺g / B`, the large-sample limit of the maximum likelihood scale for `K = λK̄`.
pub fn lambda_star(g: &DVector<f64>, k: &DMatrix<f64>, b: usize) -> Result<f64> {
    if k.nrows() != g.len() || k.ncols() != g.len() {
        return Err(dim_err("kernel and impulse response differ in size"));
    }
    if b == 0 {
        return Err(param_err("B must be positive"));
    }
    let eig = SymmetricEigen::new(symmetrize(k));
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let mut quad = 0.0;
    let mut inside = DVector::zeros(g.len());
    for i in 0..g.len() {
        let lam = eig.eigenvalues[i];
        if max > 0.0 && lam > PSD_REL_TOL * max {
            let u = eig.eigenvectors.column(i);
            let c = u.dot(g);
            quad += c * c / lam;
            inside += u * c;
        }
    }
    let outside = (g - inside).norm();
    if outside > 1e-8 * g.norm().max(f64::MIN_POSITIVE) {
        return Err(param_err(format!("impulse response leaves the range of K (residual {outside:.3e})")));
    }
    Ok(quad / b as f64)
}

/// Result of [`eb_strawderman`].
#[derive(Debug, Clone)]
pub struct EbStrawderman {
    pub beta_bar: DVector<f64>,
    pub lambda: f64,
    /// Number of components with `d_i = 0` left out of the λ statistic.
    pub excluded: usize,
}

/// Shrinkage in coordinates with the plug-in `λ = Σ Z_i²/d_i / B` over `d_i > 0`.
pub fn eb_strawderman(z: &DVector<f64>, d: &DVector<f64>, sigma2: f64) -> Result<EbStrawderman> {
    if z.len() != d.len() {
        return Err(dim_err("Z and D differ in length"));
    }
    let active: Vec<usize> = (0..d.len()).filter(|&i| d[i] > 0.0).collect();
    if active.is_empty() {
        return Err(param_err("every singular value is zero"));
    }
    let lambda = active.iter().map(|&i| z[i] * z[i] / d[i]).sum::<f64>() / active.len() as f64;
    let beta_bar = shrinkage_in_coordinates(z, d, lambda, sigma2)?;
    Ok(EbStrawderman { beta_bar, lambda, excluded: d.len() - active.len() })
}

/// `(1/B) Σ (α_i − δ_i)²`.
pub fn compound_loss(alpha: &DVector<f64>, delta: &DVector<f64>) -> Result<f64> {
    if alpha.len() != delta.len() || alpha.is_empty() {
        return Err(dim_err("α and δ must be non-empty and of equal length"));
    }
    Ok((alpha - delta).norm_squared() / alpha.len() as f64)
}

/// `(δ − β̄)ᵀ D (δ − β̄)` with `D` diagonal.
pub fn weighted_loss(beta_bar: &DVector<f64>, delta: &DVector<f64>, d: &DVector<f64>) -> Result<f64> {
    if beta_bar.len() != delta.len() || d.len() != delta.len() {
        return Err(dim_err("β̄, δ and D must share their length"));
    }
    Ok((delta - beta_bar).iter().zip(d.iter()).map(|(e, w)| w * e * e).sum())
}

/// `g̃ᵀ(ΦᵀΦ K ΦᵀΦ)g̃` with `g̃ = g − ĝ`.
pub fn output_weighted_loss(g: &DVector<f64>, g_hat: &DVector<f64>, phi: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<f64> {
    let d = g.len();
    if g_hat.len() != d || phi.ncols() != d || k.nrows() != d || k.ncols() != d {
        return Err(dim_err("dimensions of g, ĝ, Φ and K disagree"));
    }
    let e = phi.tr_mul(&(phi * (g - g_hat)));
    Ok(e.dot(&(k * &e)))
}

/// Estimators available to [`risk_monte_carlo`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkageRule {
    LeastSquares,
    JamesStein,
    PositivePartJs,
    EbShrinkage,
    /// Posterior mean with a known prior variance.
    Bayes { lambda: f64 },
    /// Shrinkage in coordinates with plug-in λ; observations are `Z = β̄ + ε`.
    EbStrawderman { d: Vec<f64> },
}

impl ShrinkageRule {
    pub fn name(&self) -> &'static str {
        match self {
            ShrinkageRule::LeastSquares => "ls",
            ShrinkageRule::JamesStein => "james_stein",
            ShrinkageRule::PositivePartJs => "positive_part_js",
            ShrinkageRule::EbShrinkage => "eb_shrinkage",
            ShrinkageRule::Bayes { .. } => "bayes",
            ShrinkageRule::EbStrawderman { .. } => "eb_strawderman",
        }
    }

    pub fn apply(&self, y: &DVector<f64>, sigma2: f64) -> Result<DVector<f64>> {
        match self {
            ShrinkageRule::LeastSquares => Ok(y.clone()),
            ShrinkageRule::JamesStein => james_stein(y, sigma2),
            ShrinkageRule::PositivePartJs => positive_part_js(y, sigma2),
            ShrinkageRule::EbShrinkage => eb_shrinkage(y, sigma2),
            ShrinkageRule::Bayes { lambda } => bayes_shrinkage(y, *lambda, sigma2),
            ShrinkageRule::EbStrawderman { d } => {
                Ok(eb_strawderman(y, &DVector::from_column_slice(d), sigma2)?.beta_bar)
            }
        }
    }
}

/// Loss used when averaging risk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskLoss {
    Compound,
    /// `(δ − α)ᵀ diag(w) (δ − α)`.
    Weighted(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub risk: f64,
    pub stderr: f64,
    pub replicates: usize,
    /// Draws on which the rule failed.
    pub dropped: usize,
}

const RISK_CHUNK: usize = 1000;

/// Average loss of `rule(α + E)` over seeded Gaussian draws. Draws are made
/// in fixed chunks with their own seeds, so the result does not depend on
/// the thread count.
pub fn risk_monte_carlo(
    rule: &ShrinkageRule,
    alpha: &DVector<f64>,
    sigma2: f64,
    n_rep: usize,
    seed: u64,
    loss: &RiskLoss,
) -> Result<RiskEstimate> {
    if n_rep < 100 {
        return Err(param_err(format!("need at least 100 replicates, got {n_rep}")));
    }
    check_sigma2(sigma2)?;
    if let RiskLoss::Weighted(w) = loss {
        if w.len() != alpha.len() {
            return Err(dim_err("loss weights and α differ in length"));
        }
    }
    let b = alpha.len();
    let sd = sigma2.sqrt();
    let chunks = n_rep.div_ceil(RISK_CHUNK);
    let partial: Vec<(f64, f64, usize, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let count = RISK_CHUNK.min(n_rep - c * RISK_CHUNK);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, c as u64));
            let (mut s, mut s2, mut ok, mut bad) = (0.0, 0.0, 0, 0);
            let mut y = DVector::zeros(b);
            for _ in 0..count {
                for i in 0..b {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    y[i] = alpha[i] + sd * e;
                }
                let l = rule.apply(&y, sigma2).and_then(|delta| match loss {
                    RiskLoss::Compound => compound_loss(alpha, &delta),
                    RiskLoss::Weighted(w) => weighted_loss(alpha, &delta, &DVector::from_column_slice(w)),
                });
                match l {
                    Ok(l) if l.is_finite() => {
                        s += l;
                        s2 += l * l;
                        ok += 1;
                    }
                    _ => bad += 1,
                }
            }
            (s, s2, ok, bad)
        })
        .collect();
    let (mut s, mut s2, mut ok, mut bad) = (0.0, 0.0, 0, 0);
    for (a, b2, c, d) in partial {
        s += a;
        s2 += b2;
        ok += c;
        bad += d;
    }
    if ok < 2 {
        return Err(Error::Numerical("the rule failed on almost every draw".into()));
    }
    let n = ok as f64;
    let mean = s / n;
    let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(RiskEstimate { risk: mean, stderr: (var / n).sqrt(), replicates: ok, dropped: bad })
}
