//! Marginal likelihood of the FIR regression from its sufficient statistics.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::FirRegression;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// `ΦᵀΦ`, `ΦᵀY`, `YᵀY` and the number of rows: everything the Gaussian
/// evidence and posterior depend on.
#[derive(Debug, Clone)]
pub struct GramStats {
    pub gram: DMatrix<f64>,
    pub cross: DVector<f64>,
    pub yy: f64,
    pub n: usize,
}

impl GramStats {
    pub fn from_regression(problem: &FirRegression) -> Self {
        Self::from_parts(&problem.phi, &problem.y)
    }

    pub fn from_parts(phi: &DMatrix<f64>, y: &DVector<f64>) -> Self {
        Self {
            gram: phi.tr_mul(phi),
            cross: phi.tr_mul(y),
            yy: y.norm_squared(),
            n: y.len(),
        }
    }

    pub fn d(&self) -> usize {
        self.cross.len()
    }

    /// Statistics after replacing `Y` by `Y + h·e_j`, where `phi_row` is row `j` of `Φ`.
    pub fn perturbed(&self, phi_row: &[f64], y_j: f64, h: f64) -> Self {
        let mut cross = self.cross.clone();
        for (c, v) in cross.iter_mut().zip(phi_row) {
            *c += h * v;
        }
        Self {
            gram: self.gram.clone(),
            cross,
            yy: self.yy + 2.0 * h * y_j + h * h,
            n: self.n,
        }
    }
}

/// Nonzero pattern of a covariance factor made of square blocks: block `k`
/// sits at rows `rows[k]..+size` and columns `k·size..+size`. Kernel
/// derivatives are then block diagonal on the same rows.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockLayout {
    pub size: usize,
    pub rows: Vec<usize>,
}

/// `K = LLᵀ` with an optional block pattern of `L`.
pub(crate) struct Factor<'a> {
    pub l: &'a DMatrix<f64>,
    pub layout: Option<&'a BlockLayout>,
}

impl Factor<'_> {
    pub fn dense(l: &DMatrix<f64>) -> Factor<'_> {
        Factor { l, layout: None }
    }

    fn blocks(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let b = self.layout.expect("layout present");
        b.rows.iter().enumerate().map(move |(k, &r)| (r, k * b.size, b.size))
    }

    /// `M·L` for a matrix with `d` columns.
    fn right_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.layout.is_none() {
            return m * self.l;
        }
        let mut out = DMatrix::zeros(m.nrows(), self.l.ncols());
        for (r, c, t) in self.blocks() {
            out.columns_mut(c, t).copy_from(&(m.columns(r, t) * self.l.view((r, c), (t, t))));
        }
        out
    }

    /// `Lᵀ·M` for a matrix with `d` rows.
    fn tr_left_mul(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        if self.layout.is_none() {
            return self.l.tr_mul(m);
        }
        let mut out = DMatrix::zeros(self.l.ncols(), m.ncols());
        for (r, c, t) in self.blocks() {
            out.rows_mut(c, t).copy_from(&self.l.view((r, c), (t, t)).tr_mul(&m.rows(r, t)));
        }
        out
    }

    fn tr_mul_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        if self.layout.is_none() {
            return self.l.tr_mul(v);
        }
        let mut out = DVector::zeros(self.l.ncols());
        for (r, c, t) in self.blocks() {
            out.rows_mut(c, t).copy_from(&self.l.view((r, c), (t, t)).tr_mul(&v.rows(r, t)));
        }
        out
    }
}

/// Evidence and posterior pieces for a prior `K = LLᵀ` given by its factor.
pub(crate) struct CovEval {
    pub logp: f64,
    /// `A = σ²I + LᵀGL`.
    pub chol_a: Cholesky<f64, Dyn>,
    /// `A⁻¹Lᵀb`.
    pub z: DVector<f64>,
    pub sigma2: f64,
    gl: DMatrix<f64>,
    c: DVector<f64>,
}

pub(crate) fn cov_eval(stats: &GramStats, f: &Factor, sigma2: f64) -> Result<CovEval> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!("noise variance {sigma2} must be positive")));
    }
    let r = f.l.ncols();
    let gl = f.right_mul(&stats.gram);
    let mut a = f.tr_left_mul(&gl);
    for i in 0..r {
        a[(i, i)] += sigma2;
    }
    let a = crate::linalg::symmetrize(&a);
    let chol_a = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("evidence system is not positive definite".into()))?;
    let c = f.tr_mul_vec(&stats.cross);
    let z = chol_a.solve(&c);
    let logdet_a = crate::linalg::chol_logdet(&chol_a);
    let n = stats.n as f64;
    let log_det_s = n * sigma2.ln() + logdet_a - r as f64 * sigma2.ln();
    let quad = (stats.yy - c.dot(&z)) / sigma2;
    let logp = -0.5 * (n * LN_2PI + log_det_s + quad);
    if !logp.is_finite() {
        return Err(Error::Numerical("non-finite log evidence".into()));
    }
    Ok(CovEval { logp, chol_a, z, sigma2, gl, c })
}

/// Quantities needed for covariance-form gradients:
/// `∂logp/∂θ = ½(vᵀ K_θ v − tr(M K_θ))`, `M = Φᵀ S⁻¹ Φ`.
pub(crate) struct CovGradient {
    pub v: DVector<f64>,
    /// `M` in full, or only its diagonal blocks when the kernel derivatives
    /// are block diagonal.
    m: MPart,
    /// `∂ logp / ∂ ln σ²`.
    pub dlog_sigma2: f64,
}

enum MPart {
    Full(DMatrix<f64>),
    Blocks { size: usize, blocks: Vec<(usize, DMatrix<f64>)> },
}

pub(crate) fn cov_gradient(stats: &GramStats, f: &Factor, ev: &CovEval) -> CovGradient {
    let s2 = ev.sigma2;
    let gl = &ev.gl;
    let r = f.l.ncols();
    let v = (&stats.cross - gl * &ev.z) / s2;
    let ainv = if r == 0 { DMatrix::zeros(0, 0) } else { ev.chol_a.inverse() };
    // A⁻¹LᵀG, r × d
    let x = &ainv * gl.transpose();
    let m = match f.layout {
        None => MPart::Full((&stats.gram - gl * &x) / s2),
        Some(b) => {
            let t = b.size;
            let blocks = b
                .rows
                .iter()
                .map(|&row| {
                    let g = stats.gram.view((row, row), (t, t));
                    (row, (g - gl.rows(row, t) * x.columns(row, t)) / s2)
                })
                .collect();
            MPart::Blocks { size: t, blocks }
        }
    };
    // ‖S⁻¹Y‖² and tr(S⁻¹) expressed through the r-dimensional system; Az = c.
    let resid2 = (stats.yy - ev.c.dot(&ev.z) - s2 * ev.z.norm_squared()) / (s2 * s2);
    let tr_sinv = (stats.n as f64 - r as f64 + s2 * ainv.trace()) / s2;
    CovGradient { v, m, dlog_sigma2: 0.5 * s2 * (resid2 - tr_sinv) }
}

impl CovGradient {
    pub fn directional(&self, dk: &DMatrix<f64>) -> f64 {
        match &self.m {
            MPart::Full(m) => {
                let quad = self.v.dot(&(dk * &self.v));
                0.5 * (quad - m.component_mul(dk).sum())
            }
            MPart::Blocks { size, blocks } => {
                let t = *size;
                let mut total = 0.0;
                for (row, m) in blocks {
                    let blk = dk.view((*row, *row), (t, t));
                    let vb = self.v.rows(*row, t);
                    total += vb.dot(&(blk * vb)) - m.component_mul(&blk).sum();
                }
                0.5 * total
            }
        }
    }
}

/// Evidence for a prior given by its precision `P`.
pub(crate) struct PrecEval {
    pub logp: f64,
    pub chol_b: Cholesky<f64, Dyn>,
    pub chol_p: Cholesky<f64, Dyn>,
    /// Posterior mean `(σ²P + G)⁻¹ b`.
    pub mean: DVector<f64>,
    pub sigma2: f64,
}

pub(crate) fn prec_eval(stats: &GramStats, p: &DMatrix<f64>, sigma2: f64) -> Result<PrecEval> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!("noise variance {sigma2} must be positive")));
    }
    let d = stats.d();
    let p = crate::linalg::symmetrize(p);
    let chol_p = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("prior precision is not positive definite".into()))?;
    let b = crate::linalg::symmetrize(&(&p * sigma2 + &stats.gram));
    let chol_b = b
        .cholesky()
        .ok_or_else(|| Error::Numerical("posterior precision is not positive definite".into()))?;
    let mean = chol_b.solve(&stats.cross);
    let n = stats.n as f64;
    let logdet = n * sigma2.ln() + crate::linalg::chol_logdet(&chol_b)
        - d as f64 * sigma2.ln()
        - crate::linalg::chol_logdet(&chol_p);
    let quad = (stats.yy - stats.cross.dot(&mean)) / sigma2;
    let logp = -0.5 * (n * LN_2PI + logdet + quad);
    if !logp.is_finite() {
        return Err(Error::Numerical("non-finite log evidence".into()));
    }
    Ok(PrecEval { logp, chol_b, chol_p, mean, sigma2 })
}

impl PrecEval {
    /// Inverses needed by the gradient, computed once per evaluation.
    pub fn gradient(&self) -> PrecGradient<'_> {
        PrecGradient { ev: self, binv: self.chol_b.inverse(), pinv: self.chol_p.inverse() }
    }
}

pub(crate) struct PrecGradient<'a> {
    ev: &'a PrecEval,
    binv: DMatrix<f64>,
    pinv: DMatrix<f64>,
}

impl PrecGradient<'_> {
    /// `∂ logp` along a precision direction `dP` (symmetric).
    pub fn directional(&self, dp: &DMatrix<f64>) -> f64 {
        let ev = self.ev;
        let q = ev.mean.dot(&(dp * &ev.mean));
        -0.5 * (ev.sigma2 * self.binv.dot(dp) - self.pinv.dot(dp) + q)
    }

    /// `∂ logp / ∂ ln σ²` for precision `p`.
    pub fn dlog_sigma2(&self, stats: &GramStats, p: &DMatrix<f64>) -> f64 {
        let ev = self.ev;
        let s = ev.sigma2;
        let n = stats.n as f64;
        let d = stats.d() as f64;
        let tr = self.binv.dot(p);
        let mpm = ev.mean.dot(&(p * &ev.mean));
        let resid = stats.yy - stats.cross.dot(&ev.mean);
        let df = n / s + tr - d / s + mpm / s - resid / (s * s);
        -0.5 * s * df
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{tc_beta_derivative, tc_factor};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    const T: usize = 4;

    fn stats(n: usize) -> GramStats {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
        let phi = DMatrix::from_fn(n, 2 * T, |_, _| draw());
        let y = DVector::from_fn(n, |_, _| draw());
        GramStats::from_parts(&phi, &y)
    }

    /// Block-diagonal TC factor with scales `s0`, `s1`.
    fn factor(s0: f64, s1: f64) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(2 * T, 2 * T);
        let f = tc_factor(T, 0.5, 1.0);
        l.view_mut((0, 0), (T, T)).copy_from(&(&f * s0.sqrt()));
        l.view_mut((T, T), (T, T)).copy_from(&(&f * s1.sqrt()));
        l
    }

    fn beta_direction() -> DMatrix<f64> {
        let mut dk = DMatrix::zeros(2 * T, 2 * T);
        dk.view_mut((T, T), (T, T)).copy_from(&tc_beta_derivative(T, 0.5, 1.0));
        dk
    }

    #[test]
    fn block_layout_matches_dense() {
        let st = stats(12);
        let l = factor(0.7, 2.0);
        let layout = BlockLayout { size: T, rows: vec![0, T] };
        let blocked = Factor { l: &l, layout: Some(&layout) };
        let a = cov_eval(&st, &Factor::dense(&l), 0.3).unwrap();
        let b = cov_eval(&st, &blocked, 0.3).unwrap();
        assert_relative_eq!(a.logp, b.logp, max_relative = 1e-12);
        let dk = beta_direction();
        let ga = cov_gradient(&st, &Factor::dense(&l), &a);
        let gb = cov_gradient(&st, &blocked, &b);
        assert_relative_eq!(ga.directional(&dk), gb.directional(&dk), max_relative = 1e-10);
        assert_relative_eq!(ga.dlog_sigma2, gb.dlog_sigma2, max_relative = 1e-10);
    }

    #[test]
    fn covariance_gradient_matches_differences() {
        // Few rows so that S is built from a rank-deficient ΦKΦᵀ as well.
        for n in [5, 20] {
            let st = stats(n);
            let l = factor(0.7, 2.0);
            let k = &l * l.transpose();
            let ev = cov_eval(&st, &Factor::dense(&l), 0.3).unwrap();
            let g = cov_gradient(&st, &Factor::dense(&l), &ev);
            let logp_k = |k: &DMatrix<f64>, s2: f64| {
                let lk = k.clone().cholesky().unwrap().l();
                cov_eval(&st, &Factor::dense(&lk), s2).unwrap().logp
            };
            let dk = beta_direction();
            let h = 1e-6;
            let fd = (logp_k(&(&k + &dk * h), 0.3) - logp_k(&(&k - &dk * h), 0.3)) / (2.0 * h);
            assert_relative_eq!(g.directional(&dk), fd, max_relative = 1e-6);
            let fd_s = (logp_k(&k, 0.3 * h.exp()) - logp_k(&k, 0.3 * (-h).exp())) / (2.0 * h);
            assert_relative_eq!(g.dlog_sigma2, fd_s, max_relative = 1e-6);
        }
    }

    #[test]
    fn precision_form_agrees_and_differentiates() {
        let st = stats(15);
        let l = factor(0.7, 2.0);
        let k = &l * l.transpose();
        let p = k.clone().try_inverse().unwrap();
        let cov = cov_eval(&st, &Factor::dense(&l), 0.3).unwrap();
        let prec = prec_eval(&st, &p, 0.3).unwrap();
        assert_relative_eq!(cov.logp, prec.logp, max_relative = 1e-10);
        assert!((&l * &cov.z - &prec.mean).amax() < 1e-9);

        let grad = prec.gradient();
        let dp = DMatrix::from_fn(2 * T, 2 * T, |i, j| if i == j { 1.0 + i as f64 } else { 0.1 });
        let h = 1e-6;
        let lp = |p: &DMatrix<f64>, s2: f64| prec_eval(&st, p, s2).unwrap().logp;
        let fd = (lp(&(&p + &dp * h), 0.3) - lp(&(&p - &dp * h), 0.3)) / (2.0 * h);
        assert_relative_eq!(grad.directional(&dp), fd, max_relative = 1e-6);
        let fd_s = (lp(&p, 0.3 * h.exp()) - lp(&p, 0.3 * (-h).exp())) / (2.0 * h);
        assert_relative_eq!(grad.dlog_sigma2(&st, &p), fd_s, max_relative = 1e-6);
    }

    #[test]
    fn perturbed_stats_match_recomputation() {
        let phi = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, -1.0, 3.0, 0.0]);
        let y = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let base = GramStats::from_parts(&phi, &y);
        let mut y2 = y.clone();
        y2[1] += 0.25;
        let direct = GramStats::from_parts(&phi, &y2);
        let row: Vec<f64> = phi.row(1).iter().copied().collect();
        let p = base.perturbed(&row, y[1], 0.25);
        assert!((p.cross - direct.cross).amax() < 1e-15);
        assert_relative_eq!(p.yy, direct.yy, max_relative = 1e-15);
    }

    #[test]
    fn rejects_bad_noise_variance() {
        let st = stats(6);
        let l = factor(1.0, 1.0);
        assert!(cov_eval(&st, &Factor::dense(&l), 0.0).is_err());
        assert!(prec_eval(&st, &DMatrix::identity(2 * T, 2 * T), f64::NAN).is_err());
    }
}
