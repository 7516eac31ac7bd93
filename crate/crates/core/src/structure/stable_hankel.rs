use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::hankel::HankelMap;
use crate::bayes::{
    empirical_bayes, empirical_bayes_from, Estimate, EvidenceProblem, KernelTemplate, NoisePolicy,
    OptimizerConfig, ShapePolicy,
};
use crate::error::{dim_err, param_err, Error, Result};
use crate::kernels::{tc_precision, KernelFamily, KernelMatrix, KernelSpec};
use crate::linalg::{sorted_svd, symmetrize};
use crate::model::FirRegression;

/// Gaussian prior with precision
/// `λ_s K_s⁻¹ + λ₁ Hᵀ(I ⊗ Π)H + λ₂ Hᵀ(I ⊗ Π⊥)H`, where `Π` projects onto the
/// columns of `U_n` in the row space of the block Hankel matrix.
#[derive(Debug, Clone)]
pub struct StableHankelSpec {
    pub ks: KernelMatrix,
    pub un: DMatrix<f64>,
    pub lambda_s: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub hankel: HankelMap,
}

impl StableHankelSpec {
    pub fn new(
        ks: KernelMatrix,
        un: DMatrix<f64>,
        [lambda_s, lambda1, lambda2]: [f64; 3],
        hankel: HankelMap,
    ) -> Result<Self> {
        if ks.dim() != hankel.dims.d() {
            return Err(dim_err("base kernel and Hankel map disagree on the number of coefficients"));
        }
        let rp = hankel.shape().0;
        if un.nrows() != rp || un.ncols() > rp {
            return Err(dim_err(format!("U_n must have {rp} rows and at most {rp} columns")));
        }
        let n = un.ncols();
        if (un.tr_mul(&un) - DMatrix::identity(n, n)).amax() > 1e-10 {
            return Err(param_err("U_n must have orthonormal columns"));
        }
        // Zero Hankel weights are accepted so the prior can collapse to K_s.
        if !(lambda_s > 0.0 && lambda_s.is_finite())
            || !(lambda1 >= 0.0 && lambda1.is_finite())
            || !(lambda2 >= 0.0 && lambda2.is_finite())
        {
            return Err(param_err("stable-Hankel weights must be finite, with λ_s > 0 and λ₁, λ₂ ≥ 0"));
        }
        Ok(Self { ks, un, lambda_s, lambda1, lambda2, hankel })
    }

    pub fn projector(&self) -> DMatrix<f64> {
        &self.un * self.un.transpose()
    }

    /// `J(g) = λ_s gᵀK_s⁻¹g + λ₁ tr(Π H Hᵀ) + λ₂ tr(Π⊥ H Hᵀ)`.
    pub fn penalty(&self, g: &DVector<f64>) -> Result<f64> {
        let h = self.hankel.apply(g)?;
        let ks_inv = kernel_precision(&self.ks)?;
        let pi_h = &self.un * self.un.tr_mul(&h);
        let on = pi_h.norm_squared();
        let off = (&h - &pi_h).norm_squared();
        Ok(self.lambda_s * g.dot(&(ks_inv * g)) + self.lambda1 * on + self.lambda2 * off)
    }

    /// The precision matrix `P` with `gᵀPg = J(g)`.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        let ks_inv = kernel_precision(&self.ks)?;
        let (on, off) = hankel_projection_grams(&self.hankel, &self.un);
        Ok(symmetrize(&(ks_inv * self.lambda_s + on * self.lambda1 + off * self.lambda2)))
    }
}

pub fn stable_hankel_penalty(g: &DVector<f64>, spec: &StableHankelSpec) -> Result<f64> {
    spec.penalty(g)
}

pub fn stable_hankel_precision(spec: &StableHankelSpec) -> Result<DMatrix<f64>> {
    spec.precision()
}

/// `Hᵀ(I ⊗ Π)H` and `Hᵀ(I ⊗ Π⊥)H` as explicit `d × d` matrices.
pub fn hankel_projection_grams(map: &HankelMap, un: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = map.dims.d();
    let (nr, nc) = map.shape();
    let hm = map.matrix();
    // Columns of (I ⊗ Uᵀ)H: each column of H reshaped, projected, flattened.
    let k = un.ncols();
    let mut w = DMatrix::zeros(k * nc, d);
    for q in 0..d {
        let hq = DMatrix::from_column_slice(nr, nc, hm.column(q).as_slice());
        let proj = un.tr_mul(&hq);
        w.column_mut(q).copy_from_slice(proj.as_slice());
    }
    let on = symmetrize(&w.tr_mul(&w));
    let full = DMatrix::from_diagonal(&map.multiplicity());
    let off = symmetrize(&(full - &on));
    (on, off)
}

/// Inverse of a kernel, exact for TC blocks and through a checked
/// factorization otherwise.
pub fn kernel_precision(k: &KernelMatrix) -> Result<DMatrix<f64>> {
    let spec = &k.spec;
    let family = spec.base.unwrap_or(spec.family);
    let t = spec.dims.lags;
    let tc_blocks = family == KernelFamily::Tc
        && matches!(spec.family, KernelFamily::Tc | KernelFamily::BlockDiagMimo)
        && spec.dims.d() == k.dim()
        && spec.scale.len() == spec.dims.channels()
        && (spec.shape.len() == 1 || spec.shape.len() == spec.dims.channels());
    if tc_blocks {
        let mut p = DMatrix::zeros(k.dim(), k.dim());
        for c in 0..spec.dims.channels() {
            let beta = if spec.shape.len() == 1 { spec.shape[0] } else { spec.shape[c] };
            let block = tc_precision(t, spec.scale[c], beta, spec.sample_time)?;
            p.view_mut((c * t, c * t), (t, t)).copy_from(&block);
        }
        return Ok(p);
    }
    let eig = SymmetricEigen::new(symmetrize(k.matrix()));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::Numerical(format!(
            "base kernel is singular (eigenvalues in [{min:.3e}, {max:.3e}])"
        )));
    }
    let inv = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    Ok(symmetrize(&(&eig.eigenvectors * inv * eig.eigenvectors.transpose())))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StableHankelConfig {
    /// Block rows and columns; the near-square shape when `None`.
    pub shape: Option<(usize, usize)>,
    pub n_max: usize,
    pub base_family: KernelFamily,
    pub noise: NoisePolicy,
    pub max_sweeps: usize,
    pub tol: f64,
    pub optimizer: OptimizerConfig,
}

impl Default for StableHankelConfig {
    fn default() -> Self {
        Self {
            shape: None,
            n_max: 4,
            base_family: KernelFamily::Tc,
            noise: NoisePolicy::ResidualPlugin,
            max_sweeps: 20,
            tol: 1e-5,
            optimizer: OptimizerConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StableHankelFit {
    pub estimate: Estimate,
    /// Selected subspace dimension.
    pub order: usize,
    /// Final log evidence for each `n = 1..`.
    pub evidence: Vec<f64>,
    /// `(λ_s, λ₁, λ₂)` at the selected order.
    pub weights: [f64; 3],
    pub sweeps: usize,
    /// Fit with the base kernel alone.
    pub base: Estimate,
}

struct OrderFit {
    estimate: Estimate,
    sweeps: usize,
}

/// Stable-Hankel identification: start from the base kernel alone, then
/// alternate between the Hankel subspace of the current estimate and an
/// evidence fit of the three weights; the subspace dimension is chosen by
/// the final evidence.
pub fn stable_hankel_identify(problem: &FirRegression, cfg: &StableHankelConfig) -> Result<StableHankelFit> {
    let dims = problem.dims;
    let map = match cfg.shape {
        Some((r, c)) => HankelMap::new(dims, r, c)?,
        None => HankelMap::square(dims)?,
    };
    if cfg.n_max == 0 {
        return Err(param_err("n_max must be at least 1"));
    }
    let template = KernelTemplate::Channels {
        family: cfg.base_family,
        dims,
        sample_time: 1.0,
        shared_scale: true,
        shape: ShapePolicy::Shared,
    };
    let ep0 = EvidenceProblem::new(problem, template, cfg.noise.clone())?;
    let base = empirical_bayes(&ep0, &cfg.optimizer)?;
    let sigma2 = base.hyperparams.sigma2;
    let lambda0 = match base.hyperparams.values[0] {
        v if v > 0.0 => v,
        _ => ep0.bounds()[0].0,
    };
    let shape = base.hyperparams.shapes();
    let mut unit = KernelSpec::scalar(cfg.base_family, dims.lags, 1.0, shape.clone());
    if dims.channels() > 1 {
        unit = KernelSpec {
            family: KernelFamily::BlockDiagMimo,
            scale: vec![1.0; dims.channels()],
            shape,
            dims,
            base: Some(cfg.base_family),
            components: Vec::new(),
            sample_time: 1.0,
        };
    }
    let ks = unit.build()?;
    let ks_inv = kernel_precision(&ks)?;
    let p_ref = 1.0 / lambda0;
    let bounds = vec![(1e-6 * p_ref, 1e6 * p_ref), (1e-8 * p_ref, 1e6 * p_ref), (1e-8 * p_ref, 1e6 * p_ref)];

    let n_top = cfg.n_max.min(map.shape().0).min(map.shape().1);
    let fits: Vec<Result<OrderFit>> = (1..=n_top)
        .into_par_iter()
        .map(|n| {
            let mut g = base.g_hat.as_vec().clone();
            let mut theta: Option<Vec<f64>> = None;
            let mut last = None;
            let mut sweeps = 0;
            for _ in 0..cfg.max_sweeps.max(1) {
                sweeps += 1;
                let svd = sorted_svd(&map.apply(&g)?);
                let un = svd.u.columns(0, n).into_owned();
                let (on, off) = hankel_projection_grams(&map, &un);
                let template = KernelTemplate::PrecisionSum { parts: vec![ks_inv.clone(), on, off] };
                let ep = EvidenceProblem::new(problem, template, NoisePolicy::Fixed(sigma2))?
                    .with_bounds(bounds.clone())?;
                let est = match &theta {
                    None => empirical_bayes(&ep, &cfg.optimizer)?,
                    Some(t) => empirical_bayes_from(&ep, t, &cfg.optimizer)?,
                };
                let g_new = est.g_hat.as_vec().clone();
                let change = (&g_new - &g).norm() / g.norm().max(f64::MIN_POSITIVE);
                theta = Some(est.hyperparams.values.clone());
                g = g_new;
                last = Some(est);
                if change < cfg.tol {
                    break;
                }
            }
            Ok(OrderFit { estimate: last.expect("at least one sweep"), sweeps })
        })
        .collect();

    let evidence: Vec<f64> = fits
        .iter()
        .map(|f| f.as_ref().map_or(f64::NEG_INFINITY, |f| f.estimate.log_evidence))
        .collect();
    let best = (0..fits.len())
        .filter(|&i| fits[i].is_ok())
        .max_by(|&a, &b| evidence[a].total_cmp(&evidence[b]).then(b.cmp(&a)))
        .ok_or_else(|| Error::Numerical("stable-Hankel evidence failed for every order".into()))?;
    let chosen = fits.into_iter().nth(best).expect("index in range")?;
    let v = &chosen.estimate.hyperparams.values;
    Ok(StableHankelFit {
        weights: [v[0], v[1], v[2]],
        order: best + 1,
        evidence,
        sweeps: chosen.sweeps,
        estimate: chosen.estimate,
        base,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::tc_kernel;
    use crate::model::{build_fir_regression, simulate_oe, Dims, ImpulseResponse, InitialConditions};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn spec(weights: [f64; 3]) -> StableHankelSpec {
        let dims = Dims::siso(7);
        let map = HankelMap::square(dims).unwrap();
        let g = DVector::from_fn(7, |k, _| 0.6f64.powi(k as i32));
        let u = sorted_svd(&map.apply(&g).unwrap()).u.columns(0, 1).into_owned();
        StableHankelSpec::new(tc_kernel(7, 1.0, 0.3, 1.0).unwrap(), u, weights, map).unwrap()
    }

    #[test]
    fn penalty_is_quadratic_form_of_precision() {
        let s = spec([1.0, 0.5, 20.0]);
        let p = s.precision().unwrap();
        let g = DVector::from_fn(7, |k, _| (k as f64 * 0.9).cos());
        assert_relative_eq!(s.penalty(&g).unwrap(), g.dot(&(&p * &g)), max_relative = 1e-10);
        // g lies in the selected subspace, so only λ_s and λ₁ act on it.
        let g1 = DVector::from_fn(7, |k, _| 0.6f64.powi(k as i32));
        let off_only = spec([1e-12, 0.0, 1.0]).penalty(&g1).unwrap();
        assert!(off_only < 1e-9);
    }

    #[test]
    fn projection_grams_split_multiplicity() {
        let s = spec([1.0, 1.0, 1.0]);
        let (on, off) = hankel_projection_grams(&s.hankel, &s.un);
        let total = DMatrix::from_diagonal(&s.hankel.multiplicity());
        assert!((on + off - total).amax() < 1e-12);
    }

    #[test]
    fn tc_precision_shortcut_matches_inverse() {
        let k = tc_kernel(6, 2.0, 0.4, 1.0).unwrap();
        let p = kernel_precision(&k).unwrap();
        assert!((k.matrix() * p - DMatrix::identity(6, 6)).amax() < 1e-8);
        let singular = KernelMatrix::from_matrix(DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.0]))).unwrap();
        assert!(kernel_precision(&singular).is_err());
    }

    #[test]
    fn spec_validation() {
        let s = spec([1.0, 1.0, 1.0]);
        let bad_u = DMatrix::from_element(s.un.nrows(), 1, 1.0);
        assert!(StableHankelSpec::new(s.ks.clone(), bad_u, [1.0, 1.0, 1.0], s.hankel).is_err());
        assert!(StableHankelSpec::new(s.ks.clone(), s.un.clone(), [0.0, 1.0, 1.0], s.hankel).is_err());
        assert!(StableHankelSpec::new(s.ks.clone(), s.un.clone(), [1.0, 0.0, 0.0], s.hankel).is_ok());
    }

    #[test]
    fn identify_reports_every_order() {
        let truth = ImpulseResponse::siso(&(0..12).map(|k| 0.7f64.powi(k)).collect::<Vec<_>>()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let u = DMatrix::from_fn(150, 1, |_, _| StandardNormal.sample(&mut rng));
        let data = simulate_oe(&truth, &u, 0.05, 7, 1.0).unwrap();
        let p = build_fir_regression(&data, 12, InitialConditions::ZeroPad).unwrap();
        let cfg = StableHankelConfig { n_max: 3, max_sweeps: 5, ..Default::default() };
        let fit = stable_hankel_identify(&p, &cfg).unwrap();
        assert_eq!(fit.evidence.len(), 3);
        assert!((1..=3).contains(&fit.order));
        let best = fit.evidence.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(fit.evidence[fit.order - 1], best);
        assert!(fit.estimate.log_evidence >= fit.base.log_evidence - 1e-6);
        assert!(stable_hankel_identify(&p, &StableHankelConfig { n_max: 0, ..cfg }).is_err());
    }
}
