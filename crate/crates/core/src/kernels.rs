//! Prior covariance (kernel) families for impulse responses.
//!
//! Every scalar family lives on lags `k = 1..T`. Multivariable kernels are
//! assembled block-diagonally in the channel-major vectorization of
//! [`ImpulseResponse`](crate::model::ImpulseResponse).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, param_err, Error, Result};
use crate::linalg::{check_psd, max_asymmetry, symmetrize};
use crate::model::Dims;

/// Default number of terms in the truncated TC series expansion.
pub const DEFAULT_TC_BASIS_TERMS: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `(1/γ)·diag(1/k²)`; the scale field stores `1/γ`.
    AkaikeSmoothness,
    /// `λ·diag(ρ^{k-1})`, shape `[ρ]`.
    DiagExp,
    /// `λ·diag(1/k^α)`, shape `[α]`.
    PowerDecay,
    /// Tuned-correlated / first-order stable spline, shape `[β]`.
    Tc,
    /// One scalar block per (output, input) channel.
    BlockDiagMimo,
    /// Nonnegative combination of component kernels.
    ConicCombo,
    /// Covariance implied by a stable-Hankel precision; built by
    /// [`crate::structure::StableHankelSpec`], not from a plain spec.
    StableHankelPrecision,
}

impl KernelFamily {
    /// Number of shape parameters for the scalar families.
    pub fn shape_len(&self) -> usize {
        match self {
            KernelFamily::AkaikeSmoothness => 0,
            KernelFamily::DiagExp | KernelFamily::PowerDecay | KernelFamily::Tc => 1,
            _ => 0,
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(
            self,
            KernelFamily::AkaikeSmoothness
                | KernelFamily::DiagExp
                | KernelFamily::PowerDecay
                | KernelFamily::Tc
        )
    }

    pub fn check_shape(&self, shape: &[f64]) -> Result<()> {
        if shape.len() != self.shape_len() {
            return Err(param_err(format!(
                "{self:?} expects {} shape parameters, got {}",
                self.shape_len(),
                shape.len()
            )));
        }
        match self {
            KernelFamily::DiagExp if !(shape[0] > 0.0 && shape[0] < 1.0) => {
                Err(param_err(format!("decay rate rho must lie in (0, 1), got {}", shape[0])))
            }
            KernelFamily::PowerDecay if !(shape[0] > 1.0 && shape[0].is_finite()) => {
                Err(param_err(format!("power alpha must exceed 1, got {}", shape[0])))
            }
            KernelFamily::Tc if !(shape[0] > 0.0 && shape[0].is_finite()) => {
                Err(param_err(format!("decay beta must be positive, got {}", shape[0])))
            }
            _ => Ok(()),
        }
    }
}

fn default_sample_time() -> f64 {
    1.0
}

fn is_one(v: &f64) -> bool {
    *v == 1.0
}

/// Serializable description of a kernel: `{family, scale, shape, dims}`.
///
/// * scalar families: `scale = [λ]`, `dims.outputs = dims.inputs = 1`.
/// * `block_diag_mimo`: `scale` holds one λ per channel in column-major
///   (output, input) order. `base` names the scalar family and `shape` holds
///   either one shared shape vector or one per channel, concatenated. When
///   channels use different families, `components` lists one scalar spec per
///   channel instead (their own scales are ignored).
/// * `conic_combo`: `components` are combined with weights `scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub scale: Vec<f64>,
    #[serde(default)]
    pub shape: Vec<f64>,
    pub dims: Dims,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<KernelFamily>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub components: Vec<KernelSpec>,
    #[serde(default = "default_sample_time", skip_serializing_if = "is_one")]
    pub sample_time: f64,
}

impl KernelSpec {
    pub fn scalar(family: KernelFamily, lags: usize, scale: f64, shape: Vec<f64>) -> Self {
        Self {
            family,
            scale: vec![scale],
            shape,
            dims: Dims::siso(lags),
            base: None,
            components: Vec::new(),
            sample_time: 1.0,
        }
    }

    pub fn with_sample_time(mut self, sample_time: f64) -> Self {
        self.sample_time = sample_time;
        self
    }

    /// Realizes the kernel matrix.
    pub fn build(&self) -> Result<KernelMatrix> {
        match self.family {
            f if f.is_scalar() => {
                if self.dims.channels() != 1 {
                    return Err(dim_err("scalar kernel families need outputs = inputs = 1"));
                }
                let [scale] = self.scale[..] else {
                    return Err(param_err("scalar kernels take exactly one scale"));
                };
                let k = scalar_block(f, self.dims.lags, scale, &self.shape, self.sample_time)?;
                Ok(KernelMatrix::trusted(k, self.clone()))
            }
            KernelFamily::BlockDiagMimo if !self.components.is_empty() => {
                let channels = self.dims.channels();
                if self.components.len() != channels || self.scale.len() != channels {
                    return Err(dim_err(format!("expected {channels} channel components and scales")));
                }
                let t = self.dims.lags;
                let mut k = DMatrix::zeros(self.dims.d(), self.dims.d());
                for (c, comp) in self.components.iter().enumerate() {
                    if !comp.family.is_scalar() || comp.dims != Dims::siso(t) {
                        return Err(dim_err("every block must be a scalar kernel with the same T"));
                    }
                    let block = scalar_block(comp.family, t, self.scale[c], &comp.shape, comp.sample_time)?;
                    k.view_mut((c * t, c * t), (t, t)).copy_from(&block);
                }
                Ok(KernelMatrix::trusted(k, self.clone()))
            }
            KernelFamily::BlockDiagMimo => {
                let base = self
                    .base
                    .ok_or_else(|| param_err("block_diag_mimo needs a `base` scalar family"))?;
                if !base.is_scalar() {
                    return Err(param_err("block_diag_mimo base must be a scalar family"));
                }
                let channels = self.dims.channels();
                if self.scale.len() != channels {
                    return Err(dim_err(format!(
                        "expected {channels} channel scales, got {}",
                        self.scale.len()
                    )));
                }
                let sl = base.shape_len();
                let per_channel = self.shape.len() == sl * channels && channels > 1 && sl > 0;
                if !per_channel && self.shape.len() != sl {
                    return Err(dim_err("shape must be shared or given once per channel"));
                }
                let t = self.dims.lags;
                let mut k = DMatrix::zeros(self.dims.d(), self.dims.d());
                for c in 0..channels {
                    let shape = if per_channel { &self.shape[c * sl..(c + 1) * sl] } else { &self.shape[..] };
                    let block = scalar_block(base, t, self.scale[c], shape, self.sample_time)?;
                    k.view_mut((c * t, c * t), (t, t)).copy_from(&block);
                }
                Ok(KernelMatrix::trusted(k, self.clone()))
            }
            KernelFamily::ConicCombo => {
                let parts = self
                    .components
                    .iter()
                    .map(KernelSpec::build)
                    .collect::<Result<Vec<_>>>()?;
                let mut out = conic_combination(&parts, &self.scale)?;
                out.spec = self.clone();
                Ok(out)
            }
            KernelFamily::StableHankelPrecision => Err(Error::InvalidParameter(
                "stable-Hankel kernels depend on a subspace estimate; build them with structure::StableHankelSpec".into(),
            )),
            _ => unreachable!("scalar families handled above"),
        }
    }
}

/// A realized kernel: symmetric PSD `d×d` matrix plus the spec it came from.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    k: DMatrix<f64>,
    pub spec: KernelSpec,
}

impl KernelMatrix {
    /// Wraps an arbitrary matrix after symmetrizing it and checking it is PSD.
    pub fn new(k: DMatrix<f64>, spec: KernelSpec) -> Result<Self> {
        if !k.is_square() {
            return Err(dim_err("kernel must be square"));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(param_err("kernel contains non-finite entries"));
        }
        let scale = k.amax().max(f64::MIN_POSITIVE);
        if max_asymmetry(&k) > 1e-8 * scale {
            return Err(param_err("kernel is not symmetric"));
        }
        let k = symmetrize(&k);
        check_psd(&k)?;
        Ok(Self { k, spec })
    }

    /// Matrix that is PSD by construction.
    pub(crate) fn trusted(k: DMatrix<f64>, spec: KernelSpec) -> Self {
        Self { k, spec }
    }

    /// Convenience wrapper for an anonymous SISO-shaped matrix.
    pub fn from_matrix(k: DMatrix<f64>) -> Result<Self> {
        let d = k.nrows();
        let spec = KernelSpec {
            family: KernelFamily::ConicCombo,
            scale: vec![1.0],
            shape: Vec::new(),
            dims: Dims::siso(d),
            base: None,
            components: Vec::new(),
            sample_time: 1.0,
        };
        Self::new(k, spec)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.k.nrows()
    }

    pub fn check_psd(&self) -> Result<()> {
        check_psd(&self.k)
    }

    /// `factor·K`; every scale in the spec is multiplied too.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut spec = self.spec.clone();
        spec.scale.iter_mut().for_each(|s| *s *= factor);
        Self { k: &self.k * factor, spec }
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale > 0.0 && scale.is_finite() {
        Ok(())
    } else {
        Err(param_err(format!("scale must be positive, got {scale}")))
    }
}

/// Scalar block that also accepts a zero scale (an ARD-pruned channel).
pub(crate) fn scalar_block(
    family: KernelFamily,
    lags: usize,
    scale: f64,
    shape: &[f64],
    sample_time: f64,
) -> Result<DMatrix<f64>> {
    if lags == 0 {
        return Err(param_err("kernel needs T >= 1"));
    }
    if !(scale >= 0.0 && scale.is_finite()) {
        return Err(param_err(format!("scale must be nonnegative, got {scale}")));
    }
    family.check_shape(shape)?;
    let diag = |f: &dyn Fn(f64) -> f64| {
        DMatrix::from_diagonal(&DVector::from_fn(lags, |k, _| scale * f((k + 1) as f64)))
    };
    Ok(match family {
        KernelFamily::AkaikeSmoothness => diag(&|k| 1.0 / (k * k)),
        KernelFamily::DiagExp => {
            let rho = shape[0];
            diag(&|k| rho.powf(k - 1.0))
        }
        KernelFamily::PowerDecay => {
            let alpha = shape[0];
            diag(&|k| k.powf(-alpha))
        }
        KernelFamily::Tc => {
            if !(sample_time > 0.0 && sample_time.is_finite()) {
                return Err(param_err("sample time must be positive"));
            }
            let beta = shape[0];
            DMatrix::from_fn(lags, lags, |i, j| {
                let k = (i.max(j) + 1) as f64;
                scale * (-beta * k * sample_time).exp()
            })
        }
        _ => return Err(param_err(format!("{family:?} is not a scalar family"))),
    })
}

/// Akaike's frequency-smoothness prior `(1/γ)·diag(1, 1/4, …, 1/T²)`.
pub fn akaike_smoothness_kernel(lags: usize, gamma: f64) -> Result<KernelMatrix> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(param_err(format!("gamma must be positive, got {gamma}")));
    }
    KernelSpec::scalar(KernelFamily::AkaikeSmoothness, lags, 1.0 / gamma, Vec::new()).build()
}

/// Exponentially decaying white prior `λ·diag(1, ρ, …, ρ^{T-1})`.
pub fn diag_exp_kernel(lags: usize, scale: f64, rho: f64) -> Result<KernelMatrix> {
    check_scale(scale)?;
    KernelSpec::scalar(KernelFamily::DiagExp, lags, scale, vec![rho]).build()
}

/// Power-law variance decay `λ·diag(1/k^α)`, α > 1.
pub fn power_decay_kernel(lags: usize, scale: f64, alpha: f64) -> Result<KernelMatrix> {
    check_scale(scale)?;
    KernelSpec::scalar(KernelFamily::PowerDecay, lags, scale, vec![alpha]).build()
}

/// TC kernel `K[i,j] = λ·min(e^{-β i Tc}, e^{-β j Tc})`.
pub fn tc_kernel(lags: usize, scale: f64, beta: f64, sample_time: f64) -> Result<KernelMatrix> {
    check_scale(scale)?;
    KernelSpec::scalar(KernelFamily::Tc, lags, scale, vec![beta])
        .with_sample_time(sample_time)
        .build()
}

/// Upper-triangular `L` with `L Lᵀ` equal to the unit-scale TC kernel.
///
/// Follows the backward random-walk construction: g_k is the sum of
/// independent increments with variances `v_l − v_{l+1}`, `v_l = e^{-β l Tc}`.
pub(crate) fn tc_factor(lags: usize, beta: f64, sample_time: f64) -> DMatrix<f64> {
    let v = |l: usize| if l > lags { 0.0 } else { (-beta * l as f64 * sample_time).exp() };
    let inc: Vec<f64> = (1..=lags).map(|l| (v(l) - v(l + 1)).max(0.0).sqrt()).collect();
    DMatrix::from_fn(lags, lags, |r, c| if c >= r { inc[c] } else { 0.0 })
}

/// Entrywise derivative of the unit-scale TC kernel with respect to β.
pub(crate) fn tc_beta_derivative(lags: usize, beta: f64, sample_time: f64) -> DMatrix<f64> {
    DMatrix::from_fn(lags, lags, |i, j| {
        let k = (i.max(j) + 1) as f64 * sample_time;
        -k * (-beta * k).exp()
    })
}

/// Truncated series expansion `Σ ψ_i ψ_iᵀ` of a kernel.
#[derive(Debug, Clone)]
pub struct BasisExpansion {
    pub vectors: Vec<DVector<f64>>,
    /// `μ_i = ‖ψ_i‖₁`.
    pub weights_l1: Vec<f64>,
}

impl BasisExpansion {
    pub fn new(vectors: Vec<DVector<f64>>) -> Self {
        let weights_l1 = vectors.iter().map(|v| v.lp_norm(1)).collect();
        Self { vectors, weights_l1 }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// `Ψ = [ψ_0 … ψ_{B-1}]`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let t = self.vectors.first().map_or(0, |v| v.len());
        DMatrix::from_fn(t, self.len(), |r, c| self.vectors[c][r])
    }

    /// Partial sum over the first `terms` vectors.
    pub fn partial_gram(&self, terms: usize) -> DMatrix<f64> {
        let t = self.vectors.first().map_or(0, |v| v.len());
        let mut out = DMatrix::zeros(t, t);
        for v in self.vectors.iter().take(terms) {
            out.ger(1.0, v, v, 1.0);
        }
        out
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.partial_gram(self.len())
    }
}

/// Karhunen–Loève style expansion of the unit-scale TC kernel from the
/// random Fourier series of the time-warped Wiener process.
///
/// `ψ_0[k] = e^{-βkTc}`, `ψ_i[k] = √2·sin(πi·e^{-βkTc})/(πi)`, `k = 1..T`.
pub fn tc_basis(lags: usize, beta: f64, sample_time: f64, terms: usize) -> Result<BasisExpansion> {
    if terms == 0 || lags == 0 {
        return Err(param_err("tc_basis needs T >= 1 and B >= 1"));
    }
    KernelFamily::Tc.check_shape(&[beta])?;
    let warped: Vec<f64> = (1..=lags)
        .map(|k| (-beta * k as f64 * sample_time).exp())
        .collect();
    let mut vectors = Vec::with_capacity(terms);
    vectors.push(DVector::from_column_slice(&warped));
    for i in 1..terms {
        let w = std::f64::consts::PI * i as f64;
        vectors.push(DVector::from_iterator(
            lags,
            warped.iter().map(|&x| std::f64::consts::SQRT_2 * (w * x).sin() / w),
        ));
    }
    Ok(BasisExpansion::new(vectors))
}

/// Covariance of the backward AR(1) recursion on lags `1..T`:
/// `K[i,j] = c·λ^{max(i,j)}`.
pub fn ar1_kernel(lags: usize, c: f64, lambda_ar: f64) -> Result<KernelMatrix> {
    check_ar1(c, lambda_ar)?;
    let k = DMatrix::from_fn(lags, lags, |i, j| c * lambda_ar.powi((i.max(j) + 1) as i32));
    Ok(KernelMatrix::trusted(k, KernelSpec::scalar(KernelFamily::Tc, lags, c, vec![-lambda_ar.ln()])))
}

/// Tridiagonal inverse of [`ar1_kernel`], assembled from the increment
/// variances of the recursion.
pub fn ar1_precision(lags: usize, c: f64, lambda_ar: f64) -> Result<DMatrix<f64>> {
    check_ar1(c, lambda_ar)?;
    tc_precision(lags, c, -lambda_ar.ln(), 1.0)
}

/// Exact tridiagonal inverse of [`tc_kernel`].
pub fn tc_precision(lags: usize, scale: f64, beta: f64, sample_time: f64) -> Result<DMatrix<f64>> {
    check_scale(scale)?;
    KernelFamily::Tc.check_shape(&[beta])?;
    if lags == 0 {
        return Err(param_err("kernel needs T >= 1"));
    }
    let v = |k: usize| scale * (-beta * k as f64 * sample_time).exp();
    let mut p = DMatrix::zeros(lags, lags);
    // Increment between lags k and k+1 (1-based), precision a_k.
    for k in 1..lags {
        let a = 1.0 / (v(k) - v(k + 1));
        p[(k - 1, k - 1)] += a;
        p[(k, k)] += a;
        p[(k - 1, k)] -= a;
        p[(k, k - 1)] -= a;
    }
    p[(lags - 1, lags - 1)] += 1.0 / v(lags);
    Ok(p)
}

fn check_ar1(c: f64, lambda_ar: f64) -> Result<()> {
    check_scale(c)?;
    if !(lambda_ar > 0.0 && lambda_ar < 1.0) {
        return Err(param_err(format!("AR(1) pole must lie in (0, 1), got {lambda_ar}")));
    }
    Ok(())
}

/// Block-diagonal MIMO kernel from a `p×m` grid of scalar specs, `grid[i][j]`
/// describing the channel from input `j` to output `i`.
pub fn block_diag_mimo(grid: &[Vec<KernelSpec>]) -> Result<KernelMatrix> {
    let p = grid.len();
    let m = grid.first().map_or(0, |r| r.len());
    if p == 0 || m == 0 || grid.iter().any(|r| r.len() != m) {
        return Err(dim_err("channel grid must be a non-empty p×m array"));
    }
    let lags = grid[0][0].dims.lags;
    let dims = Dims::new(lags, p, m);
    let mut k = DMatrix::zeros(dims.d(), dims.d());
    let mut scales = vec![0.0; dims.channels()];
    for (i, row) in grid.iter().enumerate() {
        for (j, spec) in row.iter().enumerate() {
            if !spec.family.is_scalar() || spec.dims != Dims::siso(lags) {
                return Err(dim_err("every block must be a scalar kernel with the same T"));
            }
            let [scale] = spec.scale[..] else {
                return Err(param_err("scalar kernels take exactly one scale"));
            };
            let block = scalar_block(spec.family, lags, scale, &spec.shape, spec.sample_time)?;
            let c = dims.channel_index(i, j);
            k.view_mut((c * lags, c * lags), (lags, lags)).copy_from(&block);
            scales[c] = scale;
        }
    }
    let first = &grid[0][0];
    let same_family = grid.iter().flatten().all(|s| s.family == first.family && s.sample_time == first.sample_time);
    let spec = if !same_family {
        // Mixed families: keep every channel's spec, in channel order.
        let mut components = vec![first.clone(); dims.channels()];
        for (i, row) in grid.iter().enumerate() {
            for (j, s) in row.iter().enumerate() {
                components[dims.channel_index(i, j)] = s.clone();
            }
        }
        KernelSpec {
            family: KernelFamily::BlockDiagMimo,
            scale: scales,
            shape: Vec::new(),
            dims,
            base: None,
            components,
            sample_time: 1.0,
        }
    } else {
        let shared = grid.iter().flatten().all(|s| s.shape == first.shape);
        let mut shape = first.shape.clone();
        if !shared {
            let sl = first.family.shape_len();
            shape = vec![0.0; dims.channels() * sl];
            for (i, row) in grid.iter().enumerate() {
                for (j, s) in row.iter().enumerate() {
                    let c = dims.channel_index(i, j);
                    shape[c * sl..(c + 1) * sl].copy_from_slice(&s.shape);
                }
            }
        }
        KernelSpec {
            family: KernelFamily::BlockDiagMimo,
            scale: scales,
            shape,
            dims,
            base: Some(first.family),
            components: Vec::new(),
            sample_time: first.sample_time,
        }
    };
    Ok(KernelMatrix::trusted(k, spec))
}

/// `Σ w_i K_i` with nonnegative weights, not all zero.
pub fn conic_combination(kernels: &[KernelMatrix], weights: &[f64]) -> Result<KernelMatrix> {
    if kernels.is_empty() || kernels.len() != weights.len() {
        return Err(dim_err("need one weight per kernel"));
    }
    let d = kernels[0].dim();
    if kernels.iter().any(|k| k.dim() != d) {
        return Err(dim_err("kernels must share their dimension"));
    }
    if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
        return Err(param_err("conic weights must be nonnegative"));
    }
    if weights.iter().all(|w| *w == 0.0) {
        return Err(param_err("conic weights are all zero"));
    }
    let mut k = DMatrix::zeros(d, d);
    for (km, &w) in kernels.iter().zip(weights) {
        k += km.matrix() * w;
    }
    let spec = KernelSpec {
        family: KernelFamily::ConicCombo,
        scale: weights.to_vec(),
        shape: Vec::new(),
        dims: kernels[0].spec.dims,
        base: None,
        components: kernels.iter().map(|k| k.spec.clone()).collect(),
        sample_time: 1.0,
    };
    Ok(KernelMatrix::trusted(k, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn tc_factor_reproduces_kernel() {
        let l = tc_factor(12, 0.3, 0.5);
        let k = tc_kernel(12, 1.0, 0.3, 0.5).unwrap();
        assert!((&l * l.transpose() - k.matrix()).amax() < 1e-14);
    }

    #[test]
    fn tc_precision_is_inverse() {
        let k = tc_kernel(15, 2.0, 0.2, 1.0).unwrap();
        let p = tc_precision(15, 2.0, 0.2, 1.0).unwrap();
        assert!((k.matrix() * &p - DMatrix::identity(15, 15)).amax() < 1e-9);
        let p_ar = ar1_precision(15, 2.0, (-0.2f64).exp()).unwrap();
        assert!((p - p_ar).amax() < 1e-9);
    }

    #[test]
    fn beta_derivative_matches_differences() {
        let (b, h) = (0.4, 1e-6);
        let num = (tc_kernel(8, 1.0, b + h, 1.0).unwrap().into_matrix()
            - tc_kernel(8, 1.0, b - h, 1.0).unwrap().into_matrix())
            / (2.0 * h);
        assert!((num - tc_beta_derivative(8, b, 1.0)).amax() < 1e-8);
    }

    #[test]
    fn shape_validation() {
        assert!(diag_exp_kernel(5, 1.0, 1.0).is_err());
        assert!(power_decay_kernel(5, 1.0, 1.0).is_err());
        assert!(tc_kernel(5, 1.0, 0.0, 1.0).is_err());
        assert!(tc_kernel(5, 0.0, 0.1, 1.0).is_err());
        assert!(akaike_smoothness_kernel(5, -1.0).is_err());
        assert!(KernelSpec::scalar(KernelFamily::Tc, 0, 1.0, vec![0.1]).build().is_err());
    }

    #[test]
    fn diagonal_families() {
        let k = diag_exp_kernel(4, 2.0, 0.5).unwrap();
        assert_relative_eq!(k.matrix()[(3, 3)], 2.0 * 0.125);
        let a = akaike_smoothness_kernel(4, 4.0).unwrap();
        assert_relative_eq!(a.matrix()[(1, 1)], 0.25 / 4.0);
        assert_relative_eq!(a.spec.scale[0], 0.25);
    }

    #[test]
    fn spec_json_round_trip() {
        let tc = KernelSpec::scalar(KernelFamily::Tc, 6, 1.5, vec![0.3]).with_sample_time(0.1);
        let pd = KernelSpec::scalar(KernelFamily::PowerDecay, 6, 0.5, vec![2.5]);
        let bd = block_diag_mimo(&[vec![tc.clone(), pd.clone()]]).unwrap();
        let conic = conic_combination(&[tc.build().unwrap(), pd.build().unwrap()], &[1.0, 3.0]).unwrap();
        for k in [tc.build().unwrap(), bd, conic] {
            let json = serde_json::to_string(&k.spec).unwrap();
            let spec: KernelSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(spec, k.spec);
            assert!((spec.build().unwrap().into_matrix() - k.matrix()).amax() < 1e-15);
        }
    }

    #[test]
    fn block_diag_layout() {
        let s = |l| KernelSpec::scalar(KernelFamily::DiagExp, 3, l, vec![0.5]);
        let k = block_diag_mimo(&[vec![s(1.0), s(2.0)], vec![s(3.0), s(4.0)]]).unwrap();
        let dims = k.spec.dims;
        for (i, j, l) in [(0, 0, 1.0), (1, 0, 3.0), (0, 1, 2.0), (1, 1, 4.0)] {
            let c = dims.channel_index(i, j);
            assert_eq!(k.matrix()[(3 * c, 3 * c)], l);
            assert_eq!(k.spec.scale[c], l);
        }
        assert!(block_diag_mimo(&[vec![s(1.0)], vec![]]).is_err());
    }

    #[test]
    fn conic_rejects_bad_weights() {
        let k = tc_kernel(3, 1.0, 0.1, 1.0).unwrap();
        assert!(conic_combination(std::slice::from_ref(&k), &[-1.0]).is_err());
        assert!(conic_combination(std::slice::from_ref(&k), &[0.0]).is_err());
        assert!(conic_combination(&[k], &[]).is_err());
    }

    #[test]
    fn scaled_keeps_spec_consistent() {
        let k = tc_kernel(4, 2.0, 0.1, 1.0).unwrap().scaled(0.5);
        assert_relative_eq!(k.spec.scale[0], 1.0);
        assert!((k.spec.build().unwrap().into_matrix() - k.matrix()).amax() < 1e-15);
    }

    #[test]
    fn basis_gram_converges() {
        let k = tc_kernel(10, 1.0, 0.2, 1.0).unwrap();
        let err = |b| (tc_basis(10, 0.2, 1.0, b).unwrap().gram() - k.matrix()).norm();
        assert!(err(200) < err(20) && err(20) < err(2));
        assert!(err(2000) < 1e-2 * k.matrix().norm());
    }

    #[test]
    fn new_rejects_asymmetric_and_indefinite() {
        assert!(KernelMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0])).is_err());
        assert!(KernelMatrix::from_matrix(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])).is_err());
        assert!(KernelMatrix::from_matrix(DMatrix::identity(2, 2)).is_ok());
    }
}
