//! Parameterized prior families whose hyperparameters are tuned by evidence
//! maximization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::evidence::{BlockLayout, GramStats};
use crate::error::{dim_err, param_err, Result};
use crate::kernels::{scalar_block, tc_beta_derivative, tc_factor, KernelFamily, KernelMatrix};
use crate::linalg::psd_factor;
use crate::model::Dims;

/// What a hyperparameter means; decides its search transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    /// Kernel scale λ ≥ 0, searched in `ln λ`; may be pruned to exactly zero.
    Scale,
    /// TC decay β > 0, searched in `ln β`.
    Beta,
    /// Diagonal decay ρ ∈ (0,1), searched in `logit ρ`.
    Rho,
    /// Power α > 1, searched in `ln(α − 1)`.
    Alpha,
    /// Weight of a precision component, searched in log.
    PrecisionWeight,
    /// Noise variance σ², searched in log.
    NoiseVariance,
}

impl ParamKind {
    pub fn to_search(self, v: f64) -> f64 {
        match self {
            ParamKind::Rho => (v / (1.0 - v)).ln(),
            ParamKind::Alpha => (v - 1.0).ln(),
            _ => v.ln(),
        }
    }

    pub fn from_search(self, x: f64) -> f64 {
        match self {
            ParamKind::Rho => 1.0 / (1.0 + (-x).exp()),
            ParamKind::Alpha => 1.0 + x.exp(),
            _ => x.exp(),
        }
    }

    /// `d value / d search coordinate`.
    pub fn jacobian(self, v: f64) -> f64 {
        match self {
            ParamKind::Rho => v * (1.0 - v),
            ParamKind::Alpha => v - 1.0,
            _ => v,
        }
    }
}

/// How the shape hyperparameters of a [`KernelTemplate::Channels`] prior are tied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapePolicy {
    /// One shape vector for all channels.
    Shared,
    /// Separate shape per channel.
    PerChannel,
    /// Held at the given value.
    Fixed(Vec<f64>),
}

/// A prior family with free hyperparameters.
#[derive(Debug, Clone)]
pub enum KernelTemplate {
    /// No free hyperparameters.
    Fixed { kernel: KernelMatrix },
    /// `λ·K̄` with a fixed shape matrix `K̄`.
    Scaled { base: KernelMatrix },
    /// Block-diagonal scalar family over the channels of `dims`.
    Channels {
        family: KernelFamily,
        dims: Dims,
        sample_time: f64,
        shared_scale: bool,
        shape: ShapePolicy,
    },
    /// Prior precision `Σ λ_i P_i` with every weight free.
    PrecisionSum { parts: Vec<DMatrix<f64>> },
}

/// A prior instantiated at concrete hyperparameters.
pub(crate) enum Prior {
    /// `K = LLᵀ`; `dk[i]` is `∂K` along search coordinate `i` when requested.
    Cov { l: DMatrix<f64>, dk: Vec<DMatrix<f64>>, layout: Option<BlockLayout> },
    Prec { p: DMatrix<f64>, dp: Vec<DMatrix<f64>> },
}

impl KernelTemplate {
    /// Single TC kernel (shared across channels) with free scale and decay.
    pub fn tc(dims: Dims, sample_time: f64) -> Self {
        KernelTemplate::Channels {
            family: KernelFamily::Tc,
            dims,
            sample_time,
            shared_scale: true,
            shape: ShapePolicy::Shared,
        }
    }

    /// Per-channel scales with a shared shape, the ARD configuration.
    pub fn ard(family: KernelFamily, dims: Dims, sample_time: f64) -> Self {
        KernelTemplate::Channels {
            family,
            dims,
            sample_time,
            shared_scale: false,
            shape: ShapePolicy::Shared,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            KernelTemplate::Fixed { kernel } => kernel.dim(),
            KernelTemplate::Scaled { base } => base.dim(),
            KernelTemplate::Channels { dims, .. } => dims.d(),
            KernelTemplate::PrecisionSum { parts } => parts.first().map_or(0, |p| p.nrows()),
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            KernelTemplate::Channels { family, dims, sample_time, shape, .. } => {
                if !family.is_scalar() {
                    return Err(param_err(format!("{family:?} cannot be used per channel")));
                }
                if dims.d() == 0 {
                    return Err(dim_err("template has no coefficients"));
                }
                if !(*sample_time > 0.0 && sample_time.is_finite()) {
                    return Err(param_err("sample time must be positive"));
                }
                if let ShapePolicy::Fixed(s) = shape {
                    family.check_shape(s)?;
                }
                Ok(())
            }
            KernelTemplate::PrecisionSum { parts } => {
                let d = self.dim();
                if parts.is_empty() || parts.iter().any(|p| p.nrows() != d || p.ncols() != d) {
                    return Err(dim_err("precision parts must be non-empty and square of equal size"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Kinds of the free hyperparameters, in vector order.
    pub fn kinds(&self) -> Vec<ParamKind> {
        match self {
            KernelTemplate::Fixed { .. } => vec![],
            KernelTemplate::Scaled { .. } => vec![ParamKind::Scale],
            KernelTemplate::Channels { family, dims, shared_scale, shape, .. } => {
                let c = dims.channels();
                let mut k = vec![ParamKind::Scale; if *shared_scale { 1 } else { c }];
                let shape_kind = match family {
                    KernelFamily::Tc => ParamKind::Beta,
                    KernelFamily::DiagExp => ParamKind::Rho,
                    _ => ParamKind::Alpha,
                };
                let n_shape = match shape {
                    ShapePolicy::Shared => family.shape_len(),
                    ShapePolicy::PerChannel => c * family.shape_len(),
                    ShapePolicy::Fixed(_) => 0,
                };
                k.extend(std::iter::repeat_n(shape_kind, n_shape));
                k
            }
            KernelTemplate::PrecisionSum { parts } => vec![ParamKind::PrecisionWeight; parts.len()],
        }
    }

    /// Representative shape used for default bounds and scale references.
    fn reference_shape(family: KernelFamily, sample_time: f64) -> Vec<f64> {
        match family {
            KernelFamily::Tc => {
                let (lo, hi) = default_bounds_shape(ParamKind::Beta, sample_time);
                vec![(lo * hi).sqrt()]
            }
            KernelFamily::DiagExp => vec![0.9],
            KernelFamily::PowerDecay => vec![2.0],
            _ => vec![],
        }
    }

    /// Default natural-unit box for each hyperparameter, scaled to the data.
    pub(crate) fn default_bounds(&self, stats: &GramStats) -> Vec<(f64, f64)> {
        let unit_trace = |k: &DMatrix<f64>| stats.gram.component_mul(k).sum();
        let energy = stats.yy.max(f64::MIN_POSITIVE);
        match self {
            KernelTemplate::Fixed { .. } => vec![],
            KernelTemplate::Scaled { base } => {
                let r = energy / unit_trace(base.matrix()).max(f64::MIN_POSITIVE);
                vec![(1e-10 * r, 1e4 * r)]
            }
            KernelTemplate::Channels { family, dims, sample_time, shape, .. } => {
                let refshape = match shape {
                    ShapePolicy::Fixed(s) => s.clone(),
                    _ => Self::reference_shape(*family, *sample_time),
                };
                let t = dims.lags;
                let block = scalar_block(*family, t, 1.0, &refshape, *sample_time)
                    .unwrap_or_else(|_| DMatrix::identity(t, t));
                let mut tr = 0.0;
                for c in 0..dims.channels() {
                    let g = stats.gram.view((c * t, c * t), (t, t));
                    tr += g.component_mul(&block).sum();
                }
                let r = energy / tr.max(f64::MIN_POSITIVE);
                self.kinds()
                    .into_iter()
                    .map(|k| match k {
                        ParamKind::Scale => (1e-10 * r, 1e4 * r),
                        other => default_bounds_shape(other, *sample_time),
                    })
                    .collect()
            }
            KernelTemplate::PrecisionSum { parts } => {
                let p_ref = stats.gram.trace() / energy;
                vec![(1e-8 * p_ref, 1e8 * p_ref); parts.len()]
            }
        }
    }

    /// Prior at natural hyperparameters `theta`; derivatives are taken along
    /// the search coordinates of every entry with a nonzero value.
    pub(crate) fn instantiate(&self, theta: &[f64], with_derivs: bool) -> Result<Prior> {
        match self {
            KernelTemplate::Fixed { kernel } => Ok(Prior::Cov { l: psd_factor(kernel.matrix()), dk: vec![], layout: None }),
            KernelTemplate::Scaled { base } => {
                let lam = theta[0];
                let l = psd_factor(base.matrix()) * lam.max(0.0).sqrt();
                let dk = if with_derivs { vec![base.matrix() * lam] } else { vec![] };
                Ok(Prior::Cov { l, dk, layout: None })
            }
            KernelTemplate::Channels { family, dims, sample_time, shared_scale, shape } => {
                self.channels_prior(*family, *dims, *sample_time, *shared_scale, shape, theta, with_derivs)
            }
            KernelTemplate::PrecisionSum { parts } => {
                let d = self.dim();
                let mut p = DMatrix::zeros(d, d);
                for (part, &w) in parts.iter().zip(theta) {
                    p += part * w;
                }
                let dp = if with_derivs {
                    parts.iter().zip(theta).map(|(part, &w)| part * w).collect()
                } else {
                    vec![]
                };
                Ok(Prior::Prec { p, dp })
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn channels_prior(
        &self,
        family: KernelFamily,
        dims: Dims,
        sample_time: f64,
        shared_scale: bool,
        shape: &ShapePolicy,
        theta: &[f64],
        with_derivs: bool,
    ) -> Result<Prior> {
        let c_count = dims.channels();
        let t = dims.lags;
        let d = dims.d();
        let n_scale = if shared_scale { 1 } else { c_count };
        let sl = family.shape_len();
        let scale_of = |c: usize| theta[if shared_scale { 0 } else { c }];
        let shape_index = |c: usize| -> Option<usize> {
            match shape {
                ShapePolicy::Shared => Some(n_scale),
                ShapePolicy::PerChannel => Some(n_scale + c * sl),
                ShapePolicy::Fixed(_) => None,
            }
        };
        let shape_of = |c: usize| -> Vec<f64> {
            match (shape, shape_index(c)) {
                (ShapePolicy::Fixed(s), _) => s.clone(),
                (_, Some(i)) => theta[i..i + sl].to_vec(),
                _ => vec![],
            }
        };

        let active: Vec<usize> = (0..c_count).filter(|&c| scale_of(c) > 0.0).collect();
        let mut l = DMatrix::zeros(d, active.len() * t);
        let mut dk = if with_derivs { vec![DMatrix::zeros(d, d); theta.len()] } else { vec![] };
        for (col, &c) in active.iter().enumerate() {
            let lam = scale_of(c);
            let sh = shape_of(c);
            family.check_shape(&sh)?;
            let unit = scalar_block(family, t, 1.0, &sh, sample_time)?;
            let factor = match family {
                KernelFamily::Tc => tc_factor(t, sh[0], sample_time),
                _ => DMatrix::from_diagonal(&unit.diagonal().map(f64::sqrt)),
            };
            l.view_mut((c * t, col * t), (t, t)).copy_from(&(factor * lam.sqrt()));
            if !with_derivs {
                continue;
            }
            let si = if shared_scale { 0 } else { c };
            let mut blk = dk[si].view_mut((c * t, c * t), (t, t));
            blk += &unit * lam;
            if let Some(i) = shape_index(c) {
                let x = sh[0];
                let dunit = match family {
                    KernelFamily::Tc => tc_beta_derivative(t, x, sample_time),
                    KernelFamily::DiagExp => DMatrix::from_diagonal(&DVector::from_fn(t, |k, _| {
                        if k == 0 { 0.0 } else { k as f64 * x.powi(k as i32 - 1) }
                    })),
                    KernelFamily::PowerDecay => DMatrix::from_diagonal(&DVector::from_fn(t, |k, _| {
                        let kk = (k + 1) as f64;
                        -kk.ln() * kk.powf(-x)
                    })),
                    _ => continue,
                };
                let kind = self.kinds()[i];
                let mut blk = dk[i].view_mut((c * t, c * t), (t, t));
                blk += dunit * (lam * kind.jacobian(x));
            }
        }
        let layout = Some(BlockLayout { size: t, rows: active.iter().map(|&c| c * t).collect() });
        Ok(Prior::Cov { l, dk, layout })
    }
}

/// Default box for shape parameters.
pub(crate) fn default_bounds_shape(kind: ParamKind, sample_time: f64) -> (f64, f64) {
    match kind {
        ParamKind::Beta => (1e-3 / sample_time, 5.0 / sample_time),
        ParamKind::Rho => (0.01, 0.999),
        ParamKind::Alpha => (1.01, 10.0),
        _ => (1e-8, 1e8),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn search_transforms_round_trip() {
        for (kind, v) in [
            (ParamKind::Scale, 0.3),
            (ParamKind::Beta, 2.0),
            (ParamKind::Rho, 0.8),
            (ParamKind::Alpha, 2.5),
            (ParamKind::NoiseVariance, 1e-3),
        ] {
            let x = kind.to_search(v);
            assert_relative_eq!(kind.from_search(x), v, max_relative = 1e-12);
            let h = 1e-6;
            let fd = (kind.from_search(x + h) - kind.from_search(x - h)) / (2.0 * h);
            assert_relative_eq!(kind.jacobian(v), fd, max_relative = 1e-7);
        }
    }

    #[test]
    fn kinds_follow_tying() {
        let dims = Dims::new(5, 2, 2);
        let ard = KernelTemplate::ard(KernelFamily::Tc, dims, 1.0);
        assert_eq!(ard.kinds(), [vec![ParamKind::Scale; 4], vec![ParamKind::Beta]].concat());
        assert_eq!(KernelTemplate::tc(dims, 1.0).kinds(), vec![ParamKind::Scale, ParamKind::Beta]);
        let per = KernelTemplate::Channels {
            family: KernelFamily::DiagExp,
            dims,
            sample_time: 1.0,
            shared_scale: true,
            shape: ShapePolicy::PerChannel,
        };
        assert_eq!(per.kinds().len(), 5);
        let fixed = KernelTemplate::Channels {
            family: KernelFamily::AkaikeSmoothness,
            dims,
            sample_time: 1.0,
            shared_scale: false,
            shape: ShapePolicy::Fixed(vec![]),
        };
        assert_eq!(fixed.kinds(), vec![ParamKind::Scale; 4]);
        assert_eq!(ard.dim(), 20);
    }

    #[test]
    fn validation_rejects_bad_templates() {
        let dims = Dims::siso(4);
        let bad_family = KernelTemplate::Channels {
            family: KernelFamily::ConicCombo,
            dims,
            sample_time: 1.0,
            shared_scale: true,
            shape: ShapePolicy::Shared,
        };
        assert!(bad_family.validate().is_err());
        let bad_shape = KernelTemplate::Channels {
            family: KernelFamily::Tc,
            dims,
            sample_time: 1.0,
            shared_scale: true,
            shape: ShapePolicy::Fixed(vec![-1.0]),
        };
        assert!(bad_shape.validate().is_err());
        let parts = KernelTemplate::PrecisionSum { parts: vec![DMatrix::identity(3, 3), DMatrix::identity(4, 4)] };
        assert!(parts.validate().is_err());
    }

    #[test]
    fn channel_prior_factor_matches_kernel() {
        let dims = Dims::new(4, 1, 2);
        let ard = KernelTemplate::ard(KernelFamily::Tc, dims, 1.0);
        let theta = [0.5, 2.0, 0.3];
        let Prior::Cov { l, dk, layout } = ard.instantiate(&theta, true).unwrap() else {
            panic!("channel templates are covariance priors");
        };
        let mut k = DMatrix::zeros(8, 8);
        k.view_mut((0, 0), (4, 4)).copy_from(&scalar_block(KernelFamily::Tc, 4, 0.5, &[0.3], 1.0).unwrap());
        k.view_mut((4, 4), (4, 4)).copy_from(&scalar_block(KernelFamily::Tc, 4, 2.0, &[0.3], 1.0).unwrap());
        assert!((&l * l.transpose() - &k).amax() < 1e-12);
        assert_eq!(dk.len(), 3);
        assert_eq!(layout.map(|b| b.size), Some(4));
    }
}
