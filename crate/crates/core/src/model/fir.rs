use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::data::{Dims, IODataset, ImpulseResponse};
use crate::error::{dim_err, param_err, Result};
use crate::linalg::sorted_svd;

/// How outputs whose regressors reach before the first sample are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialConditions {
    /// Unobserved past inputs are taken as zero; every output sample is used.
    #[default]
    ZeroPad,
    /// The first `T` output samples are dropped so every regressor is observed.
    Trim,
}

/// Linear regression `Y = Φ g + E` for an FIR model of length `T`.
///
/// `Y` stacks y(t) in time order (p entries per sample); columns of `Φ`
/// follow the channel-major vectorization of [`ImpulseResponse`].
#[derive(Debug, Clone)]
pub struct FirRegression {
    pub y: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub dims: Dims,
    /// Number of output samples that entered `Y`.
    pub samples: usize,
    /// 0-based index of the first output sample in `Y`.
    pub first_sample: usize,
    pub noise_variance: Option<f64>,
}

impl FirRegression {
    /// Wraps an explicit regression. Mostly useful for tests and for the
    /// direct-observation problems of the compound module.
    pub fn from_parts(y: DVector<f64>, phi: DMatrix<f64>, dims: Dims) -> Result<Self> {
        if phi.nrows() != y.len() {
            return Err(dim_err(format!("Phi has {} rows, Y has {}", phi.nrows(), y.len())));
        }
        if phi.ncols() != dims.d() {
            return Err(dim_err(format!("Phi has {} columns, d = {}", phi.ncols(), dims.d())));
        }
        if !y.len().is_multiple_of(dims.outputs) {
            return Err(dim_err("Y length must be a multiple of p"));
        }
        Ok(Self {
            samples: y.len() / dims.outputs,
            y,
            phi,
            dims,
            first_sample: 0,
            noise_variance: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn d(&self) -> usize {
        self.dims.d()
    }

    pub fn with_noise_variance(mut self, sigma2: f64) -> Self {
        self.noise_variance = Some(sigma2);
        self
    }

    pub fn predict(&self, g: &ImpulseResponse) -> DVector<f64> {
        &self.phi * g.as_vec()
    }

    pub fn rss(&self, g: &DVector<f64>) -> f64 {
        (&self.y - &self.phi * g).norm_squared()
    }
}

/// Assembles `Y` and `Φ` from lagged inputs.
pub fn build_fir_regression(
    data: &IODataset,
    lags: usize,
    handling: InitialConditions,
) -> Result<FirRegression> {
    let first = match handling {
        InitialConditions::ZeroPad => 0,
        InitialConditions::Trim => lags,
    };
    build_from(data, lags, first)
}

/// Regression using output samples `first..N` (0-based).
pub(crate) fn build_from(data: &IODataset, lags: usize, first: usize) -> Result<FirRegression> {
    if lags == 0 {
        return Err(param_err("FIR length T must be at least 1"));
    }
    let n = data.len();
    if first >= n {
        return Err(param_err(format!(
            "no output samples left: T = {lags} with N = {n} under the trim policy"
        )));
    }
    let dims = Dims::new(lags, data.n_outputs(), data.n_inputs());
    let (p, m) = (dims.outputs, dims.inputs);
    let samples = n - first;
    let u = data.inputs();
    let yd = data.outputs();
    let mut y = DVector::zeros(samples * p);
    let mut phi = DMatrix::zeros(samples * p, dims.d());
    for (row_t, t) in (first..n).enumerate() {
        for i in 0..p {
            let r = row_t * p + i;
            y[r] = yd[(t, i)];
            for j in 0..m {
                let base = dims.channel_index(i, j) * lags;
                // y(t) depends on u(t - k), k = 1..T; storage index t - k.
                for k in 1..=lags.min(t) {
                    phi[(r, base + k - 1)] = u[(t - k, j)];
                }
            }
        }
    }
    Ok(FirRegression {
        y,
        phi,
        dims,
        samples,
        first_sample: first,
        noise_variance: None,
    })
}

/// Output-error simulation: FIR convolution (zero initial conditions) plus
/// i.i.d. Gaussian noise of standard deviation `noise_std`.
pub fn simulate_oe(
    g: &ImpulseResponse,
    inputs: &DMatrix<f64>,
    noise_std: f64,
    seed: u64,
    sample_time: f64,
) -> Result<IODataset> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(param_err(format!("noise std must be nonnegative, got {noise_std}")));
    }
    let mut y = g.convolve(inputs)?;
    if noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Row-major draw order so the noise of sample t does not depend on p.
        for t in 0..y.nrows() {
            for i in 0..y.ncols() {
                let e: f64 = StandardNormal.sample(&mut rng);
                y[(t, i)] += noise_std * e;
            }
        }
    }
    IODataset::new(inputs.clone(), y, sample_time)
}

/// Unregularized least-squares fit.
#[derive(Debug, Clone)]
pub struct LsFit {
    pub response: ImpulseResponse,
    pub rank: usize,
    pub rank_deficient: bool,
}

/// Minimizer of ‖Y − Φg‖² via the SVD; minimum-norm when Φ is rank deficient.
pub fn least_squares(problem: &FirRegression) -> LsFit {
    let (g, rank) = min_norm_lstsq(&problem.phi, &problem.y);
    LsFit {
        response: ImpulseResponse::from_vec(problem.dims, g).expect("dimensions come from the problem"),
        rank,
        rank_deficient: rank < problem.d(),
    }
}

pub(crate) fn min_norm_lstsq(phi: &DMatrix<f64>, y: &DVector<f64>) -> (DVector<f64>, usize) {
    let svd = sorted_svd(phi);
    let smax = svd.s.iter().cloned().fold(0.0_f64, f64::max);
    let tol = phi.nrows().max(phi.ncols()) as f64 * f64::EPSILON * smax;
    let mut g = DVector::zeros(phi.ncols());
    let mut rank = 0;
    for i in 0..svd.s.len() {
        if smax > 0.0 && svd.s[i] > tol {
            let coef = svd.u.column(i).dot(y) / svd.s[i];
            g += svd.v.column(i) * coef;
            rank += 1;
        }
    }
    (g, rank)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OrderCriterion {
    Aic,
    Bic,
}

impl OrderCriterion {
    /// Per-parameter penalty `c(N)`.
    pub fn penalty(&self, n: usize) -> f64 {
        match self {
            OrderCriterion::Aic => 2.0,
            OrderCriterion::Bic => (n as f64).ln(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OrderSelection {
    pub order: usize,
    pub response: ImpulseResponse,
    /// Criterion value for T = 1..=T_max.
    pub criteria: Vec<f64>,
}

/// FIR order selection by `n·ln(RSS/n) + c(n)·pmT` over T = 1..=T_max.
///
/// Every candidate is scored on the same output samples: with `Trim` all
/// candidates drop the first `T_max` samples.
pub fn order_selection_baseline(
    data: &IODataset,
    max_lags: usize,
    criterion: OrderCriterion,
    handling: InitialConditions,
) -> Result<OrderSelection> {
    if max_lags == 0 {
        return Err(param_err("T_max must be at least 1"));
    }
    let first = match handling {
        InitialConditions::ZeroPad => 0,
        InitialConditions::Trim => max_lags,
    };
    let mut best: Option<(f64, usize, ImpulseResponse)> = None;
    let mut criteria = Vec::with_capacity(max_lags);
    for lags in 1..=max_lags {
        let problem = build_from(data, lags, first)?;
        let fit = least_squares(&problem);
        let n = problem.n_rows();
        // Exact fits would send ln(RSS) to -inf; floor at a relative level
        // far below any noise so that ties fall to the penalty.
        let floor = (1e-12 * problem.y.norm_squared()).max(f64::MIN_POSITIVE);
        let rss = problem.rss(fit.response.as_vec()).max(floor);
        let value = n as f64 * (rss / n as f64).ln()
            + criterion.penalty(n) * problem.dims.d() as f64;
        criteria.push(value);
        if best.as_ref().is_none_or(|(b, _, _)| value < *b) {
            best = Some((value, lags, fit.response));
        }
    }
    let (_, order, response) = best.expect("at least one candidate");
    Ok(OrderSelection { order, response, criteria })
}

/// Accuracy summary of an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// ‖g − ĝ‖²/d, when the true response is known.
    pub impulse_mse: Option<f64>,
    /// 100·(1 − ‖g − ĝ‖/‖g − mean(g)‖), when the true response is known.
    pub impulse_fit: Option<f64>,
    /// ‖Y_test − Ŷ‖²/(p·N_test).
    pub prediction_mse: f64,
    /// 100·(1 − ‖Y_test − Ŷ‖/‖Y_test − mean(Y_test)‖), means per output channel.
    pub fit_percent: f64,
    pub lags: usize,
    pub outputs: usize,
    pub inputs: usize,
}

/// Scores `estimate` against the true response (if known) and on `test_data`.
///
/// Responses of different lengths are compared after zero-extending the
/// shorter one.
pub fn fit_metrics(
    truth: Option<&ImpulseResponse>,
    estimate: &ImpulseResponse,
    test_data: &IODataset,
) -> Result<FitReport> {
    let dims = estimate.dims();
    if test_data.n_inputs() != dims.inputs || test_data.n_outputs() != dims.outputs {
        return Err(dim_err("test data channels do not match the estimate"));
    }
    let (impulse_mse, impulse_fit) = match truth {
        Some(g) => {
            let gd = g.dims();
            if gd.outputs != dims.outputs || gd.inputs != dims.inputs {
                return Err(dim_err("true response channels do not match the estimate"));
            }
            let lags = gd.lags.max(dims.lags);
            let gv = g.with_lags(lags).into_vec();
            let ev = estimate.with_lags(lags).into_vec();
            let err = (&gv - &ev).norm_squared();
            let mean = gv.mean();
            let spread = gv.map(|v| v - mean).norm();
            let fit = if spread > 0.0 { 100.0 * (1.0 - err.sqrt() / spread) } else { f64::NAN };
            (Some(err / gv.len() as f64), Some(fit))
        }
        None => (None, None),
    };
    let y_hat = estimate.convolve(test_data.inputs())?;
    let y = test_data.outputs();
    let resid = y - &y_hat;
    let mut centered = y.clone();
    for mut col in centered.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let spread = centered.norm();
    let fit_percent = if spread > 0.0 {
        100.0 * (1.0 - resid.norm() / spread)
    } else if resid.norm() == 0.0 {
        100.0
    } else {
        f64::NEG_INFINITY
    };
    Ok(FitReport {
        impulse_mse,
        impulse_fit,
        prediction_mse: resid.norm_squared() / resid.len() as f64,
        fit_percent,
        lags: dims.lags,
        outputs: dims.outputs,
        inputs: dims.inputs,
    })
}
