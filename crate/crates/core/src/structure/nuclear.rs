use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::hankel::HankelMap;
use crate::error::{param_err, Result};
use crate::linalg::{nuclear_norm, svt};
use crate::model::{min_norm_lstsq, FirRegression, ImpulseResponse};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NuclearNormConfig {
    pub max_iter: usize,
    /// Stop when an accepted step changes the objective by less than this, relatively.
    pub tol: f64,
    pub inner_iter: usize,
    pub inner_tol: f64,
}

impl Default for NuclearNormConfig {
    fn default() -> Self {
        Self { max_iter: 2000, tol: 1e-8, inner_iter: 200, inner_tol: 1e-11 }
    }
}

#[derive(Debug, Clone)]
pub struct NuclearNormFit {
    pub response: ImpulseResponse,
    pub objective: f64,
    /// Objective after every outer iteration, starting with the initial point.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

struct Objective<'a> {
    gram: DMatrix<f64>,
    cross: DVector<f64>,
    yy: f64,
    map: &'a HankelMap,
    eta: f64,
}

impl Objective<'_> {
    fn smooth(&self, g: &DVector<f64>) -> f64 {
        (self.yy - 2.0 * self.cross.dot(g) + g.dot(&(&self.gram * g))).max(0.0)
    }

    fn grad(&self, g: &DVector<f64>) -> DVector<f64> {
        (&self.gram * g - &self.cross) * 2.0
    }

    fn total(&self, g: &DVector<f64>) -> f64 {
        let pen = if self.eta == 0.0 { 0.0 } else { self.eta * nuclear_norm(&self.map.apply(g).expect("sized")) };
        self.smooth(g) + pen
    }
}

/// Inexact proximal step `argmin ½‖g − v‖² + τ‖H(g)‖_*`, by ADMM on the
/// split `X = H(g)`. `HᵀH` is diagonal, so the `g` update is explicit.
struct HankelProx<'a> {
    map: &'a HankelMap,
    mult: DVector<f64>,
    x: DMatrix<f64>,
    u: DMatrix<f64>,
}

impl<'a> HankelProx<'a> {
    fn new(map: &'a HankelMap, g0: &DVector<f64>) -> Self {
        let x = map.apply(g0).expect("sized");
        let u = DMatrix::zeros(x.nrows(), x.ncols());
        Self { map, mult: map.multiplicity(), x, u }
    }

    fn solve(&mut self, v: &DVector<f64>, tau: f64, iters: usize, tol: f64) -> DVector<f64> {
        let rho = 1.0;
        let mut g = v.clone();
        for _ in 0..iters {
            let rhs = v + self.map.adjoint(&(&self.x - &self.u)).expect("sized") * rho;
            g = DVector::from_fn(v.len(), |i, _| rhs[i] / (1.0 + rho * self.mult[i]));
            let hg = self.map.apply(&g).expect("sized");
            let x_old = std::mem::replace(&mut self.x, svt(&(&hg + &self.u), tau / rho));
            let primal = &hg - &self.x;
            self.u += &primal;
            let scale = hg.norm().max(self.x.norm()).max(1e-300);
            let dual = (&self.x - x_old).norm() * rho;
            if primal.norm() <= tol * scale && dual <= tol * scale.max(self.u.norm()) {
                break;
            }
        }
        g
    }
}

/// Minimize `‖Y − Φg‖² + η‖H(g)‖_*` by monotone accelerated proximal
/// gradient with backtracking, started from least squares. Each accepted
/// iterate never increases the objective.
pub fn nuclear_norm_identify(
    problem: &FirRegression,
    eta: f64,
    map: &HankelMap,
    cfg: &NuclearNormConfig,
) -> Result<NuclearNormFit> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(param_err(format!("penalty weight must be nonnegative, got {eta}")));
    }
    if map.dims != problem.dims {
        return Err(param_err("Hankel map and regression have different dimensions"));
    }
    let obj = Objective {
        gram: problem.phi.tr_mul(&problem.phi),
        cross: problem.phi.tr_mul(&problem.y),
        yy: problem.y.norm_squared(),
        map,
        eta,
    };
    let (g_ls, _) = min_norm_lstsq(&problem.phi, &problem.y);
    let mut x = g_ls;
    let mut fx = obj.total(&x);
    let mut history = vec![fx];
    let mut prox = HankelProx::new(map, &x);
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut lip = 1.0_f64;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iter {
        iterations += 1;
        let fy = obj.smooth(&y);
        let gy = obj.grad(&y);
        let z = loop {
            let v = &y - &gy / lip;
            let z = if eta == 0.0 { v } else { prox.solve(&v, eta / lip, cfg.inner_iter, cfg.inner_tol) };
            let dz = &z - &y;
            let model = fy + gy.dot(&dz) + 0.5 * lip * dz.norm_squared();
            if obj.smooth(&z) <= model * (1.0 + 1e-14) + 1e-300 || lip > 1e300 {
                break z;
            }
            lip *= 2.0;
        };
        let fz = obj.total(&z);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let x_prev = x.clone();
        let accepted = fz <= fx;
        if accepted {
            let rel = (fx - fz) / fx.abs().max(f64::MIN_POSITIVE);
            x = z.clone();
            fx = fz;
            history.push(fx);
            if rel < cfg.tol {
                converged = true;
                break;
            }
        } else {
            history.push(fx);
        }
        y = &x + (&z - &x) * (t / t_next) + (&x - &x_prev) * ((t - 1.0) / t_next);
        t = t_next;
    }
    Ok(NuclearNormFit {
        response: ImpulseResponse::from_vec(problem.dims, x)?,
        objective: fx,
        history,
        iterations,
        converged,
    })
}
