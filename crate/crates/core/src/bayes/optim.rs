//! Box-constrained derivative-free search used for evidence maximization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Settings for the multi-start simplex search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    /// Number of starting points on a log-uniform design over the bounds.
    pub starts: usize,
    /// Absolute tolerance on the objective spread of the simplex.
    pub ftol: f64,
    /// Optional extra bound on the simplex diameter in search coordinates.
    pub xtol: Option<f64>,
    pub max_evals: usize,
    /// Newton refinement with the analytic gradient after the simplex phase.
    pub polish: bool,
    /// Run starts on the rayon pool.
    pub parallel: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            starts: 5,
            ftol: 1e-6,
            xtol: None,
            max_evals: 4000,
            polish: true,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub converged: bool,
}

fn clamp(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

/// Nelder–Mead minimization of `f` inside the box `[lo, hi]`; trial points
/// are projected onto the box. Non-finite objective values count as +∞.
pub fn nelder_mead<F>(f: F, x0: &[f64], lo: &[f64], hi: &[f64], cfg: &OptimizerConfig) -> SimplexResult
where
    F: Fn(&[f64]) -> f64,
{
    let n = x0.len();
    let eval = |x: &[f64]| {
        let v = f(x);
        if v.is_finite() { v } else { f64::INFINITY }
    };
    if n == 0 {
        return SimplexResult { x: vec![], f: eval(&[]), evals: 1, converged: true };
    }
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    let mut start = x0.to_vec();
    clamp(&mut start, lo, hi);
    simplex.push(start.clone());
    for i in 0..n {
        let mut p = start.clone();
        let width = (hi[i] - lo[i]).abs();
        let step = if width.is_finite() && width > 0.0 { 0.1 * width } else { 0.5 };
        p[i] = if p[i] + step <= hi[i] { p[i] + step } else { p[i] - step };
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex.iter().map(|p| eval(p)).collect();
    let mut evals = n + 1;
    let mut converged = false;

    while evals < cfg.max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        simplex = order.iter().map(|&i| simplex[i].clone()).collect();
        values = order.iter().map(|&i| values[i]).collect();

        let spread = values[n] - values[0];
        let diameter = simplex[1..]
            .iter()
            .flat_map(|p| p.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0_f64, f64::max);
        if spread.is_finite() && spread <= cfg.ftol && cfg.xtol.is_none_or(|tol| diameter <= tol) {
            converged = true;
            break;
        }

        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64)
            .collect();
        let towards = |coef: f64| {
            let mut p: Vec<f64> = (0..n)
                .map(|j| centroid[j] + coef * (simplex[n][j] - centroid[j]))
                .collect();
            clamp(&mut p, lo, hi);
            p
        };

        let reflected = towards(-1.0);
        let fr = eval(&reflected);
        evals += 1;
        if fr < values[0] {
            let expanded = towards(-2.0);
            let fe = eval(&expanded);
            evals += 1;
            if fe < fr {
                simplex[n] = expanded;
                values[n] = fe;
            } else {
                simplex[n] = reflected;
                values[n] = fr;
            }
            continue;
        }
        if fr < values[n - 1] {
            simplex[n] = reflected;
            values[n] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[n] {
            let c = towards(-0.5);
            let v = eval(&c);
            (c, v)
        } else {
            let c = towards(0.5);
            let v = eval(&c);
            (c, v)
        };
        evals += 1;
        if fc < values[n].min(fr) {
            simplex[n] = contracted;
            values[n] = fc;
            continue;
        }
        // Shrink towards the best vertex.
        for i in 1..=n {
            let p: Vec<f64> = (0..n)
                .map(|j| simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]))
                .collect();
            values[i] = eval(&p);
            simplex[i] = p;
        }
        evals += n;
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    SimplexResult { x: simplex[best].clone(), f: values[best], evals, converged }
}

/// Starting points spread over the box: start `s`, coordinate `j` sits at
/// the fraction `((s + j) mod S + 0.5) / S` of its range.
pub fn start_design(lo: &[f64], hi: &[f64], starts: usize) -> Vec<Vec<f64>> {
    let s_count = starts.max(1);
    (0..s_count)
        .map(|s| {
            (0..lo.len())
                .map(|j| {
                    let frac = (((s + j) % s_count) as f64 + 0.5) / s_count as f64;
                    lo[j] + frac * (hi[j] - lo[j])
                })
                .collect()
        })
        .collect()
}

/// Damped Newton ascent on a smooth objective with analytic gradient; the
/// Hessian comes from central differences of the gradient. Coordinates not
/// flagged in `free` are left untouched, as are coordinates pinned at a bound
/// by an outward gradient.
pub fn newton_polish<F>(fg: F, x0: &[f64], lo: &[f64], hi: &[f64], free: &[bool], max_iter: usize) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let mut x = x0.to_vec();
    let mut evals = 0;
    let Some((mut fx, mut grad)) = fg(&x) else {
        return (x, f64::NEG_INFINITY, 1);
    };
    evals += 1;
    for _ in 0..max_iter {
        let idx: Vec<usize> = (0..x.len())
            .filter(|&i| free[i])
            .filter(|&i| !((x[i] <= lo[i] && grad[i] <= 0.0) || (x[i] >= hi[i] && grad[i] >= 0.0)))
            .collect();
        if idx.is_empty() {
            break;
        }
        let k = idx.len();
        let g = DVector::from_iterator(k, idx.iter().map(|&i| grad[i]));
        let h = 1e-5;
        let mut hess = DMatrix::zeros(k, k);
        let mut ok = true;
        for (c, &i) in idx.iter().enumerate() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            match (fg(&xp), fg(&xm)) {
                (Some((_, gp)), Some((_, gm))) => {
                    for (r, &l) in idx.iter().enumerate() {
                        hess[(r, c)] = (gp[l] - gm[l]) / (2.0 * h);
                    }
                }
                _ => ok = false,
            }
            evals += 2;
        }
        if !ok {
            break;
        }
        let neg_h = -(&hess + hess.transpose()) * 0.5;
        let definite = hess_ok(&neg_h);
        let step = match neg_h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => modified_newton_step(&neg_h, &g),
        };
        let step_norm = step.amax();
        if step_norm < 1e-13 {
            break;
        }
        // Close to the optimum the objective is flat to rounding, so small
        // Newton steps are trusted without a line search.
        if step_norm < 1e-6 && definite {
            let mut xn = x.clone();
            for (c, &i) in idx.iter().enumerate() {
                xn[i] = (x[i] + step[c]).clamp(lo[i], hi[i]);
            }
            evals += 1;
            match fg(&xn) {
                Some((fnew, gnew)) => {
                    x = xn;
                    fx = fnew;
                    grad = gnew;
                    continue;
                }
                None => break,
            }
        }
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let mut xn = x.clone();
            for (c, &i) in idx.iter().enumerate() {
                xn[i] = (x[i] + t * step[c]).clamp(lo[i], hi[i]);
            }
            evals += 1;
            if let Some((fnew, gnew)) = fg(&xn) {
                if fnew >= fx + 1e-4 * t * slope.max(0.0) {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            break;
        };
        // Away from a strict local maximum, stop once progress stalls.
        let stalled = !definite && fnew - fx <= 1e-13 * (1.0 + fx.abs());
        x = xn;
        fx = fnew;
        grad = gnew;
        if stalled {
            break;
        }
    }
    (x, fx, evals)
}

/// Newton step with the curvature replaced by its absolute value, floored
/// relative to the largest eigenvalue.
fn modified_newton_step(neg_h: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let eig = neg_h.clone().symmetric_eigen();
    let top = eig.eigenvalues.amax();
    if !(top > 0.0 && top.is_finite()) {
        return g.clone();
    }
    let coeffs = eig.eigenvectors.tr_mul(g);
    let scaled = DVector::from_iterator(
        g.len(),
        coeffs.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c / l.abs().max(1e-8 * top)),
    );
    &eig.eigenvectors * scaled
}

fn hess_ok(neg_h: &DMatrix<f64>) -> bool {
    neg_h.clone().cholesky().is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn serial() -> OptimizerConfig {
        OptimizerConfig { parallel: false, ..Default::default() }
    }

    #[test]
    fn simplex_finds_interior_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 0.5).powi(2);
        let cfg = OptimizerConfig { ftol: 1e-14, ..serial() };
        let r = nelder_mead(f, &[3.0, 3.0], &[-5.0, -5.0], &[5.0, 5.0], &cfg);
        assert!(r.converged);
        assert_relative_eq!(r.x[0], 1.0, epsilon = 1e-4);
        assert_relative_eq!(r.x[1], -0.5, epsilon = 1e-4);
    }

    #[test]
    fn simplex_stays_in_box() {
        let f = |x: &[f64]| (x[0] - 10.0).powi(2) + x[1].powi(2);
        let r = nelder_mead(f, &[0.0, 1.0], &[-1.0, -1.0], &[2.0, 1.0], &serial());
        assert_relative_eq!(r.x[0], 2.0, epsilon = 1e-6);
        assert!(r.x.iter().zip([-1.0, -1.0]).all(|(x, lo)| *x >= lo));
    }

    #[test]
    fn non_finite_values_are_avoided() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::NAN } else { (x[0] - 0.5).powi(2) };
        let r = nelder_mead(f, &[2.0], &[-3.0], &[3.0], &serial());
        assert!(r.f.is_finite());
        assert_relative_eq!(r.x[0], 0.5, epsilon = 1e-3);
    }

    #[test]
    fn start_design_is_spread_inside_box() {
        let pts = start_design(&[0.0, -1.0], &[1.0, 1.0], 4);
        assert_eq!(pts.len(), 4);
        for p in &pts {
            assert!(p[0] > 0.0 && p[0] < 1.0 && p[1] > -1.0 && p[1] < 1.0);
        }
        let mut xs: Vec<f64> = pts.iter().map(|p| p[0]).collect();
        xs.dedup();
        assert_eq!(xs.len(), 4);
    }

    #[test]
    fn polish_maximizes_concave_quadratic() {
        let fg = |x: &[f64]| {
            let f = -(x[0] - 0.3).powi(2) - 2.0 * (x[1] - 0.7).powi(2) - x[0] * x[1];
            Some((f, vec![-2.0 * (x[0] - 0.3) - x[1], -4.0 * (x[1] - 0.7) - x[0]]))
        };
        let (x, _, _) = newton_polish(fg, &[0.0, 0.0], &[-5.0, -5.0], &[5.0, 5.0], &[true, true], 50);
        // Stationary point of the quadratic.
        let det = 2.0 * 4.0 - 1.0;
        let (a, b) = ((4.0 * 0.6 - 2.8) / det, (2.0 * 2.8 - 0.6) / det);
        assert_relative_eq!(x[0], a, epsilon = 1e-8);
        assert_relative_eq!(x[1], b, epsilon = 1e-8);

        let (x, _, _) = newton_polish(fg, &[0.0, 0.0], &[-5.0, -5.0], &[5.0, 5.0], &[false, true], 50);
        assert_eq!(x[0], 0.0);
        assert_relative_eq!(x[1], 0.7, epsilon = 1e-8);
    }
}
