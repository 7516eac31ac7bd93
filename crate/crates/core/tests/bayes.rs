use approx::assert_relative_eq;
use kernel_sysid::bayes::*;
use kernel_sysid::kernels::{tc_kernel, KernelMatrix};
use kernel_sysid::model::{Dims, FirRegression};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_problem(rng: &mut ChaCha8Rng, n: usize, lags: usize) -> FirRegression {
    let phi = DMatrix::from_fn(n, lags, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    FirRegression::from_parts(y, phi, Dims::siso(lags)).unwrap()
}

fn scalar_problem(y: &[f64]) -> FirRegression {
    let n = y.len();
    FirRegression::from_parts(DVector::from_column_slice(y), DMatrix::from_element(n, 1, 1.0), Dims::siso(1)).unwrap()
}

#[test]
fn posterior_forms_agree() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for case in 0..40 {
        let (n, t) = if case % 2 == 0 { (8, 15) } else { (40, 10) };
        let p = random_problem(&mut rng, n, t);
        let beta = rng.random_range(0.05..1.0);
        let k = tc_kernel(t, rng.random_range(0.1..5.0), beta, 1.0).unwrap();
        let s2 = rng.random_range(0.05..2.0);
        let a = posterior_mean_data_space(&p, &k, s2).unwrap();
        let b = posterior_mean_param_space(&p, &k, s2).unwrap();
        let rel = (&a - &b).amax() / a.amax();
        assert!(rel < 1e-8, "case {case}: {rel}");
        let le = log_marginal_likelihood(&p, &k, s2);
        assert!(!le.failed);
    }
}

#[test]
fn scalar_evidence_formula() {
    let p = scalar_problem(&[0.7]);
    let k = KernelMatrix::from_matrix(DMatrix::from_element(1, 1, 2.0)).unwrap();
    let v = log_marginal_likelihood(&p, &k, 1.0).value;
    let expect = -0.5 * ((2.0 * std::f64::consts::PI * 3.0).ln() + 0.49 / 3.0);
    assert_relative_eq!(v, expect, max_relative = 1e-13);
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let p = random_problem(&mut rng, 60, 12);
        let ep = EvidenceProblem::new(&p, KernelTemplate::tc(Dims::siso(12), 1.0), NoisePolicy::Profile).unwrap();
        let theta = [rng.random_range(0.2..3.0), rng.random_range(0.1..0.8), rng.random_range(0.3..2.0)];
        let (_, g) = ep.log_evidence_gradient(&theta).unwrap();
        for i in 0..3 {
            let h: f64 = 1e-5;
            let mut tp = theta;
            let mut tm = theta;
            tp[i] *= h.exp();
            tm[i] *= (-h).exp();
            let fd = (ep.log_evidence(&tp).value - ep.log_evidence(&tm).value) / (2.0 * h);
            assert!(((fd - g[i]) / g[i].abs().max(1e-3)).abs() < 1e-5, "{i}: {fd} vs {}", g[i]);
        }
    }
}

#[test]
fn example_one_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 50;
    let y: Vec<f64> = (0..n).map(|_| 0.6 + rng.sample::<f64, _>(StandardNormal)).collect();
    let p = scalar_problem(&y);
    let base = KernelMatrix::from_matrix(DMatrix::identity(1, 1)).unwrap();
    let ep = EvidenceProblem::new(&p, KernelTemplate::Scaled { base }, NoisePolicy::Fixed(1.0)).unwrap();
    let est = empirical_bayes(&ep, &OptimizerConfig::default()).unwrap();
    let ybar = y.iter().sum::<f64>() / n as f64;
    let closed = (ybar * ybar - 1.0 / n as f64).max(0.0);
    assert_relative_eq!(est.hyperparams.values[0], closed, max_relative = 1e-6);
    let ex = excess_degrees_of_freedom(&ep, &ExcessDofConfig::default()).unwrap();
    let oracle = 2.0 / (n as f64 * ybar * ybar);
    assert!((ex.value - oracle).abs() < 1e-3);
}
