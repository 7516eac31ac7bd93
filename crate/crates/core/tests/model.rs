use kernel_sysid::model::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn dims_strategy() -> impl Strategy<Value = Dims> {
    (1usize..8, 1usize..3, 1usize..3).prop_map(|(t, p, m)| Dims::new(t, p, m))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn regression_matches_convolution(dims in dims_strategy(), n in 10usize..40, seed in 0u64..1000) {
        let g = ImpulseResponse::from_vec(dims, DVector::from_fn(dims.d(), |q, _| ((q as u64 * 31 + seed) % 17) as f64 - 8.0)).unwrap();
        let u = DMatrix::from_fn(n, dims.inputs, |t, j| ((t * 7 + j * 3 + seed as usize) % 11) as f64 - 5.0);
        let data = simulate_oe(&g, &u, 0.0, 0, 1.0).unwrap();
        for ic in [InitialConditions::ZeroPad, InitialConditions::Trim] {
            if ic == InitialConditions::Trim && dims.lags >= n {
                continue;
            }
            let p = build_fir_regression(&data, dims.lags, ic).unwrap();
            prop_assert!(p.rss(g.as_vec()) < 1e-18 * (1.0 + p.y.norm_squared()));
            prop_assert_eq!(p.n_rows(), p.samples * dims.outputs);
        }
    }

    #[test]
    fn json_and_lag_matrices_round_trip(dims in dims_strategy(), seed in 0u64..1000) {
        let g = ImpulseResponse::from_vec(dims, DVector::from_fn(dims.d(), |q, _| (q as f64 + seed as f64).sin())).unwrap();
        prop_assert_eq!(&ImpulseResponse::from_json(&g.to_json()).unwrap(), &g);
        prop_assert_eq!(&ImpulseResponse::from_lag_matrices(&g.lag_matrices()).unwrap(), &g);
    }

    #[test]
    fn vec_index_is_a_bijection(dims in dims_strategy()) {
        let mut seen = vec![false; dims.d()];
        for j in 0..dims.inputs {
            for i in 0..dims.outputs {
                for k in 1..=dims.lags {
                    let q = dims.vec_index(k, i, j);
                    prop_assert!(!seen[q]);
                    seen[q] = true;
                }
            }
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }
}

#[test]
fn aic_beats_long_ls_on_short_response() {
    let g = ImpulseResponse::siso(&[1.0, 0.5, 0.25]).unwrap();
    let u = DMatrix::from_fn(300, 1, |t, _| ((t * 37 % 23) as f64 - 11.0) / 6.0);
    let data = simulate_oe(&g, &u, 0.3, 3, 1.0).unwrap();
    let test = simulate_oe(&g, &DMatrix::from_fn(300, 1, |t, _| ((t * 13 % 19) as f64 - 9.0) / 5.0), 0.0, 0, 1.0).unwrap();
    let sel = order_selection_baseline(&data, 40, OrderCriterion::Aic, InitialConditions::ZeroPad).unwrap();
    let long = least_squares(&build_fir_regression(&data, 40, InitialConditions::ZeroPad).unwrap());
    let a = fit_metrics(Some(&g), &sel.response, &test).unwrap();
    let b = fit_metrics(Some(&g), &long.response, &test).unwrap();
    assert!(a.impulse_fit.unwrap() > b.impulse_fit.unwrap());
}
