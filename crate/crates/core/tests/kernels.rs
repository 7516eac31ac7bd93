use kernel_sysid::kernels::*;
use kernel_sysid::linalg::eig_range;
use kernel_sysid::model::Dims;
use proptest::prelude::*;

fn min_eig_ok(k: &KernelMatrix) -> bool {
    let (lo, hi) = eig_range(k.matrix());
    lo >= -1e-10 * hi.abs().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scalar_families_are_psd(t in 1usize..40, scale in 1e-3f64..1e3, beta in 0.01f64..3.0,
                               rho in 0.05f64..0.99, alpha in 1.01f64..4.0, ts in 0.01f64..2.0) {
        for k in [
            tc_kernel(t, scale, beta, ts).unwrap(),
            diag_exp_kernel(t, scale, rho).unwrap(),
            power_decay_kernel(t, scale, alpha).unwrap(),
            akaike_smoothness_kernel(t, 1.0 / scale).unwrap(),
        ] {
            prop_assert!(min_eig_ok(&k));
            prop_assert_eq!(k.dim(), t);
        }
    }

    #[test]
    fn tc_equals_ar1_under_parameter_map(t in 1usize..30, c in 1e-3f64..10.0, beta in 0.01f64..3.0) {
        let tc = tc_kernel(t, c, beta, 1.0).unwrap();
        let ar = ar1_kernel(t, c, (-beta).exp()).unwrap();
        prop_assert!((tc.matrix() - ar.matrix()).amax() <= 1e-12 * c.max(1.0));
    }

    #[test]
    fn mimo_blocks_and_conic_are_psd(t in 1usize..12, p in 1usize..3, m in 1usize..3,
                                     w in proptest::collection::vec(0.0f64..5.0, 3)) {
        let grid: Vec<Vec<KernelSpec>> = (0..p)
            .map(|i| (0..m).map(|j| KernelSpec::scalar(KernelFamily::Tc, t, 1.0 + (i + 2 * j) as f64, vec![0.2])).collect())
            .collect();
        let bd = block_diag_mimo(&grid).unwrap();
        prop_assert_eq!(bd.spec.dims, Dims::new(t, p, m));
        prop_assert!(min_eig_ok(&bd));
        prop_assume!(w.iter().any(|v| *v > 0.0));
        let parts = [
            tc_kernel(t, 1.0, 0.3, 1.0).unwrap(),
            diag_exp_kernel(t, 1.0, 0.7).unwrap(),
            power_decay_kernel(t, 1.0, 2.0).unwrap(),
        ];
        prop_assert!(min_eig_ok(&conic_combination(&parts, &w).unwrap()));
    }
}

#[test]
fn akaike_is_power_decay_two() {
    for t in [1, 5, 33] {
        for gamma in [0.1, 1.0, 7.5] {
            let a = akaike_smoothness_kernel(t, gamma).unwrap();
            let p = power_decay_kernel(t, 1.0 / gamma, 2.0).unwrap();
            assert_eq!(a.matrix(), p.matrix());
        }
    }
}

#[test]
fn stable_hankel_family_needs_a_subspace() {
    let spec = KernelSpec::scalar(KernelFamily::StableHankelPrecision, 4, 1.0, vec![]);
    assert!(spec.build().is_err());
}
