//! Builds every kernel family, checks positive semidefiniteness and a few
//! identities between them.
//!
//! `cargo run --example kernel_zoo`

use kernel_sysid::kernels::{
    akaike_smoothness_kernel, ar1_kernel, block_diag_mimo, conic_combination, diag_exp_kernel, power_decay_kernel,
    tc_basis, tc_kernel, KernelFamily, KernelSpec,
};
use kernel_sysid::linalg::eig_range;

fn main() -> kernel_sysid::Result<()> {
    let t = 40;
    let kernels = [
        ("akaike", akaike_smoothness_kernel(t, 0.8)?),
        ("diag_exp", diag_exp_kernel(t, 1.0, 0.9)?),
        ("power_decay", power_decay_kernel(t, 1.0, 2.5)?),
        ("tc", tc_kernel(t, 1.0, 0.1, 1.0)?),
    ];
    for (name, k) in &kernels {
        let (lo, hi) = eig_range(k.matrix());
        println!("{name:<12} eigenvalues in [{lo:+.2e}, {hi:.2e}]");
        k.check_psd()?;
    }

    // TC(β) is the AR(1) kernel with pole e^{-β}.
    let beta = 0.2;
    let tc = tc_kernel(t, 2.0, beta, 1.0)?;
    let ar = ar1_kernel(t, 2.0, (-beta).exp())?;
    println!("max |TC − AR(1)| = {:.1e}", (tc.matrix() - ar.matrix()).amax());

    // Akaike's kernel is the power-decay kernel with α = 2.
    let ak = akaike_smoothness_kernel(t, 1.0)?;
    let pd = power_decay_kernel(t, 1.0, 2.0)?;
    println!("max |Akaike − power_decay(2)| = {:.1e}", (ak.matrix() - pd.matrix()).amax());

    // Truncated Karhunen–Loève series of the TC kernel.
    let full = tc_kernel(t, 1.0, beta, 1.0)?;
    let basis = tc_basis(t, beta, 1.0, t)?;
    for terms in [2, 5, 10, 40] {
        let err = (basis.partial_gram(terms) - full.matrix()).norm() / full.matrix().norm();
        println!("KL series with {terms:>2} terms: relative error {err:.2e}");
    }

    let tc_spec = |scale: f64| KernelSpec::scalar(KernelFamily::Tc, 20, scale, vec![0.3]);
    let mimo = block_diag_mimo(&[vec![tc_spec(1.0), tc_spec(0.0)], vec![tc_spec(0.5), tc_spec(2.0)]])?;
    println!("2x2 block-diagonal kernel: {}x{}", mimo.dim(), mimo.dim());
    println!("spec as JSON: {}", serde_json::to_string(&mimo.spec)?);

    let mix = conic_combination(&[tc_kernel(t, 1.0, 0.1, 1.0)?, diag_exp_kernel(t, 1.0, 0.7)?], &[0.7, 0.3])?;
    mix.check_psd()?;
    println!("conic combination is PSD");
    Ok(())
}
