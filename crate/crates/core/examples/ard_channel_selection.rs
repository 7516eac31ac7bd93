//! Per-channel evidence scales on a 2×2 system where input 2 does not reach
//! output 1: the scale of the missing channel is driven exactly to zero.
//!
//! `cargo run --release --example ard_channel_selection`

use kernel_sysid::experiment::{generate_random_system, simulate_data, DataConfig, SystemConfig};
use kernel_sysid::model::ImpulseResponse;
use kernel_sysid::structure::{ard_mimo_identify, ArdConfig};

fn main() -> kernel_sysid::Result<()> {
    let full = generate_random_system(&SystemConfig { outputs: 2, inputs: 2, seed: 21, ..Default::default() })?;
    let dims = full.dims();
    let null = dims.channel_index(0, 1);
    let mut v = full.into_vec();
    v.rows_mut(null * dims.lags, dims.lags).fill(0.0);
    let truth = ImpulseResponse::from_vec(dims, v)?;

    let sim = simulate_data(&truth, &DataConfig { samples: 500, snr_db: 10.0, ..Default::default() }, [1, 2, 3])?;
    let fit = ard_mimo_identify(&sim.train, 30, &ArdConfig::default())?;
    let scales = fit.estimate.hyperparams.scales();
    for i in 0..dims.outputs {
        for j in 0..dims.inputs {
            let c = dims.channel_index(i, j);
            println!(
                "u{} → y{}: λ = {:.3e}  present = {}  ‖ĝ‖ = {:.3e}",
                j + 1,
                i + 1,
                scales[c],
                fit.channel_graph[i][j],
                fit.estimate.g_hat.channel(i, j).iter().map(|x| x * x).sum::<f64>().sqrt()
            );
        }
    }
    Ok(())
}
