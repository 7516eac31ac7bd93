use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{DataConfig, InputKind, SystemConfig};
use crate::error::{param_err, Error, Result};
use crate::model::{Dims, IODataset, ImpulseResponse};

/// Fraction of the impulse-response energy allowed beyond the truncation lag.
pub const TAIL_ENERGY: f64 = 1e-8;

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Monic polynomial (highest power first) with `count` roots drawn uniformly
/// by area from the annulus: conjugate pairs, plus one real root of random
/// sign when `count` is odd.
fn random_monic(rng: &mut ChaCha8Rng, count: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
    let radius = |rng: &mut ChaCha8Rng| (lo * lo + (hi * hi - lo * lo) * rng.random::<f64>()).sqrt();
    let mut poly = vec![1.0];
    for _ in 0..count / 2 {
        let r = radius(rng);
        let theta = std::f64::consts::PI * rng.random::<f64>();
        poly = poly_mul(&poly, &[1.0, -2.0 * r * theta.cos(), r * r]);
    }
    if count % 2 == 1 {
        let r = radius(rng);
        let root = if rng.random::<bool>() { r } else { -r };
        poly = poly_mul(&poly, &[1.0, -root]);
    }
    poly
}

/// Impulse response `g_1, g_2, …` of `b(z)/a(z)` with `deg a = n`, `deg b = n − 1`,
/// cut where the remaining energy falls below [`TAIL_ENERGY`] of the total.
fn truncated_response(a: &[f64], b: &[f64], max_lags: usize) -> Result<Vec<f64>> {
    let n = a.len() - 1;
    let mut g: Vec<f64> = Vec::new();
    let mut len = 64usize;
    loop {
        let target = len.min(max_lags);
        while g.len() < target {
            let k = g.len() + 1;
            // y(k) = Σ b_i δ(k − i) − Σ a_i y(k − i), with b indexed from delay 1.
            let mut v = if k <= n { b[k - 1] } else { 0.0 };
            for i in 1..=n.min(k - 1) {
                v -= a[i] * g[k - i - 1];
            }
            g.push(v);
        }
        let total: f64 = g.iter().map(|v| v * v).sum();
        let late: f64 = g[g.len() / 2..].iter().map(|v| v * v).sum();
        if total > 0.0 && late <= 1e-4 * TAIL_ENERGY * total {
            let mut tail = 0.0;
            let mut cut = g.len();
            for k in (0..g.len()).rev() {
                if tail + g[k] * g[k] > TAIL_ENERGY * total {
                    break;
                }
                tail += g[k] * g[k];
                cut = k;
            }
            g.truncate(cut.max(1));
            return Ok(g);
        }
        if target == max_lags {
            return Err(Error::Numerical(format!(
                "impulse response has not decayed within {max_lags} lags"
            )));
        }
        len *= 2;
    }
}

/// One scalar channel `gain · b(z)/a(z)`, coefficients highest power first.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalChannel {
    pub den: Vec<f64>,
    pub num: Vec<f64>,
    pub gain: f64,
}

impl RationalChannel {
    /// First `len` impulse-response coefficients, `g_1 … g_len`.
    pub fn impulse(&self, len: usize) -> Vec<f64> {
        let n = self.den.len() - 1;
        let mut g: Vec<f64> = Vec::with_capacity(len);
        for k in 1..=len {
            let mut v = if k <= n { self.num[k - 1] } else { 0.0 };
            for i in 1..=n.min(k - 1) {
                v -= self.den[i] * g[k - i - 1];
            }
            g.push(v);
        }
        g.into_iter().map(|v| v * self.gain).collect()
    }
}

/// A random system and the rational channels it was sampled from.
#[derive(Debug, Clone)]
pub struct RandomSystem {
    pub response: ImpulseResponse,
    /// Channel-major, like the coefficient vectorization.
    pub channels: Vec<RationalChannel>,
}

/// Random stable system with one rational transfer function per channel,
/// each normalized to unit ℓ2 norm. The number of lags is the largest
/// truncation length over the channels.
pub fn generate_random_system(cfg: &SystemConfig) -> Result<ImpulseResponse> {
    Ok(sample_random_system(cfg)?.response)
}

pub fn sample_random_system(cfg: &SystemConfig) -> Result<RandomSystem> {
    let (lo, hi) = cfg.pole_radius;
    if !(lo > 0.0 && hi < 1.0 && lo <= hi) {
        return Err(param_err("pole radii must satisfy 0 < lo <= hi < 1"));
    }
    if cfg.order == 0 || cfg.outputs == 0 || cfg.inputs == 0 {
        return Err(param_err("order and channel counts must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut responses = Vec::with_capacity(cfg.outputs * cfg.inputs);
    let mut channels = Vec::with_capacity(cfg.outputs * cfg.inputs);
    for _ in 0..cfg.outputs * cfg.inputs {
        let den = random_monic(&mut rng, cfg.order, (lo, hi));
        let num = random_monic(&mut rng, cfg.order - 1, (lo, hi));
        let g = truncated_response(&den, &num, cfg.max_lags)?;
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        responses.push(g.into_iter().map(|v| v / norm).collect::<Vec<_>>());
        channels.push(RationalChannel { den, num, gain: 1.0 / norm });
    }
    let lags = responses.iter().map(Vec::len).max().unwrap_or(1);
    let dims = Dims::new(lags, cfg.outputs, cfg.inputs);
    let mut vec = DVector::zeros(dims.d());
    for (q, ch) in responses.iter().enumerate() {
        for (k, v) in ch.iter().enumerate() {
            vec[q * lags + k] = *v;
        }
    }
    Ok(RandomSystem { response: ImpulseResponse::from_vec(dims, vec)?, channels })
}

/// Unit-variance input record with `m` channels.
pub fn generate_input(cfg: &DataConfig, samples: usize, inputs: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = DMatrix::zeros(samples, inputs);
    let a = cfg.input_pole;
    let gain = (1.0 - a * a).sqrt();
    for t in 0..samples {
        for j in 0..inputs {
            let e: f64 = rng.sample(StandardNormal);
            u[(t, j)] = match cfg.input {
                InputKind::White => e,
                InputKind::Filtered if t == 0 => e,
                InputKind::Filtered => a * u[(t - 1, j)] + gain * e,
            };
        }
    }
    u
}

/// Noise variance for a target SNR `10·log10(var(y₀)/σ²)`, averaging the
/// noise-free output variance over output channels.
pub fn noise_variance_for_snr(noise_free: &DMatrix<f64>, snr_db: f64) -> f64 {
    let n = noise_free.nrows() as f64;
    let var = noise_free
        .column_iter()
        .map(|c| {
            let mean = c.mean();
            c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)
        })
        .sum::<f64>()
        / noise_free.ncols() as f64;
    var / 10f64.powf(snr_db / 10.0)
}

/// Estimation record at the configured SNR plus a noise-free validation record.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub train: IODataset,
    pub test: IODataset,
    pub noise_variance: f64,
}

pub fn simulate_data(truth: &ImpulseResponse, cfg: &DataConfig, seeds: [u64; 3]) -> Result<SimulatedData> {
    let m = truth.dims().inputs;
    let u = generate_input(cfg, cfg.samples, m, seeds[0]);
    let y0 = truth.convolve(&u)?;
    let sigma2 = noise_variance_for_snr(&y0, cfg.snr_db);
    let mut rng = ChaCha8Rng::seed_from_u64(seeds[1]);
    let sd = sigma2.sqrt();
    let mut y = y0;
    for t in 0..y.nrows() {
        for i in 0..y.ncols() {
            let e: f64 = rng.sample(StandardNormal);
            y[(t, i)] += sd * e;
        }
    }
    let train = IODataset::new(u, y, cfg.sample_time)?;
    let u_test = generate_input(cfg, cfg.test_samples, m, seeds[2]);
    let y_test = truth.convolve(&u_test)?;
    let test = IODataset::new(u_test, y_test, cfg.sample_time)?;
    Ok(SimulatedData { train, test, noise_variance: sigma2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pole_profile() {
        let cfg = SystemConfig { order: 1, pole_radius: (0.5, 0.5), seed: 3, ..Default::default() };
        let g = generate_random_system(&cfg).unwrap();
        let v = g.as_vec();
        let pole = v[1] / v[0];
        assert!((pole.abs() - 0.5).abs() < 1e-12);
        for k in 1..v.len() {
            assert!((v[k] - v[k - 1] * pole).abs() < 1e-15);
        }
    }

    #[test]
    fn tail_energy_and_determinism() {
        for seed in 0..100 {
            let cfg = SystemConfig { order: 4, outputs: 1, inputs: 2, seed, ..Default::default() };
            let sys = sample_random_system(&cfg).unwrap();
            assert_eq!(sys.response.as_vec(), sample_random_system(&cfg).unwrap().response.as_vec());
            let t = sys.response.lags();
            for (j, ch) in sys.channels.iter().enumerate() {
                let long = ch.impulse(t + 5000);
                let total: f64 = long.iter().map(|v| v * v).sum();
                let tail: f64 = long[t..].iter().map(|v| v * v).sum();
                assert!(tail <= TAIL_ENERGY * total, "seed {seed}: {tail} / {total}");
                let kept = sys.response.channel(0, j);
                assert!((kept.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
