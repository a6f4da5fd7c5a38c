//! Sampled closed-loop rollouts used to check the analytic costs.
//!
//! Random numbers: every sample owns a ChaCha20 generator keyed by
//! `seed_from_u64(seed)` with its stream set to the sample index. Normal
//! variates come from `rand_distr::StandardNormal` (ziggurat). Each sample
//! draws `n` variates for `x(0)` and then `n` per step for `w(k)`, whether
//! or not the covariance is singular, so the draw sequence depends only on
//! `(seed, index)`. Covariance factors come from a clamped symmetric eigen
//! decomposition, which tolerates the singular `V` and `W` used in the
//! building model.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::LqgProblem;

/// Samples per parallel work unit. Fixed so that aggregation order does not
/// depend on the thread count.
const CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStats {
    pub samples: usize,
    pub seed: u64,
    pub objective_samples: Vec<f64>,
    pub constraint_samples: Vec<f64>,
    pub objective_mean: f64,
    pub objective_std_error: f64,
    pub constraint_mean: f64,
    pub constraint_std_error: f64,
    /// Per-step sample mean of `x(k)`, `k = 0..=N`.
    pub state_mean: Vec<Vec<f64>>,
    /// Per-step sample mean of `u(k)`, `k = 0..N`.
    pub input_mean: Vec<Vec<f64>>,
}

/// Sample mean and standard error (`s / sqrt(n)`, with the `n − 1`
/// sample standard deviation). A single sample has standard error zero.
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

impl EmpiricalStats {
    /// Summary statistics for already realized costs, without per-step
    /// trajectory means.
    pub fn from_samples(
        objective_samples: Vec<f64>,
        constraint_samples: Vec<f64>,
        seed: u64,
    ) -> Self {
        let (objective_mean, objective_std_error) = mean_and_std_error(&objective_samples);
        let (constraint_mean, constraint_std_error) = mean_and_std_error(&constraint_samples);
        EmpiricalStats {
            samples: objective_samples.len(),
            seed,
            objective_samples,
            constraint_samples,
            objective_mean,
            objective_std_error,
            constraint_mean,
            constraint_std_error,
            state_mean: Vec::new(),
            input_mean: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    /// `x(0) ..= x(N)`.
    pub states: Vec<Vec<f64>>,
    /// `u(0) .. u(N−1)`.
    pub inputs: Vec<Vec<f64>>,
    pub seed: u64,
}

/// Generator for sample `index` under `seed`.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

struct Factors {
    x0: DMatrix<f64>,
    noise: DMatrix<f64>,
}

fn factors(p: &LqgProblem) -> Result<Factors> {
    let x0 = linalg::psd_factor(&p.x0_cov).map_err(|min_eig| Error::FactorizationFailure {
        which: "V",
        min_eig,
    })?;
    let noise =
        linalg::psd_factor(&p.noise_cov).map_err(|min_eig| Error::FactorizationFailure {
            which: "W",
            min_eig,
        })?;
    Ok(Factors { x0, noise })
}

fn gaussian(rng: &mut ChaCha20Rng, dim: usize) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| StandardNormal.sample(rng)))
}

fn check_gains(p: &LqgProblem, gains: &[DMatrix<f64>]) -> Result<()> {
    if gains.len() != p.horizon {
        return Err(Error::InvalidArgument(format!(
            "expected {} gains, got {}",
            p.horizon,
            gains.len()
        )));
    }
    if let Some(k) = gains.iter().position(|f| f.shape() != (p.m, p.n)) {
        return Err(Error::InvalidArgument(format!(
            "gain {k} has shape {:?}, expected ({}, {})",
            gains[k].shape(),
            p.m,
            p.n
        )));
    }
    Ok(())
}

/// One closed-loop rollout. `visit` sees every `x(k)` and, for `k < N`,
/// the applied `u(k)`. Returns the realized (objective, constraint) costs.
fn rollout(
    p: &LqgProblem,
    gains: &[DMatrix<f64>],
    fac: &Factors,
    rng: &mut ChaCha20Rng,
    mut visit: impl FnMut(usize, &DVector<f64>, Option<&DVector<f64>>),
) -> (f64, f64) {
    let mut x = &p.x0_mean + &fac.x0 * gaussian(rng, p.n);
    let mut objective = 0.0;
    let mut constraint = 0.0;
    for (k, gain) in gains.iter().enumerate() {
        let u = gain * &x;
        visit(k, &x, Some(&u));
        objective += x.dot(&(&p.q[k] * &x)) + u.dot(&(&p.r[k] * &u));
        constraint += x.dot(&(&p.q_tilde[k] * &x)) + u.dot(&(&p.r_tilde[k] * &u));
        let w = &fac.noise * gaussian(rng, p.n);
        x = &p.a * &x + &p.b * &u + w;
    }
    visit(p.horizon, &x, None);
    objective += x.dot(&(&p.qf * &x));
    constraint += x.dot(&(&p.qf_tilde * &x));
    (objective, constraint)
}

struct ChunkResult {
    costs: Vec<(f64, f64)>,
    state_sum: Vec<DVector<f64>>,
    input_sum: Vec<DVector<f64>>,
}

/// Draws `samples` independent closed-loop rollouts under `u(k) = F_k x(k)`
/// and summarizes the realized costs. Results are bitwise reproducible for
/// equal arguments regardless of thread count.
pub fn simulate(
    p: &LqgProblem,
    gains: &[DMatrix<f64>],
    samples: usize,
    seed: u64,
) -> Result<EmpiricalStats> {
    if samples == 0 {
        return Err(Error::InvalidArgument("samples must be at least 1".into()));
    }
    check_gains(p, gains)?;
    let fac = factors(p)?;

    let chunks: Vec<ChunkResult> = (0..samples.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut out = ChunkResult {
                costs: Vec::with_capacity(CHUNK),
                state_sum: vec![DVector::zeros(p.n); p.horizon + 1],
                input_sum: vec![DVector::zeros(p.m); p.horizon],
            };
            for idx in (c * CHUNK)..((c + 1) * CHUNK).min(samples) {
                let mut rng = sample_rng(seed, idx as u64);
                let cost = rollout(p, gains, &fac, &mut rng, |k, x, u| {
                    out.state_sum[k] += x;
                    if let Some(u) = u {
                        out.input_sum[k] += u;
                    }
                });
                out.costs.push(cost);
            }
            out
        })
        .collect();

    let mut objective_samples = Vec::with_capacity(samples);
    let mut constraint_samples = Vec::with_capacity(samples);
    let mut state_sum = vec![DVector::zeros(p.n); p.horizon + 1];
    let mut input_sum = vec![DVector::zeros(p.m); p.horizon];
    for chunk in &chunks {
        for &(o, c) in &chunk.costs {
            objective_samples.push(o);
            constraint_samples.push(c);
        }
        for (acc, s) in state_sum.iter_mut().zip(&chunk.state_sum) {
            *acc += s;
        }
        for (acc, s) in input_sum.iter_mut().zip(&chunk.input_sum) {
            *acc += s;
        }
    }

    let scale = 1.0 / samples as f64;
    let mut stats = EmpiricalStats::from_samples(objective_samples, constraint_samples, seed);
    stats.state_mean = state_sum
        .iter()
        .map(|s| (s * scale).iter().copied().collect())
        .collect();
    stats.input_mean = input_sum
        .iter()
        .map(|s| (s * scale).iter().copied().collect())
        .collect();
    Ok(stats)
}

/// A single recorded rollout. It uses the same draws as sample 0 of
/// [`simulate`] with the same seed.
pub fn trajectory(p: &LqgProblem, gains: &[DMatrix<f64>], seed: u64) -> Result<TrajectoryRecord> {
    check_gains(p, gains)?;
    let fac = factors(p)?;
    let mut states = Vec::with_capacity(p.horizon + 1);
    let mut inputs = Vec::with_capacity(p.horizon);
    let mut rng = sample_rng(seed, 0);
    rollout(p, gains, &fac, &mut rng, |_, x, u| {
        states.push(x.iter().copied().collect());
        if let Some(u) = u {
            inputs.push(u.iter().copied().collect());
        }
    });
    Ok(TrajectoryRecord {
        states,
        inputs,
        seed,
    })
}
