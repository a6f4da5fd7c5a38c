//! Instance generators and independent oracles shared by the integration
//! tests. Nothing here calls into the engines under test.

#![allow(dead_code)]

use clqg::{LqgProblem, Weights};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const BUILDING: &str = include_str!("../../problems/building.json");
pub const BUILDING_IID: &str = include_str!("../../problems/building_iid_noise.json");
pub const BUILDING_FIXED_REF: &str = include_str!("../../problems/building_fixed_ref.json");

pub fn building() -> LqgProblem {
    clqg::load_problem(BUILDING).expect("bundled building problem loads")
}

/// Building model with a shorter horizon and a new constraint level.
pub fn building_with(horizon: usize, gamma: f64) -> LqgProblem {
    let mut p = building().with_gamma(gamma);
    p.horizon = horizon;
    p.q.truncate(horizon);
    p.r.truncate(horizon);
    p.q_tilde.truncate(horizon);
    p.r_tilde.truncate(horizon);
    p
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0) * scale)
}

/// `G Gᵀ` with `G` of random rank in `0..=dim`, so possibly singular.
pub fn random_psd(rng: &mut ChaCha8Rng, dim: usize, scale: f64) -> DMatrix<f64> {
    let rank = rng.random_range(0..=dim);
    let g = uniform_matrix(rng, dim, rank, 1.0);
    &g * g.transpose() * scale
}

pub fn random_pd(rng: &mut ChaCha8Rng, dim: usize, floor: f64) -> DMatrix<f64> {
    random_psd(rng, dim, 1.0) + DMatrix::identity(dim, dim) * floor
}

/// Random validated instance with `n, m ≤ 4`, `N ≤ 50`, per-step weights,
/// PD control weights and PSD (possibly singular) everything else.
/// `gamma` is half the constraint cost of the zero-input policy plus a
/// little, which keeps typical instances in the active regime.
pub fn random_problem(seed: u64) -> LqgProblem {
    let mut r = rng(seed);
    let n = r.random_range(1..=4);
    let m = r.random_range(1..=4);
    let horizon = r.random_range(1..=50);
    let a = uniform_matrix(&mut r, n, n, 1.05 / (n as f64).sqrt());
    let b = uniform_matrix(&mut r, n, m, 1.0);
    let q = (0..horizon).map(|_| random_psd(&mut r, n, 1.0)).collect();
    let rr = (0..horizon).map(|_| random_pd(&mut r, m, 0.1)).collect();
    let q_tilde = (0..horizon).map(|_| random_psd(&mut r, n, 0.2)).collect();
    let r_tilde = (0..horizon).map(|_| random_pd(&mut r, m, 0.05)).collect();
    let qf = random_psd(&mut r, n, 1.0);
    let qf_tilde = random_psd(&mut r, n, 0.2);
    let x0_mean = DVector::from_fn(n, |_, _| r.random_range(-2.0..2.0));
    let x0_cov = random_psd(&mut r, n, 0.2);
    let noise_cov = random_psd(&mut r, n, 0.05);
    let gamma = r.random_range(0.5..5.0);
    LqgProblem {
        n,
        m,
        horizon,
        a,
        b,
        q,
        r: rr,
        qf,
        q_tilde,
        r_tilde,
        qf_tilde,
        gamma,
        x0_mean,
        x0_cov,
        noise_cov,
    }
}

/// Scalar instance with an input-energy constraint (`Q̃ = Q̃f = 0`), so the
/// zero policy is strictly feasible for any `gamma > 0`.
#[derive(Debug, Clone, Copy)]
pub struct Scalar {
    pub a: f64,
    pub b: f64,
    pub q: f64,
    pub r: f64,
    pub qf: f64,
    pub r_tilde: f64,
    pub z: f64,
    pub v: f64,
    pub w: f64,
    pub horizon: usize,
    pub gamma: f64,
}

fn m1(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

impl Scalar {
    pub fn random(seed: u64, horizon: usize) -> Self {
        let mut r = rng(seed);
        Scalar {
            a: r.random_range(0.5..1.2),
            b: r.random_range(0.5..1.5),
            q: r.random_range(0.2..2.0),
            r: r.random_range(0.1..1.0),
            qf: r.random_range(0.0..2.0),
            r_tilde: 1.0,
            z: r.random_range(0.5..2.0),
            v: r.random_range(0.0..0.5),
            w: r.random_range(0.05..0.5),
            horizon,
            gamma: 0.0,
        }
    }

    pub fn problem(&self) -> LqgProblem {
        LqgProblem::with_constant_weights(
            m1(self.a),
            m1(self.b),
            Weights {
                q: m1(self.q),
                r: m1(self.r),
                qf: m1(self.qf),
                q_tilde: m1(0.0),
                r_tilde: m1(self.r_tilde),
                qf_tilde: m1(0.0),
            },
            self.gamma,
            DVector::from_element(1, self.z),
            m1(self.v),
            m1(self.w),
            self.horizon,
        )
    }

    /// `(J_p, C)` of the policy `u(k) = F_k x(k)` by scalar second-moment
    /// recursion.
    pub fn costs(&self, gains: &[f64]) -> (f64, f64) {
        let mut s = self.v + self.z * self.z;
        let mut jp = 0.0;
        let mut c = 0.0;
        for &f in gains {
            jp += (self.q + self.r * f * f) * s;
            c += self.r_tilde * f * f * s;
            let closed = self.a + self.b * f;
            s = closed * closed * s + self.w;
        }
        (jp + self.qf * s, c)
    }

    /// λ-optimal gains from the scalar Riccati recursion.
    pub fn gains(&self, lambda: f64) -> Vec<f64> {
        let mut x = self.qf;
        let mut gains = vec![0.0; self.horizon];
        for k in (0..self.horizon).rev() {
            let inner = self.r + lambda * self.r_tilde + self.b * self.b * x;
            let f = -self.b * x * self.a / inner;
            gains[k] = f;
            x = self.a * self.a * x + self.a * x * self.b * f + self.q;
        }
        gains
    }

    pub fn gap(&self, lambda: f64) -> f64 {
        self.costs(&self.gains(lambda)).1 - self.gamma
    }
}

/// Visits every point of the grid `lo[i] + j·step`, `j = 0..count`.
fn for_each_grid_point(lo: &[f64], step: f64, count: usize, mut visit: impl FnMut(&[f64])) {
    let dim = lo.len();
    let mut idx = vec![0usize; dim];
    let mut point = lo.to_vec();
    loop {
        visit(&point);
        let mut d = 0;
        loop {
            if d == dim {
                return;
            }
            idx[d] += 1;
            if idx[d] < count {
                point[d] = lo[d] + idx[d] as f64 * step;
                break;
            }
            idx[d] = 0;
            point[d] = lo[d];
            d += 1;
        }
    }
}

/// Brute-force minimizer of `score` over gains in `[-3, 3]^N`: a coarse grid
/// (step 0.05) followed by one refinement (step 1e-3) over ±0.05 around
/// the coarse winner. `score` returns `None` for excluded points.
pub fn grid_minimize(
    horizon: usize,
    score: impl Fn(&[f64]) -> Option<f64>,
) -> Option<(Vec<f64>, f64)> {
    let consider = |best: &mut Option<(Vec<f64>, f64)>, g: &[f64]| {
        if let Some(s) = score(g) {
            if best.as_ref().is_none_or(|(_, b)| s < *b) {
                *best = Some((g.to_vec(), s));
            }
        }
    };
    let mut best = None;
    for_each_grid_point(&vec![-3.0; horizon], 0.05, 121, |g| consider(&mut best, g));
    let (centre, _) = best.clone()?;
    let lo: Vec<f64> = centre.iter().map(|c| c - 0.05).collect();
    for_each_grid_point(&lo, 1e-3, 101, |g| consider(&mut best, g));
    best
}

/// Zero crossing of a non-increasing `f` on `[0, hi]` located by repeated
/// uniform-grid scans (`points` per level) until the bracket is narrower
/// than `width`.
pub fn grid_root(f: impl Fn(f64) -> f64, hi: f64, points: usize, width: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, hi);
    while hi - lo > width {
        let step = (hi - lo) / (points - 1) as f64;
        let first_nonpositive = (0..points)
            .map(|i| lo + i as f64 * step)
            .find(|&l| f(l) <= 0.0)
            .expect("f changes sign on the bracket");
        hi = first_nonpositive;
        lo = (first_nonpositive - step).max(lo);
    }
    0.5 * (lo + hi)
}

/// Textbook finite-horizon LQ Riccati pass on `(Q_k, R_k, Qf)` with a
/// general matrix inverse. Returns `(P_0..=P_N, K_0..K_{N−1})` with
/// `u = −K x`.
pub fn textbook_riccati(p: &LqgProblem) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut ps = vec![p.qf.clone()];
    let mut ks = Vec::new();
    for k in (0..p.horizon).rev() {
        let next = ps.last().unwrap();
        let s = &p.r[k] + p.b.transpose() * next * &p.b;
        let kk = s.try_inverse().expect("invertible") * p.b.transpose() * next * &p.a;
        let pk = p.a.transpose() * next * &p.a - p.a.transpose() * next * &p.b * &kk + &p.q[k];
        ps.push(pk);
        ks.push(kk);
    }
    ps.reverse();
    ks.reverse();
    (ps, ks)
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}
