//! Forward propagation of the second moment of `[x(k); u(k)]` and the two
//! quadratic costs it determines.
//!
//! With `u(k) = F_k x(k)`:
//!
//! ```text
//! S_0 = [I; F_0] (V + z zᵀ) [I; F_0]ᵀ
//! S_k = [I; F_k] ([A B] S_{k−1} [A B]ᵀ + W) [I; F_k]ᵀ,   k = 1..N−1
//! ```
//!
//! `S_k` is the full (uncentered) second moment.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::linalg::{self, trace_product};
use crate::montecarlo::EmpiricalStats;
use crate::problem::LqgProblem;

#[derive(Debug, Clone)]
pub struct MomentTrajectory {
    /// `S_0 .. S_{N-1}`, each `(n+m) × (n+m)`.
    pub s: Vec<DMatrix<f64>>,
    /// Multiplier the gains came from, if any.
    pub lambda_tag: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostPair {
    /// Objective `J_p`.
    pub jp: f64,
    /// Constraint cost `C`.
    pub c: f64,
}

/// `[I; F] M [I; F]ᵀ`.
fn lift(m_state: &DMatrix<f64>, gain: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m_state.nrows();
    let m = gain.nrows();
    let fm = gain * m_state;
    let mut s = DMatrix::zeros(n + m, n + m);
    s.view_mut((0, 0), (n, n)).copy_from(m_state);
    s.view_mut((n, 0), (m, n)).copy_from(&fm);
    s.view_mut((0, n), (n, m)).copy_from(&fm.transpose());
    s.view_mut((n, n), (m, m))
        .copy_from(&(&fm * gain.transpose()));
    linalg::symmetrize_in_place(&mut s);
    s
}

/// `[A B] S [A B]ᵀ + W`, the second moment of the next state.
pub fn next_state_moment(p: &LqgProblem, ab: &DMatrix<f64>, s: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = ab * s * ab.transpose() + &p.noise_cov;
    linalg::symmetrize_in_place(&mut m);
    m
}

/// Propagates `S_k` forward under the gain sequence `gains` (length `N`,
/// each `m × n`).
pub fn moment_forward(p: &LqgProblem, gains: &[DMatrix<f64>]) -> MomentTrajectory {
    assert_eq!(gains.len(), p.horizon, "gain sequence must have length N");
    let ab = p.ab();
    let mut s = Vec::with_capacity(p.horizon);
    let mut state_moment = p.initial_moment();
    for (k, gain) in gains.iter().enumerate() {
        if k > 0 {
            state_moment = next_state_moment(p, &ab, &s[k - 1]);
        }
        s.push(lift(&state_moment, gain));
    }
    MomentTrajectory {
        s,
        lambda_tag: None,
    }
}

fn quadratic_cost(
    p: &LqgProblem,
    ab: &DMatrix<f64>,
    traj: &MomentTrajectory,
    state_w: &[DMatrix<f64>],
    input_w: &[DMatrix<f64>],
    terminal_w: &DMatrix<f64>,
) -> f64 {
    let n = p.n;
    let m = p.m;
    let mut total = 0.0;
    for (k, s) in traj.s.iter().enumerate() {
        total += trace_product(&state_w[k], &s.view((0, 0), (n, n)).into_owned());
        total += trace_product(&input_w[k], &s.view((n, n), (m, m)).into_owned());
    }
    if let Some(last) = traj.s.last() {
        total += trace_product(terminal_w, &next_state_moment(p, ab, last));
    }
    total
}

/// `J_p = Tr(Qf([A B] S_{N−1} [A B]ᵀ + W)) + Σ_k Tr(diag(Q_k, R_k) S_k)` and
/// the same expression with the constraint weights for `C`. Summation runs
/// in ascending `k` with the terminal term last.
pub fn costs(p: &LqgProblem, traj: &MomentTrajectory) -> CostPair {
    let ab = p.ab();
    CostPair {
        jp: quadratic_cost(p, &ab, traj, &p.q, &p.r, &p.qf),
        c: quadratic_cost(p, &ab, traj, &p.q_tilde, &p.r_tilde, &p.qf_tilde),
    }
}

/// Threshold below which a zero-variance comparison counts as exact,
/// relative to `max(1, |analytic|)`.
pub const EXACT_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapEntry {
    pub analytic: f64,
    pub empirical: f64,
    pub std_error: f64,
    /// `(empirical − analytic) / std_error`; `None` when the standard error
    /// is zero.
    pub z_score: Option<f64>,
    /// Set when the standard error is zero and the gap is within
    /// [`EXACT_MATCH_TOL`].
    pub exact_match: bool,
}

impl GapEntry {
    fn new(analytic: f64, empirical: f64, std_error: f64) -> Self {
        let gap = empirical - analytic;
        if std_error > 0.0 {
            GapEntry {
                analytic,
                empirical,
                std_error,
                z_score: Some(gap / std_error),
                exact_match: false,
            }
        } else {
            GapEntry {
                analytic,
                empirical,
                std_error,
                z_score: None,
                exact_match: gap.abs() <= EXACT_MATCH_TOL * analytic.abs().max(1.0),
            }
        }
    }

    /// Agreement within `k` standard errors, or exact agreement.
    pub fn within(&self, k: f64) -> bool {
        match self.z_score {
            Some(z) => z.abs() <= k,
            None => self.exact_match,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub objective: GapEntry,
    pub constraint: GapEntry,
}

pub fn analytic_vs_empirical_gap(analytic: &CostPair, stats: &EmpiricalStats) -> GapReport {
    GapReport {
        objective: GapEntry::new(analytic.jp, stats.objective_mean, stats.objective_std_error),
        constraint: GapEntry::new(
            analytic.c,
            stats.constraint_mean,
            stats.constraint_std_error,
        ),
    }
}
