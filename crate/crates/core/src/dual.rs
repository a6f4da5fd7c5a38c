//! Multiplier search for the energy-constrained problem.
//!
//! `f(λ) = C(S^λ) − γ` is the constraint gap of the λ-optimal policy. It is
//! non-increasing in `λ`, so a root is found by bisection. A root `λ* > 0`
//! (or `λ* = 0` when `f(0) ≤ 0`) gives gains that satisfy the KKT system,
//! and a multiplier with `|f(λ)| ≤ ρ` is exactly optimal for the budget
//! `γ + f(λ)`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moments::{self, CostPair, MomentTrajectory};
use crate::problem::LqgProblem;
use crate::riccati::{self, RiccatiSolution};

/// Maximum number of times `lambda_bar` is doubled while looking for
/// `f(λ̄) < 0`.
pub const BRACKET_MAX_DOUBLINGS: u32 = 60;

/// Everything computed while evaluating `f` at one multiplier.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub lambda: f64,
    pub f: f64,
    pub riccati: RiccatiSolution,
    pub moments: MomentTrajectory,
    pub costs: CostPair,
}

/// Evaluates `f(λ) = C − γ` with the λ-optimal gains.
pub fn f_eval(p: &LqgProblem, lambda: f64) -> Result<Evaluation> {
    let riccati = riccati::riccati_backward(p, lambda)?;
    let mut traj = moments::moment_forward(p, &riccati.gains);
    traj.lambda_tag = Some(lambda);
    let costs = moments::costs(p, &traj);
    Ok(Evaluation {
        lambda,
        f: costs.c - p.gamma,
        riccati,
        moments: traj,
        costs,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    /// `f(0) ≤ 0`: the unconstrained optimum already meets the budget.
    Inactive,
    /// Bisection located a positive multiplier.
    Active,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub eps: f64,
    pub lambda_bar: f64,
    pub auto_bracket: bool,
    /// Early-exit threshold on `|f(c)|`; `None` means `1e-12 · (1 + |γ|)`.
    pub f_tol: Option<f64>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            eps: 1e-6,
            lambda_bar: 100.0,
            auto_bracket: true,
            f_tol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveResult {
    pub lambda_star: f64,
    /// Gains `F_0 .. F_{N−1}` as row-major nested arrays.
    #[serde(with = "gain_serde")]
    pub gains: Vec<DMatrix<f64>>,
    pub jp: f64,
    pub c: f64,
    /// `f(λ*) = C − γ`.
    pub f_residual: f64,
    pub iterations: u32,
    pub scenario: Scenario,
    /// `γ + f(λ*)`, the budget for which the returned policy is optimal.
    pub gamma_effective: f64,
    pub gamma: f64,
    /// Number of calls to [`f_eval`].
    pub evaluations: u32,
    /// Upper bracket after any doubling.
    pub lambda_bar_final: f64,
}

mod gain_serde {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(gains: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let nested: Vec<Vec<Vec<f64>>> = gains
            .iter()
            .map(|g| g.row_iter().map(|r| r.iter().copied().collect()).collect())
            .collect();
        nested.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let nested = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        nested
            .into_iter()
            .map(|rows| {
                let nrows = rows.len();
                let ncols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(serde::de::Error::custom("ragged gain matrix"));
                }
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
            })
            .collect()
    }
}

/// `⌈log2(λ̄/ε)⌉ + 1`, the most bisection iterations on `[0, λ̄]`.
pub fn iteration_bound(lambda_bar: f64, eps: f64) -> u32 {
    (lambda_bar / eps).log2().ceil().max(0.0) as u32 + 1
}

fn finish(
    p: &LqgProblem,
    eval: Evaluation,
    scenario: Scenario,
    iterations: u32,
    evaluations: u32,
    lambda_bar: f64,
) -> SolveResult {
    SolveResult {
        lambda_star: eval.lambda,
        gains: eval.riccati.gains,
        jp: eval.costs.jp,
        c: eval.costs.c,
        f_residual: eval.f,
        iterations,
        scenario,
        gamma_effective: p.gamma + eval.f,
        gamma: p.gamma,
        evaluations,
        lambda_bar_final: lambda_bar,
    }
}

/// Bisection on `f` over `[0, λ̄]`.
///
/// Returns `λ* = 0` when `f(0) ≤ 0`. Otherwise `f` is cached at the bracket
/// ends so that each iteration evaluates only the midpoint. A midpoint with
/// `f = 0` moves the upper end. The loop stops when `(b − a)/2 ≤ ε` or
/// `|f(c)| ≤ f_tol`, returning the last midpoint.
///
/// The upper end must satisfy `f(λ̄) < 0` strictly. With `auto_bracket`,
/// `λ̄` is doubled (up to [`BRACKET_MAX_DOUBLINGS`] times) until it does;
/// the previous `λ̄` becomes the lower end.
pub fn solve(p: &LqgProblem, opts: &SolveOptions) -> Result<SolveResult> {
    if !(opts.eps > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "eps must be positive, got {}",
            opts.eps
        )));
    }
    if !(opts.lambda_bar > 0.0) || !opts.lambda_bar.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda_bar must be positive, got {}",
            opts.lambda_bar
        )));
    }
    let f_tol = opts.f_tol.unwrap_or(1e-12 * (1.0 + p.gamma.abs()));
    let mut evaluations = 0u32;
    let mut eval = |lambda: f64| {
        evaluations += 1;
        f_eval(p, lambda).map_err(|e| Error::AtLambda {
            lambda,
            source: Box::new(e),
        })
    };

    let at_zero = eval(0.0)?;
    if at_zero.f <= 0.0 {
        return Ok(finish(
            p,
            at_zero,
            Scenario::Inactive,
            0,
            evaluations,
            opts.lambda_bar,
        ));
    }

    let mut lo = 0.0;
    let mut hi = opts.lambda_bar;
    let mut at_hi = eval(hi)?;
    let mut doublings = 0;
    while at_hi.f >= 0.0 {
        if !opts.auto_bracket || doublings == BRACKET_MAX_DOUBLINGS {
            return Err(Error::BracketFailure {
                lambda_bar: hi,
                f_value: at_hi.f,
                doublings,
            });
        }
        lo = hi;
        hi *= 2.0;
        doublings += 1;
        at_hi = eval(hi)?;
    }

    let bracket_end = hi;
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        let at_mid = eval(mid)?;
        if 0.5 * (hi - lo) <= opts.eps || at_mid.f.abs() <= f_tol {
            return Ok(finish(
                p,
                at_mid,
                Scenario::Active,
                iterations,
                evaluations,
                bracket_end,
            ));
        }
        if at_mid.f > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub f: f64,
    pub jp: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub grid: Vec<f64>,
}

/// `f`, `J_p` and `C` at each grid point. Points are evaluated in parallel;
/// rows come back in grid order.
pub fn lambda_sweep(p: &LqgProblem, grid: &[f64]) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("lambda grid is empty".into()));
    }
    if let Some(bad) = grid.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda grid contains {bad}"
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(
            "lambda grid must be strictly increasing".into(),
        ));
    }
    let rows = grid
        .par_iter()
        .map(|&lambda| {
            f_eval(p, lambda)
                .map(|e| SweepRow {
                    lambda,
                    f: e.f,
                    jp: e.costs.jp,
                    c: e.costs.c,
                })
                .map_err(|e| Error::AtLambda {
                    lambda,
                    source: Box::new(e),
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepTable {
        rows,
        grid: grid.to_vec(),
    })
}

/// `start, start + step, …` up to `end` inclusive (with a half-step
/// allowance for round-off). Points are computed as `start + i·step`.
pub fn linear_grid(start: f64, step: f64, end: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !start.is_finite() || !end.is_finite() || end < start {
        return Err(Error::InvalidArgument(format!(
            "invalid grid {start}:{step}:{end}"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + i as f64 * step).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// Largest deviation in the moment recursion plus `max(0, C − γ)`.
    pub primal_feasibility_resid: f64,
    /// `|λ (C − γ)|`.
    pub slackness_resid: f64,
    /// `|λ (C − γ_effective)|`; zero when the result is exact for the
    /// effective budget.
    pub slackness_effective_resid: f64,
    pub dual_feasible: bool,
    /// `max_k ‖P_{k,12}ᵀ + P_{k,22} F_k‖_F`.
    pub stationarity_resid: f64,
    /// `max_k ‖P_k‖_F`, for scaling the stationarity residual.
    pub dual_norm_max: f64,
    /// Residual of the backward recursion for `P_k`.
    pub riccati_resid: f64,
}

impl KktReport {
    /// Stationarity within `1e-8 (1 + ‖P‖)` and slackness within
    /// `λ |f| + 1e-12`.
    pub fn certifies(&self, result: &SolveResult) -> bool {
        self.dual_feasible
            && self.stationarity_resid <= 1e-8 * (1.0 + self.dual_norm_max)
            && self.slackness_resid <= result.lambda_star * result.f_residual.abs() + 1e-12
            && self.slackness_effective_resid == 0.0
    }
}

/// KKT residuals of `result`, with the dual matrices `P_k` rebuilt from a
/// fresh backward pass at `λ*` and the moments re-propagated from the
/// returned gains.
pub fn kkt_residuals(p: &LqgProblem, result: &SolveResult) -> Result<KktReport> {
    let lambda = result.lambda_star;
    let sol = riccati::riccati_backward(p, lambda)?;
    let traj = moments::moment_forward(p, &result.gains);
    let (n, m) = (p.n, p.m);

    // Re-verify S_0 = [I; F_0] M_0 [I; F_0]ᵀ and S_k = Φ(F_k, S_{k−1}).
    let ab = p.ab();
    let lifted = |mm: &DMatrix<f64>, f: &DMatrix<f64>| {
        let mut stack = DMatrix::zeros(n + m, n);
        stack.view_mut((0, 0), (n, n)).fill_with_identity();
        stack.view_mut((n, 0), (m, n)).copy_from(f);
        &stack * mm * stack.transpose()
    };
    let mut recursion_gap: f64 = 0.0;
    for k in 0..p.horizon {
        let state = if k == 0 {
            p.initial_moment()
        } else {
            &ab * &traj.s[k - 1] * ab.transpose() + &p.noise_cov
        };
        let expect = lifted(&state, &result.gains[k]);
        recursion_gap = recursion_gap.max((&traj.s[k] - &expect).norm());
    }

    let mut stationarity: f64 = 0.0;
    let mut dual_norm_max: f64 = 0.0;
    for k in 0..p.horizon {
        let block = sol.dual_block(p, k);
        let p12t = block.view((n, 0), (m, n)).into_owned();
        let p22 = block.view((n, n), (m, m)).into_owned();
        stationarity = stationarity.max((p12t + p22 * &result.gains[k]).norm());
        dual_norm_max = dual_norm_max.max(block.norm());
    }

    Ok(KktReport {
        primal_feasibility_resid: recursion_gap + (result.c - p.gamma).max(0.0),
        slackness_resid: (lambda * (result.c - p.gamma)).abs(),
        slackness_effective_resid: (lambda * (result.c - result.gamma_effective)).abs(),
        dual_feasible: lambda >= 0.0,
        stationarity_resid: stationarity,
        dual_norm_max,
        riccati_resid: riccati::riccati_residual(p, &sol),
    })
}
