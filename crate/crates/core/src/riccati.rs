//! Backward Riccati recursion for the λ-weighted problem.
//!
//! For a multiplier `λ ≥ 0` the constrained problem folds into a standard
//! finite-horizon LQ problem with weights `Q_k + λQ̃_k`, `R_k + λR̃_k` and
//! terminal weight `Qf + λQ̃f`:
//!
//! ```text
//! X_N = Qf + λ Q̃f
//! X_k = Aᵀ X_{k+1} A − Aᵀ X_{k+1} B (R_k + λR̃_k + Bᵀ X_{k+1} B)⁻¹ Bᵀ X_{k+1} A + Q_k + λ Q̃_k
//! F_k = −(R_k + λR̃_k + Bᵀ X_{k+1} B)⁻¹ Bᵀ X_{k+1} A
//! ```

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::LqgProblem;

/// Absolute floor on the smallest eigenvalue of the inverted block.
pub const INV_TOL: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub lambda: f64,
    /// `X_0 ..= X_N`.
    pub x: Vec<DMatrix<f64>>,
    /// `F_0 .. F_{N-1}`, each `m × n`.
    pub gains: Vec<DMatrix<f64>>,
    /// Smallest eigenvalue seen among the inverted blocks.
    pub min_inner_eig: f64,
}

impl RiccatiSolution {
    /// `P_k` for `k < N`:
    /// `[[Q_k + λQ̃_k + AᵀX_{k+1}A, AᵀX_{k+1}B], [BᵀX_{k+1}A, R_k + λR̃_k + BᵀX_{k+1}B]]`.
    pub fn dual_block(&self, p: &LqgProblem, k: usize) -> DMatrix<f64> {
        let (n, m) = (p.n, p.m);
        let lam = self.lambda;
        let xn = &self.x[k + 1];
        let xa = xn * &p.a;
        let xb = xn * &p.b;
        let mut block = DMatrix::zeros(n + m, n + m);
        block
            .view_mut((0, 0), (n, n))
            .copy_from(&(&p.q[k] + &p.q_tilde[k] * lam + p.a.transpose() * &xa));
        let off = p.a.transpose() * &xb;
        block.view_mut((0, n), (n, m)).copy_from(&off);
        block.view_mut((n, 0), (m, n)).copy_from(&off.transpose());
        block
            .view_mut((n, n), (m, m))
            .copy_from(&(&p.r[k] + &p.r_tilde[k] * lam + p.b.transpose() * &xb));
        block
    }
}

/// Runs the backward pass at multiplier `lambda`.
///
/// Fails with [`Error::InnerBlockNotPD`] when some
/// `R_k + λR̃_k + Bᵀ X_{k+1} B` has smallest eigenvalue `≤ INV_TOL`; no
/// pseudo-inverse fallback is attempted.
pub fn riccati_backward(p: &LqgProblem, lambda: f64) -> Result<RiccatiSolution> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "lambda must be finite and nonnegative, got {lambda}"
        )));
    }
    let horizon = p.horizon;
    let at = p.a.transpose();
    let bt = p.b.transpose();

    let mut x = vec![DMatrix::zeros(0, 0); horizon + 1];
    let mut gains = vec![DMatrix::zeros(0, 0); horizon];
    let mut terminal = &p.qf + &p.qf_tilde * lambda;
    linalg::symmetrize_in_place(&mut terminal);
    x[horizon] = terminal;
    let mut min_inner_eig = f64::INFINITY;

    for k in (0..horizon).rev() {
        let next = &x[k + 1];
        let xa = next * &p.a;
        let xb = next * &p.b;
        let mut inner = &p.r[k] + &p.r_tilde[k] * lambda + &bt * &xb;
        linalg::symmetrize_in_place(&mut inner);
        let lo = linalg::min_eigenvalue(&inner);
        min_inner_eig = min_inner_eig.min(lo);
        if !(lo > INV_TOL) {
            return Err(Error::InnerBlockNotPD {
                step: k,
                lambda,
                min_eig: lo,
            });
        }
        let chol = inner.cholesky().ok_or(Error::InnerBlockNotPD {
            step: k,
            lambda,
            min_eig: lo,
        })?;
        // G = Bᵀ X_{k+1} A, F = −inner⁻¹ G
        let g = &bt * &xa;
        let gain = -chol.solve(&g);
        // −Aᵀ X B inner⁻¹ Bᵀ X A = Gᵀ F
        let mut xk = &at * &xa + g.transpose() * &gain + &p.q[k] + &p.q_tilde[k] * lambda;
        linalg::symmetrize_in_place(&mut xk);
        x[k] = xk;
        gains[k] = gain;
    }

    Ok(RiccatiSolution {
        lambda,
        x,
        gains,
        min_inner_eig,
    })
}

/// `max_k ‖rhs_k − X_k‖_F / (1 + ‖X_k‖_F)`, where `rhs_k` is the Riccati
/// right-hand side evaluated at `X_{k+1}`. The terminal condition is
/// included as `k = N`.
pub fn riccati_residual(p: &LqgProblem, sol: &RiccatiSolution) -> f64 {
    let lam = sol.lambda;
    let at = p.a.transpose();
    let bt = p.b.transpose();
    let rel = |lhs: &DMatrix<f64>, xk: &DMatrix<f64>| (lhs - xk).norm() / (1.0 + xk.norm());

    let terminal = &p.qf + &p.qf_tilde * lam;
    let mut worst = rel(&terminal, &sol.x[p.horizon]);
    for k in 0..p.horizon {
        let next = &sol.x[k + 1];
        let inner = &p.r[k] + &p.r_tilde[k] * lam + &bt * next * &p.b;
        let g = &bt * next * &p.a;
        let correction = match inner.clone().try_inverse() {
            Some(inv) => g.transpose() * inv * &g,
            None => return f64::INFINITY,
        };
        let rhs = &at * next * &p.a - correction + &p.q[k] + &p.q_tilde[k] * lam;
        worst = worst.max(rel(&rhs, &sol.x[k]));
    }
    worst
}
