//! Discrete algebraic Riccati equation
//! `P = A'PA - A'PB(B'PB + R)^{-1}B'PA + Q` and the dual observer gain.
//!
//! Solved with the structure-preserving doubling algorithm; if doubling
//! stalls before the residual target, plain fixed-point iteration takes over.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};

pub const RESIDUAL_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 10_000;
const DOUBLING_MAX_ITER: usize = 100;

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub p: DMatrix<f64>,
    /// Feedback gain `K = (B'PB + R)^{-1} B'PA`; the closed loop is `A - BK`.
    pub k: DMatrix<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl RiccatiSolution {
    pub fn closed_loop_radius(&self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        linalg::spectral_radius(&(a - b * &self.k))
    }
}

/// Right-hand side of the Riccati map together with the gain it implies.
fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let pa = p * a;
    let s = r + b.transpose() * p * b;
    let k = symmetrize(&s)
        .cholesky()
        .ok_or_else(|| Error::Singular("B'PB + R is not positive definite".into()))?
        .solve(&(b.transpose() * &pa));
    let next = a.transpose() * &pa - (a.transpose() * p * b) * &k + q;
    Ok((symmetrize(&next), k))
}

pub fn riccati_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<f64> {
    let (next, _) = riccati_map(a, b, q, r, p)?;
    Ok(linalg::inf_norm(&(p - next)))
}

fn check_inputs(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<()> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::Dimension(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    if linalg::inf_norm(&(q - q.transpose())) > 1e-10 * (1.0 + linalg::inf_norm(q)) {
        return Err(Error::InvalidParameter("Q must be symmetric".into()));
    }
    if linalg::min_symmetric_eigenvalue(q) < -1e-10 {
        return Err(Error::InvalidParameter("Q must be positive semidefinite".into()));
    }
    if m > 0 && symmetrize(r).cholesky().is_none() {
        return Err(Error::InvalidParameter("R must be positive definite".into()));
    }
    Ok(())
}

/// Symmetric square root of a PSD matrix.
fn psd_sqrt(q: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = symmetrize(q).symmetric_eigen();
    let d = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Stabilizing solution of the DARE.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<RiccatiSolution> {
    solve_dare_with_cap(a, b, q, r, DEFAULT_MAX_ITER)
}

pub fn solve_dare_with_cap(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    check_inputs(a, b, q, r)?;
    if !linalg::is_stabilizable(a, b) {
        return Err(Error::ModelCheck("(A, B) is not stabilizable".into()));
    }
    if !linalg::is_detectable(a, &psd_sqrt(q)) {
        return Err(Error::ModelCheck("(A, Q^1/2) is not detectable".into()));
    }

    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let r_inv_bt = symmetrize(r)
        .cholesky()
        .map(|c| c.solve(&b.transpose()))
        .unwrap_or_else(|| DMatrix::zeros(b.ncols(), n));

    let mut ak = a.clone();
    let mut gk = symmetrize(&(b * r_inv_bt));
    let mut hk = symmetrize(q);
    let mut iterations = 0;
    let mut history = Vec::new();

    for _ in 0..DOUBLING_MAX_ITER.min(max_iter) {
        iterations += 1;
        let w = &eye + &gk * &hk;
        let lu = w.lu();
        let (Some(wa), Some(wg)) = (lu.solve(&ak), lu.solve(&gk)) else {
            break;
        };
        let a_next = &ak * &wa;
        let g_next = symmetrize(&(&gk + &ak * &wg * ak.transpose()));
        let h_next = symmetrize(&(&hk + ak.transpose() * &hk * &wa));
        let change = linalg::inf_norm(&(&h_next - &hk));
        let scale = 1.0 + linalg::inf_norm(&h_next);
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if !change.is_finite() {
            break;
        }
        if change <= 1e-15 * scale {
            break;
        }
    }

    let mut p = hk;
    let mut residual = if p.iter().all(|v| v.is_finite()) {
        riccati_residual(a, b, q, r, &p)?
    } else {
        p = symmetrize(q);
        f64::INFINITY
    };
    history.push(residual);

    // Plain iteration from the doubling result (or from Q if doubling failed).
    while residual > RESIDUAL_TOL && iterations < max_iter {
        let (next, _) = riccati_map(a, b, q, r, &p)?;
        p = next;
        iterations += 1;
        residual = riccati_residual(a, b, q, r, &p)?;
        history.push(residual);
    }
    if residual > RESIDUAL_TOL {
        return Err(Error::RiccatiDivergence { iterations, residual, history });
    }

    let (_, k) = riccati_map(a, b, q, r, &p)?;
    Ok(RiccatiSolution { p, k, residual_norm: residual, iterations })
}

#[derive(Debug, Clone)]
pub struct ObserverGain {
    /// Gain `L` in `ξ̂⁺ = Āξ̂ + B̄u + L(C̄ξ̂ - y)`.
    pub l: DMatrix<f64>,
    /// Solution of the dual Riccati equation.
    pub sigma: DMatrix<f64>,
    /// Spectral radius of `Ā + LC̄`.
    pub spectral_radius: f64,
}

/// Steady-state Kalman-type gain `L = -ĀΣC̄'(C̄ΣC̄' + V)^{-1}` for process
/// weight `W` and measurement weight `V`.
pub fn observer_gain(a: &DMatrix<f64>, c: &DMatrix<f64>, w: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<ObserverGain> {
    if !linalg::is_detectable(a, c) {
        return Err(Error::ModelCheck("(C, A) is not detectable; no stabilizing observer gain".into()));
    }
    let dual = solve_dare(&a.transpose(), &c.transpose(), w, v)?;
    let l = -dual.k.transpose();
    let spectral_radius = linalg::spectral_radius(&(a + &l * c));
    if spectral_radius >= 1.0 {
        return Err(Error::ModelCheck(format!("observer gain is not stabilizing (radius {spectral_radius})")));
    }
    Ok(ObserverGain { l, sigma: dual.p, spectral_radius })
}

/// Default observer weights: `1e-2` on plant states, `1e-1` on disturbances, `V = 1e-2 I`.
pub fn default_observer_weights(state_dim: usize, disturbance_dim: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    observer_weights(state_dim, disturbance_dim, 1e-2, 1e-1, 1e-2)
}

pub fn observer_weights(
    state_dim: usize,
    disturbance_dim: usize,
    state_weight: f64,
    disturbance_weight: f64,
    measurement_weight: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = state_dim + disturbance_dim;
    let w = DMatrix::from_fn(n, n, |i, j| match (i == j, i < state_dim) {
        (true, true) => state_weight,
        (true, false) => disturbance_weight,
        _ => 0.0,
    });
    (w, DMatrix::identity(disturbance_dim, disturbance_dim) * measurement_weight)
}
