//! Dense convex QP: `min ½ z'Hz + f'z  s.t.  G z ≤ g,  A z = b`.
//!
//! Primal active-set method. A start that violates the inequalities is first
//! repaired by a Phase-I linear program (`min t  s.t.  Gz - t ≤ g`), solved by
//! the same active-set iteration. Equality rows stay in the working set
//! throughout. When `H` is positive definite each working-set subproblem is
//! solved in range-space form with a cached Cholesky factor of `H`; otherwise
//! a null-space solve handles zero-curvature directions.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize, DenseMatrix};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProgram {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub g_ineq: DMatrix<f64>,
    pub h_ineq: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
}

impl QuadraticProgram {
    pub fn new(h: DMatrix<f64>, f: DVector<f64>) -> Self {
        let d = f.len();
        Self {
            h,
            f,
            g_ineq: DMatrix::zeros(0, d),
            h_ineq: DVector::zeros(0),
            a_eq: DMatrix::zeros(0, d),
            b_eq: DVector::zeros(0),
        }
    }

    pub fn with_inequalities(mut self, g: DMatrix<f64>, h: DVector<f64>) -> Self {
        self.g_ineq = g;
        self.h_ineq = h;
        self
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.f.dot(z)
    }

    /// Largest violation of any constraint at `z` (zero when feasible).
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let ineq = (&self.g_ineq * z - &self.h_ineq).iter().fold(0.0f64, |m, v| m.max(*v));
        let eq = (&self.a_eq * z - &self.b_eq).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        ineq.max(eq)
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.h.shape() != (d, d) {
            return Err(Error::Dimension(format!("H is {:?}, expected {d}x{d}", self.h.shape())));
        }
        if self.g_ineq.ncols() != d || self.g_ineq.nrows() != self.h_ineq.len() {
            return Err(Error::Dimension(format!(
                "inequalities: G {:?} with {} bounds",
                self.g_ineq.shape(),
                self.h_ineq.len()
            )));
        }
        if self.a_eq.ncols() != d || self.a_eq.nrows() != self.b_eq.len() {
            return Err(Error::Dimension(format!(
                "equalities: A {:?} with {} right-hand sides",
                self.a_eq.shape(),
                self.b_eq.len()
            )));
        }
        let finite = self.h.iter().chain(self.f.iter()).chain(self.g_ineq.iter()).chain(self.a_eq.iter()).chain(self.b_eq.iter()).all(|v| v.is_finite())
            && self.h_ineq.iter().all(|v| !v.is_nan() && *v != f64::NEG_INFINITY);
        if !finite {
            return Err(Error::InvalidParameter("QP data contains non-finite entries".into()));
        }
        let scale = 1.0 + linalg::inf_norm(&self.h);
        if linalg::inf_norm(&(&self.h - self.h.transpose())) > 1e-10 * scale {
            return Err(Error::InvalidParameter("H must be symmetric".into()));
        }
        if d > 0 && linalg::min_symmetric_eigenvalue(&self.h) < -1e-9 * scale {
            return Err(Error::InvalidParameter("H must be positive semidefinite".into()));
        }
        Ok(())
    }

    /// Plain-text dump for offline debugging.
    pub fn to_toml(&self) -> Result<String> {
        let dump = QpDump {
            h: (&self.h).into(),
            f: self.f.iter().copied().collect(),
            g_ineq: (&self.g_ineq).into(),
            h_ineq: self.h_ineq.iter().copied().collect(),
            a_eq: (&self.a_eq).into(),
            b_eq: self.b_eq.iter().copied().collect(),
        };
        toml::to_string(&dump).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let d: QpDump = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Self {
            h: (&d.h).try_into()?,
            f: DVector::from_vec(d.f),
            g_ineq: (&d.g_ineq).try_into()?,
            h_ineq: DVector::from_vec(d.h_ineq),
            a_eq: (&d.a_eq).try_into()?,
            b_eq: DVector::from_vec(d.b_eq),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct QpDump {
    h: DenseMatrix,
    f: Vec<f64>,
    g_ineq: DenseMatrix,
    h_ineq: Vec<f64>,
    a_eq: DenseMatrix,
    b_eq: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    /// Scaled KKT residual: the worst of stationarity, primal feasibility,
    /// dual feasibility and complementarity, divided by
    /// `1 + ‖f‖∞ + ‖H‖∞‖z‖∞`.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Inequality multipliers (`≥ 0` at an optimum).
    pub lambda: DVector<f64>,
    /// Equality multipliers.
    pub mu: DVector<f64>,
    /// Inequalities in the final working set, ascending.
    pub active: Vec<usize>,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Solve with a fresh solver and default settings.
pub fn solve_qp(p: &QuadraticProgram, warm_start: Option<&DVector<f64>>) -> Result<QpSolution> {
    ActiveSetSolver::default().solve(p, warm_start)
}

/// Active-set solver with its workspace. Not meant to be shared between threads.
#[derive(Debug, Clone)]
pub struct ActiveSetSolver {
    pub max_iterations: Option<usize>,
    /// Feasibility tolerance on constraint residuals.
    pub feasibility_tol: f64,
    cached_h: Option<(DMatrix<f64>, Cholesky<f64, Dyn>)>,
}

impl Default for ActiveSetSolver {
    fn default() -> Self {
        Self { max_iterations: None, feasibility_tol: 1e-9, cached_h: None }
    }
}

/// Working-set subproblem result.
struct EqpStep {
    p: DVector<f64>,
    /// Multipliers for the working-set rows, in row order.
    multipliers: DVector<f64>,
    /// `p` is a zero-curvature descent ray rather than a Newton step.
    ray: bool,
}

struct Problem<'a> {
    h: &'a DMatrix<f64>,
    f: &'a DVector<f64>,
    g: &'a DMatrix<f64>,
    gh: &'a DVector<f64>,
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
}

enum Outcome {
    Optimal,
    Unbounded,
    MaxIterations,
    /// Phase I reached a feasible point early.
    Feasible,
}

impl ActiveSetSolver {
    pub fn new() -> Self {
        Self::default()
    }

    fn iteration_cap(&self, d: usize, q: usize) -> usize {
        self.max_iterations.unwrap_or(50 * (d + q) + 100)
    }

    pub fn solve(&mut self, p: &QuadraticProgram, warm_start: Option<&DVector<f64>>) -> Result<QpSolution> {
        p.validate()?;
        let d = p.dim();
        let q = p.h_ineq.len();
        if let Some(z0) = warm_start {
            if z0.len() != d {
                return Err(Error::Dimension(format!("warm start has length {}, expected {d}", z0.len())));
            }
        }
        let neq = p.a_eq.nrows();
        if neq > 0 && linalg::numerical_rank(&p.a_eq, 1e-12) < neq {
            return Err(Error::InvalidParameter("equality constraints are linearly dependent".into()));
        }

        // Start point on the equality manifold.
        let mut z = warm_start.cloned().unwrap_or_else(|| DVector::zeros(d));
        if neq > 0 {
            let resid = &p.b_eq - &p.a_eq * &z;
            let aat = &p.a_eq * p.a_eq.transpose();
            let corr = aat.lu().solve(&resid).ok_or_else(|| Error::Singular("A A' is singular".into()))?;
            z += p.a_eq.transpose() * corr;
        }
        let tol = self.feasibility_tol * (1.0 + p.h_ineq.amax());
        let mut iterations = 0;

        let violation = (&p.g_ineq * &z - &p.h_ineq).iter().fold(0.0f64, |m, v| m.max(*v));
        if violation > tol {
            match self.phase_one(p, &z, &mut iterations)? {
                Some(feasible) => z = feasible,
                None => return Ok(self.report(p, z, QpStatus::Infeasible, iterations, &[], None)),
            }
        }

        let chol = self.factor(&p.h);
        let problem = Problem { h: &p.h, f: &p.f, g: &p.g_ineq, gh: &p.h_ineq, a: &p.a_eq, b: &p.b_eq };
        let mut working = initial_working_set(&p.g_ineq, &p.h_ineq, &p.a_eq, &z, tol);
        let cap = self.iteration_cap(d, q);
        let (outcome, mults) =
            run_active_set(&problem, chol.as_ref(), &mut z, &mut working, &mut iterations, cap, tol, false)?;
        let status = match outcome {
            Outcome::Optimal | Outcome::Feasible => QpStatus::Optimal,
            Outcome::Unbounded => QpStatus::Unbounded,
            Outcome::MaxIterations => QpStatus::MaxIterations,
        };
        Ok(self.report(p, z, status, iterations, &working, Some(&mults)))
    }

    fn factor(&mut self, h: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
        if let Some((cached, chol)) = &self.cached_h {
            if cached == h {
                return Some(chol.clone());
            }
        }
        let chol = symmetrize(h).cholesky()?;
        // Reject numerically singular factors; the null-space path handles those.
        let diag = chol.l_dirty().diagonal();
        let (dmin, dmax) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        if dmax == 0.0 || dmin / dmax < 1e-7 {
            return None;
        }
        self.cached_h = Some((h.clone(), chol.clone()));
        Some(chol)
    }

    /// Phase I: `min t` over `(z, t)` with `G z - t ≤ g`, `t ≥ -1`, equalities kept.
    fn phase_one(&self, p: &QuadraticProgram, z0: &DVector<f64>, iterations: &mut usize) -> Result<Option<DVector<f64>>> {
        let d = p.dim();
        let q = p.h_ineq.len();
        let neq = p.a_eq.nrows();
        let violation = (&p.g_ineq * z0 - &p.h_ineq).iter().fold(0.0f64, |m, v| m.max(*v));

        let h = DMatrix::zeros(d + 1, d + 1);
        let mut f = DVector::zeros(d + 1);
        f[d] = 1.0;
        let mut g = DMatrix::zeros(q + 1, d + 1);
        g.view_mut((0, 0), (q, d)).copy_from(&p.g_ineq);
        g.view_mut((0, d), (q, 1)).fill(-1.0);
        g[(q, d)] = -1.0;
        let mut gh = DVector::zeros(q + 1);
        gh.rows_mut(0, q).copy_from(&p.h_ineq);
        gh[q] = 1.0;
        let mut a = DMatrix::zeros(neq, d + 1);
        a.view_mut((0, 0), (neq, d)).copy_from(&p.a_eq);

        let mut x = DVector::zeros(d + 1);
        x.rows_mut(0, d).copy_from(z0);
        x[d] = violation + 1.0;

        let problem = Problem { h: &h, f: &f, g: &g, gh: &gh, a: &a, b: &p.b_eq };
        let mut working = Vec::new();
        let cap = self.iteration_cap(d + 1, q + 1);
        let tol = self.feasibility_tol * (1.0 + p.h_ineq.amax());
        let (outcome, _) = run_active_set(&problem, None, &mut x, &mut working, iterations, cap, tol, true)?;
        match outcome {
            Outcome::Feasible => Ok(Some(x.rows(0, d).into_owned())),
            Outcome::Optimal if x[d] <= tol => Ok(Some(x.rows(0, d).into_owned())),
            Outcome::Optimal => Ok(None),
            Outcome::Unbounded => Err(Error::Infeasible("phase I became unbounded".into())),
            Outcome::MaxIterations => Err(Error::MaxIterations(cap)),
        }
    }

    fn report(
        &self,
        p: &QuadraticProgram,
        z: DVector<f64>,
        status: QpStatus,
        iterations: usize,
        working: &[usize],
        mults: Option<&DVector<f64>>,
    ) -> QpSolution {
        let neq = p.a_eq.nrows();
        let mut lambda = DVector::zeros(p.h_ineq.len());
        let mut mu = DVector::zeros(neq);
        if let Some(m) = mults {
            mu.copy_from(&m.rows(0, neq));
            for (k, &i) in working.iter().enumerate() {
                lambda[i] = m[neq + k];
            }
        }
        let kkt_residual = kkt_residual(p, &z, &lambda, &mu);
        let mut active = working.to_vec();
        active.sort_unstable();
        QpSolution { objective: p.objective(&z), z, status, kkt_residual, iterations, lambda, mu, active }
    }
}

/// Scaled KKT residual of a candidate primal-dual point.
pub fn kkt_residual(p: &QuadraticProgram, z: &DVector<f64>, lambda: &DVector<f64>, mu: &DVector<f64>) -> f64 {
    let grad = &p.h * z + &p.f + p.g_ineq.transpose() * lambda + p.a_eq.transpose() * mu;
    let stationarity = grad.amax();
    let slack = &p.h_ineq - &p.g_ineq * z;
    let primal = slack.iter().fold(0.0f64, |m, s| m.max(-s)).max(if mu.is_empty() {
        0.0
    } else {
        (&p.a_eq * z - &p.b_eq).amax()
    });
    let dual = lambda.iter().fold(0.0f64, |m, l| m.max(-l));
    let comp = lambda.iter().zip(slack.iter()).fold(0.0f64, |m, (l, s)| m.max((l * s).abs()));
    let scale = 1.0 + p.f.amax() + linalg::inf_norm(&p.h) * z.amax();
    stationarity.max(primal).max(dual).max(comp) / scale
}

/// Inequalities active at `z`, greedily reduced (ascending index) to a set
/// whose rows stay linearly independent of each other and of the equalities.
fn initial_working_set(
    g: &DMatrix<f64>,
    gh: &DVector<f64>,
    a: &DMatrix<f64>,
    z: &DVector<f64>,
    tol: f64,
) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let push = |row: DVector<f64>, basis: &mut Vec<DVector<f64>>| -> bool {
        let norm = row.norm();
        if norm == 0.0 {
            return false;
        }
        let mut r = row;
        for _ in 0..2 {
            for b in basis.iter() {
                let c = b.dot(&r);
                r.axpy(-c, b, 1.0);
            }
        }
        let rn = r.norm();
        if rn <= 1e-10 * norm {
            return false;
        }
        basis.push(r / rn);
        true
    };
    for i in 0..a.nrows() {
        push(a.row(i).transpose(), &mut basis);
    }
    let mut working = Vec::new();
    for i in 0..g.nrows() {
        let slack = gh[i] - g.row(i).dot(&z.transpose());
        if slack <= tol && push(g.row(i).transpose(), &mut basis) {
            working.push(i);
        }
    }
    working
}

/// Rows of the working set: equalities first, then active inequalities.
fn working_matrix(pr: &Problem, working: &[usize]) -> DMatrix<f64> {
    let d = pr.f.len();
    let neq = pr.a.nrows();
    let mut m = DMatrix::zeros(neq + working.len(), d);
    m.view_mut((0, 0), (neq, d)).copy_from(pr.a);
    for (k, &i) in working.iter().enumerate() {
        m.row_mut(neq + k).copy_from(&pr.g.row(i));
    }
    m
}

/// Solve `min ½p'Hp + grad'p  s.t.  W p = 0`.
fn solve_eqp(h: &DMatrix<f64>, chol: Option<&Cholesky<f64, Dyn>>, w: &DMatrix<f64>, grad: &DVector<f64>) -> Result<EqpStep> {
    let d = grad.len();
    let k = w.nrows();
    if let Some(chol) = chol {
        let hg = chol.solve(grad);
        if k == 0 {
            return Ok(EqpStep { p: -hg, multipliers: DVector::zeros(0), ray: false });
        }
        let y = chol.solve(&w.transpose());
        let s = symmetrize(&(w * &y));
        let rhs = -(w * &hg);
        let lam = match s.clone().cholesky() {
            Some(c) => c.solve(&rhs),
            None => s.lu().solve(&rhs).ok_or_else(|| Error::Singular("working set became dependent".into()))?,
        };
        let p = -hg - y * &lam;
        return Ok(EqpStep { p, multipliers: lam, ray: false });
    }

    // Null-space method for PSD H.
    let z_basis = if k == 0 {
        DMatrix::identity(d, d)
    } else {
        null_space(w)
    };
    let nz = z_basis.ncols();
    let mut p = DVector::zeros(d);
    let mut ray = false;
    if nz > 0 {
        let hr = symmetrize(&(z_basis.transpose() * h * &z_basis));
        let gr = z_basis.transpose() * grad;
        let eig = hr.symmetric_eigen();
        let emax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let curv_tol = 1e-10 * emax.max(1.0);
        let mut flat = DVector::zeros(nz);
        let mut newton = DVector::zeros(nz);
        for (j, lam) in eig.eigenvalues.iter().enumerate() {
            let v = eig.eigenvectors.column(j);
            let c = v.dot(&gr);
            if *lam > curv_tol {
                newton -= v * (c / lam);
            } else {
                flat -= v * c;
            }
        }
        if flat.amax() > 1e-12 * (1.0 + gr.amax()) {
            p = &z_basis * flat;
            ray = true;
        } else {
            p = &z_basis * newton;
        }
    }
    let multipliers = if k == 0 {
        DVector::zeros(0)
    } else {
        // W' λ = -(grad + H p), least squares.
        let rhs = -(grad + h * &p);
        let wt = w.transpose();
        let svd = wt.svd(true, true);
        svd.solve(&rhs, 1e-12).map_err(|e| Error::Singular(e.to_string()))?
    };
    Ok(EqpStep { p, multipliers, ray })
}

/// Orthonormal basis of `{p : W p = 0}`.
fn null_space(w: &DMatrix<f64>) -> DMatrix<f64> {
    let d = w.ncols();
    // Full SVD of W' (d × k): columns of U beyond the rank span the null space of W.
    let wt = w.transpose();
    let k = wt.ncols();
    let mut padded = DMatrix::zeros(d, d.max(k));
    padded.view_mut((0, 0), (d, k)).copy_from(&wt);
    let svd = padded.svd(true, false);
    let u = svd.u.expect("requested U");
    let sv = svd.singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let rank = sv.iter().filter(|s| **s > 1e-12 * smax.max(1e-300)).count();
    // nalgebra does not sort singular values; collect the columns with small ones.
    let cols: Vec<usize> = (0..sv.len()).filter(|&j| sv[j] <= 1e-12 * smax.max(1e-300)).collect();
    debug_assert_eq!(cols.len(), d - rank.min(d));
    let mut z = DMatrix::zeros(d, cols.len());
    for (c, &j) in cols.iter().enumerate() {
        z.column_mut(c).copy_from(&u.column(j));
    }
    z
}

#[allow(clippy::too_many_arguments)]
fn run_active_set(
    pr: &Problem,
    chol: Option<&Cholesky<f64, Dyn>>,
    z: &mut DVector<f64>,
    working: &mut Vec<usize>,
    iterations: &mut usize,
    cap: usize,
    tol: f64,
    phase_one: bool,
) -> Result<(Outcome, DVector<f64>)> {
    let d = pr.f.len();
    let q = pr.gh.len();
    let neq = pr.a.nrows();
    let mut last_obj = f64::INFINITY;
    let objective = |z: &DVector<f64>| 0.5 * z.dot(&(pr.h * z)) + pr.f.dot(z);
    let _ = pr.b;

    loop {
        if *iterations >= cap {
            return Ok((Outcome::MaxIterations, DVector::zeros(neq + working.len())));
        }
        *iterations += 1;

        if phase_one && z[d - 1] <= 0.0 {
            return Ok((Outcome::Feasible, DVector::zeros(neq + working.len())));
        }

        let obj = objective(z);
        debug_assert!(
            obj <= last_obj + 1e-9 * (1.0 + obj.abs()),
            "active-set objective increased from {last_obj} to {obj}"
        );
        last_obj = obj;

        let grad = pr.h * &*z + pr.f;
        let w = working_matrix(pr, working);
        let step = solve_eqp(pr.h, chol, &w, &grad)?;
        let pnorm = step.p.amax();
        let znorm = 1.0 + z.amax();

        if !step.ray && pnorm <= 1e-12 * znorm {
            // Stationary on the working set: check inequality multipliers.
            let mut worst: Option<(usize, f64)> = None;
            for (k, _) in working.iter().enumerate() {
                let l = step.multipliers[neq + k];
                let threshold = -1e-10 * (1.0 + grad.amax());
                if l < threshold && worst.map_or(true, |(_, v)| l < v) {
                    worst = Some((k, l));
                }
            }
            match worst {
                None => return Ok((Outcome::Optimal, step.multipliers)),
                Some((k, _)) => {
                    working.remove(k);
                    continue;
                }
            }
        }

        // Ratio test over inequalities outside the working set; ties → lowest index.
        let mut alpha = if step.ray { f64::INFINITY } else { 1.0 };
        let mut blocking = None;
        for i in 0..q {
            if working.contains(&i) {
                continue;
            }
            let row = pr.g.row(i);
            let ap = row.dot(&step.p.transpose());
            if ap <= 1e-14 * row.amax() * pnorm {
                continue;
            }
            let slack = (pr.gh[i] - row.dot(&z.transpose())).max(0.0);
            let ratio = slack / ap;
            if ratio < alpha {
                alpha = ratio;
                blocking = Some(i);
            }
        }
        if !alpha.is_finite() {
            return Ok((Outcome::Unbounded, step.multipliers));
        }
        z.axpy(alpha, &step.p, 1.0);
        if let Some(i) = blocking {
            working.push(i);
        }
        let _ = tol;
    }
}
