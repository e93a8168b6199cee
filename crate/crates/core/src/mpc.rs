//! Offset-free tracking MPC on a [`DiscreteLtiModel`].
//!
//! Targets `(x̄, ū)` are recomputed every step from the disturbance estimate
//! and the reference. The finite-horizon problem is condensed onto the input
//! sequence, with one optional scalar slack softening the output upper bound.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dare;
use crate::error::{Error, Result};
use crate::linalg::{self, symmetrize};
use crate::model::DiscreteLtiModel;
use crate::qp::{ActiveSetSolver, QpStatus, QuadraticProgram};

/// Which part of the lifted state carries the stage weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QWeighting {
    /// Only the current sample `x_k` (the first `block_dim` entries).
    #[default]
    LeadingBlock,
    /// Every entry of the lifted state, history included.
    Full,
}

/// Stage weight `scale · I` on the entries selected by `weighting`.
pub fn state_weight(model: &DiscreteLtiModel, scale: f64, weighting: QWeighting) -> DMatrix<f64> {
    let n = model.state_dim();
    let k = match weighting {
        QWeighting::LeadingBlock => model.block_dim().min(n),
        QWeighting::Full => n,
    };
    DMatrix::from_fn(n, n, |i, j| if i == j && i < k { scale } else { 0.0 })
}

/// Hard joint constraints `F_x x_{k+j} + F_u u_{k+j} ≤ f`, `j = 0..N-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedConstraints {
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub f: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    pub horizon: usize,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    /// Terminal weight.
    pub p: DMatrix<f64>,
    /// Hard input bounds; infinite entries are dropped.
    pub input_lower: DVector<f64>,
    pub input_upper: DVector<f64>,
    /// Soft upper bound on `y = C x + C_d d̂` for `j = 0..N-1`.
    pub output_upper: Option<DVector<f64>>,
    pub mixed: Option<MixedConstraints>,
    /// Weight `ρ` of the slack term `ρ s²`.
    pub soft_output_penalty: f64,
}

impl MpcConfig {
    /// Unconstrained configuration.
    pub fn new(horizon: usize, q: DMatrix<f64>, r: DMatrix<f64>, p: DMatrix<f64>) -> Self {
        let m = r.nrows();
        Self {
            horizon,
            q,
            r,
            p,
            input_lower: DVector::from_element(m, f64::NEG_INFINITY),
            input_upper: DVector::from_element(m, f64::INFINITY),
            output_upper: None,
            mixed: None,
            soft_output_penalty: 1e6,
        }
    }

    /// Terminal weight from the Riccati equation for `(A, B, Q, R)`.
    pub fn with_riccati_terminal(model: &DiscreteLtiModel, horizon: usize, q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let sol = dare::solve_dare(model.a(), model.b(), &q, &r)?;
        Ok(Self::new(horizon, q, r, sol.p))
    }

    pub fn with_input_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        self.input_lower = lower;
        self.input_upper = upper;
        self
    }

    pub fn with_output_upper(mut self, bound: DVector<f64>, penalty: f64) -> Self {
        self.output_upper = Some(bound);
        self.soft_output_penalty = penalty;
        self
    }

    pub fn with_mixed(mut self, c: MixedConstraints) -> Self {
        self.mixed = Some(c);
        self
    }

    pub fn validate(&self, model: &DiscreteLtiModel) -> Result<()> {
        let n = model.state_dim();
        let m = model.input_dim();
        let p = model.output_dim();
        if self.horizon == 0 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        for (name, mat, dim) in [("Q", &self.q, n), ("P", &self.p, n), ("R", &self.r, m)] {
            if mat.shape() != (dim, dim) {
                return Err(Error::Dimension(format!("{name} is {:?}, expected {dim}x{dim}", mat.shape())));
            }
            if linalg::inf_norm(&(mat - mat.transpose())) > 1e-10 * (1.0 + linalg::inf_norm(mat)) {
                return Err(Error::InvalidParameter(format!("{name} must be symmetric")));
            }
        }
        if linalg::min_symmetric_eigenvalue(&self.q) < -1e-12 || linalg::min_symmetric_eigenvalue(&self.p) < -1e-12 {
            return Err(Error::InvalidParameter("Q and P must be positive semidefinite".into()));
        }
        if symmetrize(&self.r).cholesky().is_none() {
            return Err(Error::InvalidParameter("R must be positive definite".into()));
        }
        if self.input_lower.len() != m || self.input_upper.len() != m {
            return Err(Error::Dimension("input bounds must have one entry per input".into()));
        }
        if self.input_lower.iter().zip(self.input_upper.iter()).any(|(lo, hi)| lo.is_nan() || hi.is_nan() || lo > hi) {
            return Err(Error::InvalidParameter("input bounds must satisfy lower ≤ upper".into()));
        }
        if let Some(y) = &self.output_upper {
            if y.len() != p {
                return Err(Error::Dimension("output bound must have one entry per output".into()));
            }
            if !(self.soft_output_penalty > 0.0 && self.soft_output_penalty.is_finite()) {
                return Err(Error::InvalidParameter("soft output penalty must be positive".into()));
            }
        }
        if let Some(c) = &self.mixed {
            let q = c.f.len();
            if c.fx.shape() != (q, n) || c.fu.shape() != (q, m) {
                return Err(Error::Dimension("mixed constraint matrices do not match the model".into()));
            }
        }
        Ok(())
    }
}

/// Precomputed map `(x̄; ū) = W (d̂; r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMap {
    w: DMatrix<f64>,
    condition_number: f64,
    residual: f64,
    state_dim: usize,
    disturbance_dim: usize,
}

impl TargetMap {
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    pub fn condition_number(&self) -> f64 {
        self.condition_number
    }
    /// Max-norm residual of the defining linear system.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn targets(&self, d_hat: &DVector<f64>, r: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let rhs = DVector::from_iterator(d_hat.len() + r.len(), d_hat.iter().chain(r.iter()).copied());
        let t = &self.w * rhs;
        let n = self.state_dim;
        (t.rows(0, n).into_owned(), t.rows(n, t.len() - n).into_owned())
    }
}

/// Solve `[[A - I, B], [C, 0]] W = [[-G, 0], [-C_d, I]]`.
pub fn build_target_map(m: &DiscreteLtiModel) -> Result<TargetMap> {
    let n = m.state_dim();
    let nu = m.input_dim();
    let p = m.output_dim();
    let nd = m.disturbance_dim();
    let mut lhs = DMatrix::zeros(n + p, n + nu);
    lhs.view_mut((0, 0), (n, n)).copy_from(&(m.a() - DMatrix::identity(n, n)));
    lhs.view_mut((0, n), (n, nu)).copy_from(m.b());
    lhs.view_mut((n, 0), (p, n)).copy_from(m.c());
    let mut rhs = DMatrix::zeros(n + p, nd + p);
    rhs.view_mut((0, 0), (n, nd)).copy_from(&(-m.g()));
    rhs.view_mut((n, 0), (p, nd)).copy_from(&(-m.c_d()));
    rhs.view_mut((n, nd), (p, p)).fill_with_identity();

    let condition_number = linalg::condition_number(&lhs);
    let square = n + p == n + nu;
    if square && condition_number > 1e14 {
        return Err(Error::Singular(format!(
            "target matrix is singular (condition number {condition_number:.3e}); the plant has a transmission zero at 1"
        )));
    }
    let w = if square {
        lhs.clone().lu().solve(&rhs).ok_or_else(|| Error::Singular("target matrix".into()))?
    } else {
        lhs.clone().svd(true, true).solve(&rhs, 1e-12).map_err(|e| Error::Singular(e.to_string()))?
    };
    let residual = (&lhs * &w - &rhs).amax();
    let tol = if square { 1e-9 * (1.0 + w.amax()) } else { 1e-6 };
    if !(residual <= tol) {
        return Err(Error::Singular(format!("target system residual {residual:.3e} exceeds {tol:.1e}")));
    }
    Ok(TargetMap { w, condition_number, residual, state_dim: n, disturbance_dim: nd })
}

/// Condensed problem data that does not depend on the current estimate.
#[derive(Debug, Clone)]
pub struct CondensedQp {
    cfg: MpcConfig,
    model: DiscreteLtiModel,
    /// Rows `j·n..(j+1)·n` give `x_{k+j+1}` as a function of the input sequence.
    gamma: DMatrix<f64>,
    hessian: DMatrix<f64>,
    g_ineq: DMatrix<f64>,
    /// Row kinds, used to assemble the right-hand side each step.
    rows: Vec<RowKind>,
    slack: bool,
}

#[derive(Debug, Clone, Copy)]
enum RowKind {
    InputUpper { i: usize },
    InputLower { i: usize },
    Output { j: usize, i: usize },
    Mixed { j: usize, i: usize },
    SlackSign,
}

impl CondensedQp {
    pub fn new(cfg: &MpcConfig, model: &DiscreteLtiModel) -> Result<Self> {
        cfg.validate(model)?;
        let n = model.state_dim();
        let m = model.input_dim();
        let horizon = cfg.horizon;
        let nz_u = horizon * m;
        let slack = cfg.output_upper.is_some();
        let nz = nz_u + usize::from(slack);

        // Γ block (j, i) = A^{j-i} B for i ≤ j.
        let mut gamma = DMatrix::zeros(horizon * n, nz_u);
        let mut apow_b = model.b().clone();
        for d in 0..horizon {
            for i in 0..horizon - d {
                let j = i + d;
                gamma.view_mut((j * n, i * m), (n, m)).copy_from(&apow_b);
            }
            apow_b = model.a() * apow_b;
        }

        let mut hessian = DMatrix::zeros(nz, nz);
        {
            let mut huu = DMatrix::zeros(nz_u, nz_u);
            for j in 0..horizon {
                let weight = if j + 1 == horizon { &cfg.p } else { &cfg.q };
                let gj = gamma.rows(j * n, n);
                huu += gj.transpose() * weight * gj;
                let mut blk = huu.view_mut((j * m, j * m), (m, m));
                blk += &cfg.r;
            }
            hessian.view_mut((0, 0), (nz_u, nz_u)).copy_from(&symmetrize(&(huu * 2.0)));
        }
        if slack {
            hessian[(nz_u, nz_u)] = 2.0 * cfg.soft_output_penalty;
        }

        let mut rows = Vec::new();
        let mut g_rows: Vec<DVector<f64>> = Vec::new();
        for j in 0..horizon {
            for i in 0..m {
                if cfg.input_upper[i].is_finite() {
                    let mut r = DVector::zeros(nz);
                    r[j * m + i] = 1.0;
                    g_rows.push(r);
                    rows.push(RowKind::InputUpper { i });
                }
                if cfg.input_lower[i].is_finite() {
                    let mut r = DVector::zeros(nz);
                    r[j * m + i] = -1.0;
                    g_rows.push(r);
                    rows.push(RowKind::InputLower { i });
                }
            }
        }
        if let Some(bound) = &cfg.output_upper {
            for j in 0..horizon {
                for i in 0..model.output_dim() {
                    if !bound[i].is_finite() {
                        continue;
                    }
                    let mut r = DVector::zeros(nz);
                    if j > 0 {
                        let ci = model.c().row(i);
                        let row = ci * gamma.rows((j - 1) * n, n);
                        r.rows_mut(0, nz_u).copy_from(&row.transpose());
                    }
                    r[nz_u] = -1.0;
                    g_rows.push(r);
                    rows.push(RowKind::Output { j, i });
                }
            }
            let mut r = DVector::zeros(nz);
            r[nz_u] = -1.0;
            g_rows.push(r);
            rows.push(RowKind::SlackSign);
        }
        if let Some(c) = &cfg.mixed {
            for j in 0..horizon {
                let mut block = DMatrix::zeros(c.f.len(), nz);
                if j > 0 {
                    block.view_mut((0, 0), (c.f.len(), nz_u)).copy_from(&(&c.fx * gamma.rows((j - 1) * n, n)));
                }
                let mut fu = block.view_mut((0, j * m), (c.f.len(), m));
                fu += &c.fu;
                for i in 0..c.f.len() {
                    g_rows.push(block.row(i).transpose());
                    rows.push(RowKind::Mixed { j, i });
                }
            }
        }
        let mut g_ineq = DMatrix::zeros(g_rows.len(), nz);
        for (k, r) in g_rows.iter().enumerate() {
            g_ineq.row_mut(k).copy_from(&r.transpose());
        }
        Ok(Self { cfg: cfg.clone(), model: model.clone(), gamma, hessian, g_ineq, rows, slack })
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }
    pub fn has_slack(&self) -> bool {
        self.slack
    }
    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    /// Free response `x_{k+j}`, `j = 0..N`, with the disturbance held constant.
    pub fn free_response(&self, x_hat: &DVector<f64>, d_hat: &DVector<f64>) -> Vec<DVector<f64>> {
        let gd = self.model.g() * d_hat;
        let mut out = Vec::with_capacity(self.cfg.horizon + 1);
        out.push(x_hat.clone());
        for j in 0..self.cfg.horizon {
            let next = self.model.a() * &out[j] + &gd;
            out.push(next);
        }
        out
    }

    /// Predicted states `x_{k+j}`, `j = 0..N`, for an input sequence.
    pub fn predict(&self, x_hat: &DVector<f64>, d_hat: &DVector<f64>, inputs: &DVector<f64>) -> Vec<DVector<f64>> {
        let n = self.model.state_dim();
        let forced = &self.gamma * inputs.rows(0, self.gamma.ncols());
        let mut free = self.free_response(x_hat, d_hat);
        for (j, x) in free.iter_mut().enumerate().skip(1) {
            *x += forced.rows((j - 1) * n, n);
        }
        free
    }

    pub fn build(
        &self,
        x_hat: &DVector<f64>,
        d_hat: &DVector<f64>,
        x_bar: &DVector<f64>,
        u_bar: &DVector<f64>,
    ) -> Result<QuadraticProgram> {
        let n = self.model.state_dim();
        let m = self.model.input_dim();
        let horizon = self.cfg.horizon;
        if x_hat.len() != n || x_bar.len() != n || u_bar.len() != m || d_hat.len() != self.model.disturbance_dim() {
            return Err(Error::Dimension("estimate or target has the wrong length".into()));
        }
        let finite = [x_hat, d_hat, x_bar, u_bar].iter().all(|v| v.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::InvalidParameter("non-finite controller input".into()));
        }
        let free = self.free_response(x_hat, d_hat);
        let nz = self.dim();
        let nz_u = horizon * m;

        // f = 2 (Γ' Q̄ (x_free - x̄) - R̄ ū).
        let mut weighted = DVector::zeros(horizon * n);
        for j in 0..horizon {
            let weight = if j + 1 == horizon { &self.cfg.p } else { &self.cfg.q };
            weighted.rows_mut(j * n, n).copy_from(&(weight * (&free[j + 1] - x_bar)));
        }
        let mut f = DVector::zeros(nz);
        let mut fu = self.gamma.transpose() * weighted;
        let r_ubar = &self.cfg.r * u_bar;
        for j in 0..horizon {
            let mut blk = fu.rows_mut(j * m, m);
            blk -= &r_ubar;
        }
        fu *= 2.0;
        f.rows_mut(0, nz_u).copy_from(&fu);

        let yd = self.model.c_d() * d_hat;
        let rhs = DVector::from_iterator(
            self.rows.len(),
            self.rows.iter().map(|row| match *row {
                RowKind::InputUpper { i } => self.cfg.input_upper[i],
                RowKind::InputLower { i } => -self.cfg.input_lower[i],
                RowKind::Output { j, i } => {
                    let bound = self.cfg.output_upper.as_ref().expect("output rows need a bound")[i];
                    bound - self.model.c().row(i).dot(&free[j].transpose()) - yd[i]
                }
                RowKind::Mixed { j, i } => {
                    let c = self.cfg.mixed.as_ref().expect("mixed rows need constraints");
                    c.f[i] - c.fx.row(i).dot(&free[j].transpose())
                }
                RowKind::SlackSign => 0.0,
            }),
        );
        Ok(QuadraticProgram::new(self.hessian.clone(), f).with_inequalities(self.g_ineq.clone(), rhs))
    }

    /// Cost of an input sequence including the constant terms dropped from the QP.
    pub fn full_cost(
        &self,
        x_hat: &DVector<f64>,
        d_hat: &DVector<f64>,
        x_bar: &DVector<f64>,
        u_bar: &DVector<f64>,
        z: &DVector<f64>,
    ) -> f64 {
        let m = self.model.input_dim();
        let xs = self.predict(x_hat, d_hat, z);
        let mut cost = 0.0;
        for j in 0..self.cfg.horizon {
            let dx = &xs[j] - x_bar;
            let du = z.rows(j * m, m) - u_bar;
            cost += dx.dot(&(&self.cfg.q * &dx)) + du.dot(&(&self.cfg.r * &du));
        }
        let dx = &xs[self.cfg.horizon] - x_bar;
        cost += dx.dot(&(&self.cfg.p * &dx));
        if self.slack {
            cost += self.cfg.soft_output_penalty * z[z.len() - 1].powi(2);
        }
        cost
    }
}

/// One-shot condensed QP for the given estimate and targets.
pub fn build_condensed_qp(
    cfg: &MpcConfig,
    m: &DiscreteLtiModel,
    x_hat: &DVector<f64>,
    d_hat: &DVector<f64>,
    x_bar: &DVector<f64>,
    u_bar: &DVector<f64>,
) -> Result<QuadraticProgram> {
    CondensedQp::new(cfg, m)?.build(x_hat, d_hat, x_bar, u_bar)
}

#[derive(Debug, Clone)]
pub struct MpcStep {
    pub u: DVector<f64>,
    pub x_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
    pub slack: f64,
    pub qp_iterations: usize,
    pub kkt_residual: f64,
    /// Largest correction applied by the final input clamp.
    pub clamp_correction: f64,
}

/// Receding-horizon controller with warm starting.
#[derive(Debug, Clone)]
pub struct MpcController {
    qp: CondensedQp,
    targets: TargetMap,
    solver: ActiveSetSolver,
    warm: Option<DVector<f64>>,
    steps: usize,
}

impl MpcController {
    pub fn new(cfg: &MpcConfig, model: &DiscreteLtiModel) -> Result<Self> {
        Ok(Self {
            qp: CondensedQp::new(cfg, model)?,
            targets: build_target_map(model)?,
            solver: ActiveSetSolver::new(),
            warm: None,
            steps: 0,
        })
    }

    pub fn target_map(&self) -> &TargetMap {
        &self.targets
    }
    pub fn condensed(&self) -> &CondensedQp {
        &self.qp
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn warm_start(&self) -> Option<&DVector<f64>> {
        self.warm.as_ref()
    }

    /// Shifted previous solution (last input repeated, clipped to the input
    /// bounds), with the slack raised until every soft row holds.
    fn initial_guess(&self, prob: &QuadraticProgram, u_bar: &DVector<f64>) -> DVector<f64> {
        let cfg = self.qp.config();
        let m = u_bar.len();
        let horizon = cfg.horizon;
        let nz = self.qp.dim();
        let mut z = DVector::zeros(nz);
        for j in 0..horizon {
            let src = match &self.warm {
                Some(w) => w.rows((j + 1).min(horizon - 1) * m, m).into_owned(),
                None => u_bar.clone(),
            };
            for i in 0..m {
                z[j * m + i] = src[i].clamp(cfg.input_lower[i], cfg.input_upper[i]);
            }
        }
        if self.qp.has_slack() {
            let viol = &prob.g_ineq * &z - &prob.h_ineq;
            let need = self
                .qp
                .rows
                .iter()
                .enumerate()
                .filter(|(_, r)| matches!(r, RowKind::Output { .. }))
                .fold(0.0f64, |acc, (k, _)| acc.max(viol[k]));
            z[nz - 1] = need.max(0.0);
        }
        z
    }

    fn snapshot(&self, x_hat: &DVector<f64>, d_hat: &DVector<f64>, r: &DVector<f64>) -> String {
        format!(
            "step={} x_hat={:?} d_hat={:?} r={:?} warm_start={:?}",
            self.steps,
            x_hat.as_slice(),
            d_hat.as_slice(),
            r.as_slice(),
            self.warm.as_ref().map(|w| w.as_slice().to_vec())
        )
    }

    pub fn step(&mut self, x_hat: &DVector<f64>, d_hat: &DVector<f64>, r: &DVector<f64>) -> Result<MpcStep> {
        mpc_step(self, x_hat, d_hat, r)
    }
}

pub fn mpc_step(ctl: &mut MpcController, x_hat: &DVector<f64>, d_hat: &DVector<f64>, r: &DVector<f64>) -> Result<MpcStep> {
    let step = ctl.steps;
    let fail = |ctl: &MpcController, reason: String| Error::Controller { step, reason, snapshot: ctl.snapshot(x_hat, d_hat, r) };
    if r.len() != ctl.qp.model.output_dim() || !r.iter().all(|v| v.is_finite()) {
        return Err(fail(ctl, "reference has the wrong length or is not finite".into()));
    }
    let (x_bar, u_bar) = ctl.targets.targets(d_hat, r);
    let prob = ctl.qp.build(x_hat, d_hat, &x_bar, &u_bar).map_err(|e| fail(ctl, e.to_string()))?;
    let guess = ctl.initial_guess(&prob, &u_bar);
    let sol = ctl.solver.solve(&prob, Some(&guess)).map_err(|e| fail(ctl, e.to_string()))?;
    if sol.status != QpStatus::Optimal {
        return Err(fail(ctl, format!("QP returned {:?}", sol.status)));
    }

    let cfg = ctl.qp.config();
    let m = u_bar.len();
    let mut u = sol.z.rows(0, m).into_owned();
    let mut clamp_correction = 0.0f64;
    for i in 0..m {
        let c = u[i].clamp(cfg.input_lower[i], cfg.input_upper[i]);
        clamp_correction = clamp_correction.max((c - u[i]).abs());
        u[i] = c;
    }
    let slack = if ctl.qp.has_slack() { sol.z[sol.z.len() - 1] } else { 0.0 };
    ctl.warm = Some(sol.z.clone());
    ctl.steps += 1;
    Ok(MpcStep {
        u,
        x_bar,
        u_bar,
        slack,
        qp_iterations: sol.iterations,
        kkt_residual: sol.kkt_residual,
        clamp_correction,
    })
}
