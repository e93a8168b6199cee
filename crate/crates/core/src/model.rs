//! Finite-dimensional LTI models of fractional-order systems.
//!
//! A fractional system `Σ_i A_i D^{α_i} x = Σ_i B_i D^{β_i} u` is discretized
//! with the truncated GL operator of memory `ν` and rewritten as
//! `x̃_{k+1} = A x̃_k + B u_k + G d_k`, `y_k = C x̃_k + C_d d_k`, where `x̃_k`
//! stacks recent states and, when the input operator has memory, past inputs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gl::gl_coefficients;
use crate::linalg::{self, DenseMatrix, RANK_TOL};

/// One `(matrix, order)` pair of a fractional system description.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixTerm {
    pub matrix: DMatrix<f64>,
    pub order: f64,
}

impl MatrixTerm {
    pub fn new(matrix: DMatrix<f64>, order: f64) -> Self {
        Self { matrix, order }
    }
}

/// Continuous-time fractional-order system with output and disturbance maps.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalModel {
    state_terms: Vec<MatrixTerm>,
    input_terms: Vec<MatrixTerm>,
    input_dim: usize,
    output: DMatrix<f64>,
    output_disturbance: DMatrix<f64>,
    disturbance_input: DMatrix<f64>,
}

impl FractionalModel {
    /// `disturbance_input` (`B_d`, n×p) is how the lumped disturbance enters the
    /// state equation; `output_disturbance` (`C_d`, p×p) its direct effect on `y`.
    pub fn new(
        state_terms: Vec<MatrixTerm>,
        input_terms: Vec<MatrixTerm>,
        input_dim: usize,
        output: DMatrix<f64>,
        output_disturbance: DMatrix<f64>,
        disturbance_input: DMatrix<f64>,
    ) -> Result<Self> {
        let first = state_terms
            .first()
            .ok_or_else(|| Error::InvalidParameter("at least one state term is required".into()))?;
        let n = first.matrix.nrows();
        for (i, t) in state_terms.iter().enumerate() {
            if t.matrix.shape() != (n, n) {
                return Err(Error::Dimension(format!(
                    "state term {i} is {:?}, expected {n}x{n}",
                    t.matrix.shape()
                )));
            }
        }
        for (i, t) in input_terms.iter().enumerate() {
            if t.matrix.shape() != (n, input_dim) {
                return Err(Error::Dimension(format!(
                    "input term {i} is {:?}, expected {n}x{input_dim}",
                    t.matrix.shape()
                )));
            }
        }
        let p = output.nrows();
        if output.ncols() != n {
            return Err(Error::Dimension(format!("output matrix has {} columns, expected {n}", output.ncols())));
        }
        if output_disturbance.shape() != (p, p) {
            return Err(Error::Dimension(format!("C_d is {:?}, expected {p}x{p}", output_disturbance.shape())));
        }
        if disturbance_input.shape() != (n, p) {
            return Err(Error::Dimension(format!("B_d is {:?}, expected {n}x{p}", disturbance_input.shape())));
        }
        for t in state_terms.iter().chain(&input_terms) {
            if !t.order.is_finite() || t.order < 0.0 {
                return Err(Error::InvalidParameter(format!("orders must be nonnegative, got {}", t.order)));
            }
        }
        let model = Self { state_terms, input_terms, input_dim, output, output_disturbance, disturbance_input };
        let top_input = model.input_terms.iter().map(|t| t.order).fold(0.0, f64::max);
        if top_input > model.leading_order() {
            return Err(Error::InvalidParameter(format!(
                "input order {top_input} exceeds the leading state order {}",
                model.leading_order()
            )));
        }
        Ok(model)
    }

    pub fn state_terms(&self) -> &[MatrixTerm] {
        &self.state_terms
    }

    pub fn input_terms(&self) -> &[MatrixTerm] {
        &self.input_terms
    }

    pub fn state_dim(&self) -> usize {
        self.output.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output.nrows()
    }

    pub fn output(&self) -> &DMatrix<f64> {
        &self.output
    }

    pub fn output_disturbance(&self) -> &DMatrix<f64> {
        &self.output_disturbance
    }

    pub fn disturbance_input(&self) -> &DMatrix<f64> {
        &self.disturbance_input
    }

    /// Highest state derivative order.
    pub fn leading_order(&self) -> f64 {
        self.state_terms.iter().map(|t| t.order).fold(0.0, f64::max)
    }

    fn is_forward(&self, term: &MatrixTerm, scheme: StateScheme) -> bool {
        match scheme {
            StateScheme::Forward => true,
            StateScheme::SemiExplicit => term.order == self.leading_order(),
        }
    }

    /// `Â_0`: the matrix multiplying the newest state `x_{k+1}`.
    pub fn leading_matrix(&self, step: f64, scheme: StateScheme) -> Result<DMatrix<f64>> {
        check_step(step)?;
        let n = self.state_dim();
        let mut a0 = DMatrix::zeros(n, n);
        for t in self.state_terms.iter().filter(|t| self.is_forward(t, scheme)) {
            a0 += &t.matrix * step.powf(-t.order);
        }
        Ok(a0)
    }
}

fn check_step(step: f64) -> Result<()> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParameter(format!("step must be positive and finite, got {step}")));
    }
    Ok(())
}

/// Which state samples the GL differences act on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StateScheme {
    /// Every state term uses the forward operator `Δ x_{k+1}`.
    Forward,
    /// Leading-order terms use `Δ x_{k+1}`, lower-order terms `Δ x_k`.
    /// Integer systems reduce to forward Euler.
    #[default]
    SemiExplicit,
}

/// Where the lumped disturbance enters the discrete state equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DisturbanceEntry {
    /// `G = [Â_0^{-1} B_d; 0; ...]`: the disturbance is added to the difference equation.
    #[default]
    PreDivision,
    /// `G = [B_d; 0; ...]`: the disturbance is added to the state update directly.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DiscretizeOptions {
    pub scheme: StateScheme,
    pub disturbance: DisturbanceEntry,
}

/// Discrete model `x̃⁺ = A x̃ + B u + G d`, `y = C x̃ + C_d d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLtiModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    g: DMatrix<f64>,
    c: DMatrix<f64>,
    c_d: DMatrix<f64>,
    step: f64,
    memory: usize,
    block_dim: usize,
    state_blocks: usize,
}

/// Raw matrices of a [`DiscreteLtiModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct LtiParts {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub c_d: DMatrix<f64>,
    pub step: f64,
    pub memory: usize,
    pub block_dim: usize,
    pub state_blocks: usize,
}

impl DiscreteLtiModel {
    /// Validates shapes, then requires `(A, B)` stabilizable and `(C, A)` detectable.
    pub fn new(parts: LtiParts) -> Result<Self> {
        let model = Self::new_unchecked(parts)?;
        if !linalg::is_stabilizable(&model.a, &model.b) {
            return Err(Error::ModelCheck("(A, B) is not stabilizable".into()));
        }
        if !linalg::is_detectable(&model.a, &model.c) {
            return Err(Error::ModelCheck("(C, A) is not detectable".into()));
        }
        Ok(model)
    }

    /// Shape checks only; for diagnostics on deliberately degenerate models.
    pub fn new_unchecked(parts: LtiParts) -> Result<Self> {
        let LtiParts { a, b, g, c, c_d, step, memory, block_dim, state_blocks } = parts;
        check_step(step)?;
        let na = a.nrows();
        let p = c.nrows();
        if a.ncols() != na {
            return Err(Error::Dimension("A must be square".into()));
        }
        if b.nrows() != na || g.nrows() != na || c.ncols() != na {
            return Err(Error::Dimension(format!(
                "inconsistent shapes: A {na}x{na}, B {:?}, G {:?}, C {:?}",
                b.shape(),
                g.shape(),
                c.shape()
            )));
        }
        if c_d.shape() != (p, g.ncols()) {
            return Err(Error::Dimension(format!("C_d is {:?}, expected {p}x{}", c_d.shape(), g.ncols())));
        }
        let all_finite = [&a, &b, &g, &c, &c_d].iter().all(|m| m.iter().all(|v| v.is_finite()));
        if !all_finite {
            return Err(Error::InvalidParameter("model matrices contain non-finite entries".into()));
        }
        Ok(Self { a, b, g, c, c_d, step, memory, block_dim, state_blocks })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn c_d(&self) -> &DMatrix<f64> {
        &self.c_d
    }
    pub fn step(&self) -> f64 {
        self.step
    }
    pub fn memory(&self) -> usize {
        self.memory
    }
    /// Dimension `n` of the original (non-lifted) state.
    pub fn block_dim(&self) -> usize {
        self.block_dim
    }
    /// Number of stacked state samples `x_k, x_{k-1}, ...` at the front of `x̃`.
    pub fn state_blocks(&self) -> usize {
        self.state_blocks
    }
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }
    pub fn disturbance_dim(&self) -> usize {
        self.g.ncols()
    }

    pub fn next_state(&self, x: &DVector<f64>, u: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u + &self.g * d
    }

    pub fn output_of(&self, x: &DVector<f64>, d: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.c_d * d
    }

    /// Copy with a different output map; the shape must match.
    pub fn with_output(&self, c: DMatrix<f64>, c_d: DMatrix<f64>) -> Result<Self> {
        let mut parts = self.to_parts();
        parts.c = c;
        parts.c_d = c_d;
        Self::new_unchecked(parts)
    }

    pub fn to_parts(&self) -> LtiParts {
        LtiParts {
            a: self.a.clone(),
            b: self.b.clone(),
            g: self.g.clone(),
            c: self.c.clone(),
            c_d: self.c_d.clone(),
            step: self.step,
            memory: self.memory,
            block_dim: self.block_dim,
            state_blocks: self.state_blocks,
        }
    }

    pub fn to_file_repr(&self) -> ModelFile {
        ModelFile {
            step: self.step,
            memory: self.memory,
            block_dim: self.block_dim,
            state_blocks: self.state_blocks,
            a: (&self.a).into(),
            b: (&self.b).into(),
            g: (&self.g).into(),
            c: (&self.c).into(),
            c_d: (&self.c_d).into(),
        }
    }

    pub fn from_file_repr(f: &ModelFile) -> Result<Self> {
        Self::new_unchecked(LtiParts {
            a: (&f.a).try_into()?,
            b: (&f.b).try_into()?,
            g: (&f.g).try_into()?,
            c: (&f.c).try_into()?,
            c_d: (&f.c_d).try_into()?,
            step: f.step,
            memory: f.memory,
            block_dim: f.block_dim,
            state_blocks: f.state_blocks,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(&self.to_file_repr()).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: ModelFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_file_repr(&f)
    }
}

/// Text-file layout of a discrete model; matrices are dense and row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub step: f64,
    pub memory: usize,
    pub block_dim: usize,
    pub state_blocks: usize,
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub g: DenseMatrix,
    pub c: DenseMatrix,
    pub c_d: DenseMatrix,
}

/// Discretize a fractional model with step `h` and memory `ν ≥ 1`.
///
/// The lifted state is `(x_k, …, x_{k-S+1}, u_{k-1}, …, u_{k-ν})` with `S = ν`
/// under [`StateScheme::Forward`] and `S = ν + 1` under
/// [`StateScheme::SemiExplicit`]. The input history is omitted when every
/// input term has order zero, since it then carries no dynamics.
pub fn discretize_general(
    model: &FractionalModel,
    step: f64,
    memory: usize,
    opts: DiscretizeOptions,
) -> Result<DiscreteLtiModel> {
    check_step(step)?;
    if memory < 1 {
        return Err(Error::InvalidParameter("memory must be at least 1".into()));
    }
    let n = model.state_dim();
    let m = model.input_dim();
    let p = model.output_dim();
    let nu = memory;

    // Â_j multiplies x_{k+1-j}, j = 0..=ν+1.
    let mut a_hat = vec![DMatrix::<f64>::zeros(n, n); nu + 2];
    for term in model.state_terms() {
        let coeffs = gl_coefficients(term.order, nu)?;
        let scaled = &term.matrix * step.powf(-term.order);
        let shift = usize::from(!model.is_forward(term, opts.scheme));
        for j in 0..=nu {
            let c = coeffs.get(j);
            if c != 0.0 {
                a_hat[j + shift] += &scaled * c;
            }
        }
    }
    // B̂_j multiplies u_{k-j}, j = 0..=ν.
    let mut b_hat = vec![DMatrix::<f64>::zeros(n, m); nu + 1];
    for term in model.input_terms() {
        let coeffs = gl_coefficients(term.order, nu)?;
        let scaled = &term.matrix * step.powf(-term.order);
        for (j, bj) in b_hat.iter_mut().enumerate() {
            let c = coeffs.get(j);
            if c != 0.0 {
                *bj += &scaled * c;
            }
        }
    }

    let lu = a_hat[0].clone().lu();
    let cond = linalg::condition_number(&a_hat[0]);
    if !lu.is_invertible() || !cond.is_finite() || cond > 1e14 {
        return Err(Error::Singular(format!("Â_0 is singular (condition number {cond:.3e})")));
    }
    let solve = |rhs: &DMatrix<f64>| lu.solve(rhs).expect("Â_0 checked invertible");

    let state_blocks = match opts.scheme {
        StateScheme::Forward => nu,
        StateScheme::SemiExplicit => nu + 1,
    };
    let dynamic_inputs = model.input_terms().iter().any(|t| t.order != 0.0);
    let input_blocks = if dynamic_inputs { nu } else { 0 };
    let nx = n * state_blocks;
    let na = nx + m * input_blocks;

    let mut a = DMatrix::zeros(na, na);
    for j in 0..state_blocks {
        let block = -solve(&a_hat[j + 1]);
        a.view_mut((0, j * n), (n, n)).copy_from(&block);
    }
    for j in 1..state_blocks {
        a.view_mut((j * n, (j - 1) * n), (n, n)).fill_with_identity();
    }
    for j in 1..=input_blocks {
        let block = solve(&b_hat[j]);
        a.view_mut((0, nx + (j - 1) * m), (n, m)).copy_from(&block);
        if j >= 2 {
            a.view_mut((nx + (j - 1) * m, nx + (j - 2) * m), (m, m)).fill_with_identity();
        }
    }

    let mut b = DMatrix::zeros(na, m);
    b.view_mut((0, 0), (n, m)).copy_from(&solve(&b_hat[0]));
    if input_blocks > 0 {
        b.view_mut((nx, 0), (m, m)).fill_with_identity();
    }

    let mut g = DMatrix::zeros(na, p);
    let g_block = match opts.disturbance {
        DisturbanceEntry::PreDivision => solve(model.disturbance_input()),
        DisturbanceEntry::Direct => model.disturbance_input().clone(),
    };
    g.view_mut((0, 0), (n, p)).copy_from(&g_block);

    let mut c = DMatrix::zeros(p, na);
    c.view_mut((0, 0), (p, n)).copy_from(model.output());

    DiscreteLtiModel::new(LtiParts {
        a,
        b,
        g,
        c,
        c_d: model.output_disturbance().clone(),
        step,
        memory,
        block_dim: n,
        state_blocks,
    })
}

/// Parameters of the two-compartment fractional pharmacokinetic model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PkParameters {
    /// Elimination rate from the central compartment (1/day).
    pub k10: f64,
    /// Central → peripheral rate (1/day).
    pub k12: f64,
    /// Peripheral → central fractional rate (1/day^α).
    pub k21: f64,
    /// Fractional exponent; the return flow has order `1 - alpha`.
    pub alpha: f64,
}

/// Which PK parameter a perturbation acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum PkParameter {
    K10,
    K12,
    K21,
    Alpha,
}

impl PkParameter {
    pub const ALL: [PkParameter; 4] = [Self::K10, Self::K12, Self::K21, Self::Alpha];

    pub fn name(self) -> &'static str {
        match self {
            Self::K10 => "k10",
            Self::K12 => "k12",
            Self::K21 => "k21",
            Self::Alpha => "alpha",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name().eq_ignore_ascii_case(s))
    }
}

impl PkParameters {
    /// Amiodarone values.
    pub const NOMINAL: PkParameters = PkParameters { k10: 1.4913, k12: 2.9522, k21: 0.4854, alpha: 0.587 };

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("k10", self.k10), ("k12", self.k12), ("k21", self.k21)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// Order `1 - α` of the peripheral return flow.
    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }

    /// Total outflow rate `k12 + k10` of the central compartment.
    pub fn k0(&self) -> f64 {
        self.k12 + self.k10
    }

    /// `M` in `D x = M x + Θ D^β x + B u`.
    pub fn m_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[-self.k0(), 0.0, self.k12, 0.0])
    }

    /// `Θ` in `D x = M x + Θ D^β x + B u`.
    pub fn theta_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[0.0, self.k21, 0.0, -self.k21])
    }

    pub fn perturbed(&self, which: PkParameter, fraction: f64) -> Self {
        let mut p = *self;
        let f = 1.0 + fraction;
        match which {
            PkParameter::K10 => p.k10 *= f,
            PkParameter::K12 => p.k12 *= f,
            PkParameter::K21 => p.k21 *= f,
            PkParameter::Alpha => p.alpha *= f,
        }
        p
    }

    /// `Λ = I + hM + h^α Θ`.
    pub fn lambda(&self, step: f64) -> DMatrix<f64> {
        DMatrix::identity(2, 2) + self.m_matrix() * step + self.theta_matrix() * step.powf(self.alpha)
    }

    /// The same dynamics as a general fractional description:
    /// `D^1 x - M x - Θ D^β x = B u`, measured output `A_1`, disturbance on `A_1`.
    pub fn to_fractional_model(&self) -> Result<FractionalModel> {
        self.validate()?;
        FractionalModel::new(
            vec![
                MatrixTerm::new(DMatrix::identity(2, 2), 1.0),
                MatrixTerm::new(-self.m_matrix(), 0.0),
                MatrixTerm::new(-self.theta_matrix(), self.beta()),
            ],
            vec![MatrixTerm::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), 0.0)],
            1,
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            DMatrix::zeros(1, 1),
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
        )
    }
}

/// Lifted PK model with state `(x_k, …, x_{k-ν})`, `n_a = 2(ν + 1)`.
///
/// First block row `[Λ, Θ h^α c_1^β, …, Θ h^α c_ν^β]`, input block `[h, 0]'`,
/// disturbance block `B_d = [1, 0]'`, `C = [1, 0, …, 0]`, `C_d = 0`.
pub fn build_pk_model(params: &PkParameters, step: f64, memory: usize) -> Result<DiscreteLtiModel> {
    params.validate()?;
    check_step(step)?;
    if memory < 1 {
        return Err(Error::InvalidParameter("memory must be at least 1".into()));
    }
    let blocks = memory + 1;
    let na = 2 * blocks;
    let coeffs = gl_coefficients(params.beta(), memory)?;
    let theta_h = params.theta_matrix() * step.powf(params.alpha);

    let mut a = DMatrix::zeros(na, na);
    a.view_mut((0, 0), (2, 2)).copy_from(&params.lambda(step));
    for j in 1..=memory {
        a.view_mut((0, 2 * j), (2, 2)).copy_from(&(&theta_h * coeffs.get(j)));
        a.view_mut((2 * j, 2 * (j - 1)), (2, 2)).fill_with_identity();
    }
    let mut b = DMatrix::zeros(na, 1);
    b[(0, 0)] = step;
    let mut g = DMatrix::zeros(na, 1);
    g[(0, 0)] = 1.0;
    let mut c = DMatrix::zeros(1, na);
    c[(0, 0)] = 1.0;

    DiscreteLtiModel::new(LtiParts {
        a,
        b,
        g,
        c,
        c_d: DMatrix::zeros(1, 1),
        step,
        memory,
        block_dim: 2,
        state_blocks: blocks,
    })
}

/// Outcome of the observability conditions for the disturbance-augmented model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ObservabilityReport {
    pub state_dim: usize,
    /// Rank of the (block-normalized) observability matrix of `(C, A)`.
    pub observability_rank: usize,
    pub observable: bool,
    /// Every mode with `|λ| ≥ 1` is visible from the output.
    pub detectable: bool,
    /// Rank of `[[A - I, G], [C, C_d]]`.
    pub augmented_rank: usize,
    pub augmented_cols: usize,
    pub rank_condition: bool,
    pub disturbance_dim: usize,
    pub output_dim: usize,
    pub disturbance_dim_ok: bool,
}

impl ObservabilityReport {
    /// Conditions an offset-free observer needs: detectable `(C, A)`, full
    /// column rank steady-state map, and no more disturbances than outputs.
    pub fn observer_feasible(&self) -> bool {
        self.detectable && self.rank_condition && self.disturbance_dim_ok
    }

    /// The strict form: `(C, A)` observable as well.
    pub fn strictly_observable(&self) -> bool {
        self.observable && self.rank_condition && self.disturbance_dim_ok
    }
}

pub fn check_augmented_observability(model: &DiscreteLtiModel) -> ObservabilityReport {
    let a = model.a();
    let c = model.c();
    let na = model.state_dim();
    let p = model.output_dim();
    let nd = model.disturbance_dim();

    let observability_rank = linalg::numerical_rank(&linalg::observability_matrix(a, c), RANK_TOL);
    let detectable = linalg::is_detectable(a, c);

    let mut m = DMatrix::zeros(na + p, na + nd);
    m.view_mut((0, 0), (na, na)).copy_from(&(a - DMatrix::identity(na, na)));
    m.view_mut((0, na), (na, nd)).copy_from(model.g());
    m.view_mut((na, 0), (p, na)).copy_from(c);
    m.view_mut((na, na), (p, nd)).copy_from(model.c_d());
    let augmented_rank = linalg::numerical_rank(&m, RANK_TOL);

    ObservabilityReport {
        state_dim: na,
        observability_rank,
        observable: observability_rank == na,
        detectable,
        augmented_rank,
        augmented_cols: na + nd,
        rank_condition: augmented_rank == na + nd,
        disturbance_dim: nd,
        output_dim: p,
        disturbance_dim_ok: nd <= p,
    }
}
