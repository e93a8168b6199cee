//! Augmented state-and-disturbance observer.
//!
//! The model state is stacked with a constant disturbance, `ξ = (x̃, d)`:
//!
//! ```text
//! ξ⁺ = [[A, G], [0, I]] ξ + [B; 0] u,    y = [C, C_d] ξ
//! ```
//!
//! and estimated with `ξ̂⁺ = Āξ̂ + B̄u + L(C̄ξ̂ - y)`.

use nalgebra::{DMatrix, DVector};

use crate::dare::{self, ObserverGain};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::DiscreteLtiModel;

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    state_dim: usize,
}

impl AugmentedModel {
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    /// Dimension of the model state `x̃`.
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn disturbance_dim(&self) -> usize {
        self.a.nrows() - self.state_dim
    }
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    pub fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    /// Observer gain from the dual Riccati equation with the given weights.
    pub fn gain(&self, w: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<ObserverGain> {
        dare::observer_gain(&self.a, &self.c, w, v)
    }

    pub fn default_gain(&self) -> Result<ObserverGain> {
        let (w, v) = dare::default_observer_weights(self.state_dim, self.disturbance_dim());
        self.gain(&w, &v)
    }
}

pub fn augment(m: &DiscreteLtiModel) -> Result<AugmentedModel> {
    let n = m.state_dim();
    let p = m.output_dim();
    let nd = m.disturbance_dim();
    if nd != p {
        return Err(Error::Dimension(format!("disturbance dimension {nd} must equal output dimension {p}")));
    }
    let na = n + p;
    let mut a = DMatrix::zeros(na, na);
    a.view_mut((0, 0), (n, n)).copy_from(m.a());
    a.view_mut((0, n), (n, p)).copy_from(m.g());
    a.view_mut((n, n), (p, p)).fill_with_identity();
    let mut b = DMatrix::zeros(na, m.input_dim());
    b.view_mut((0, 0), (n, m.input_dim())).copy_from(m.b());
    let mut c = DMatrix::zeros(p, na);
    c.view_mut((0, 0), (p, n)).copy_from(m.c());
    c.view_mut((0, n), (p, p)).copy_from(m.c_d());
    Ok(AugmentedModel { a, b, c, state_dim: n })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverState {
    xi_hat: DVector<f64>,
    l: DMatrix<f64>,
    last_error: DVector<f64>,
    spectral_radius: f64,
}

impl ObserverState {
    /// Zero initial estimate. Fails unless `Ā + LC̄` has spectral radius below one.
    pub fn new(m: &AugmentedModel, l: DMatrix<f64>) -> Result<Self> {
        Self::with_estimate(m, l, DVector::zeros(m.dim()))
    }

    pub fn with_estimate(m: &AugmentedModel, l: DMatrix<f64>, xi_hat: DVector<f64>) -> Result<Self> {
        if l.shape() != (m.dim(), m.output_dim()) {
            return Err(Error::Dimension(format!(
                "gain is {:?}, expected {}x{}",
                l.shape(),
                m.dim(),
                m.output_dim()
            )));
        }
        if xi_hat.len() != m.dim() {
            return Err(Error::Dimension(format!("estimate has length {}, expected {}", xi_hat.len(), m.dim())));
        }
        let spectral_radius = linalg::spectral_radius(&(m.a() + &l * m.c()));
        if !(spectral_radius < 1.0) {
            return Err(Error::ModelCheck(format!("observer gain is not stabilizing (radius {spectral_radius})")));
        }
        Ok(Self { xi_hat, l, last_error: DVector::zeros(m.output_dim()), spectral_radius })
    }

    /// Observer with the default Riccati gain.
    pub fn with_default_gain(m: &AugmentedModel) -> Result<Self> {
        Self::new(m, m.default_gain()?.l)
    }

    /// Observer that never corrects its estimate (`L = 0`); only valid if `Ā` is
    /// itself stable, which the integrating disturbance block rules out, so this
    /// skips certification. For diagnostics only.
    pub fn open_loop(m: &AugmentedModel, xi_hat: DVector<f64>) -> Self {
        Self {
            xi_hat,
            l: DMatrix::zeros(m.dim(), m.output_dim()),
            last_error: DVector::zeros(m.output_dim()),
            spectral_radius: linalg::spectral_radius(m.a()),
        }
    }

    pub fn xi_hat(&self) -> &DVector<f64> {
        &self.xi_hat
    }
    pub fn x_hat(&self, m: &AugmentedModel) -> DVector<f64> {
        self.xi_hat.rows(0, m.state_dim()).into_owned()
    }
    pub fn d_hat(&self, m: &AugmentedModel) -> DVector<f64> {
        self.xi_hat.rows(m.state_dim(), m.disturbance_dim()).into_owned()
    }
    pub fn gain(&self) -> &DMatrix<f64> {
        &self.l
    }
    pub fn last_error(&self) -> &DVector<f64> {
        &self.last_error
    }
    /// Spectral radius of `Ā + LC̄`.
    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    pub fn step(&self, m: &AugmentedModel, u: &DVector<f64>, y: &DVector<f64>) -> Result<Self> {
        observer_step(self, m, u, y)
    }
}

/// `e = C̄ξ̂ - y`, `ξ̂⁺ = Āξ̂ + B̄u + Le`.
pub fn observer_step(s: &ObserverState, m: &AugmentedModel, u: &DVector<f64>, y: &DVector<f64>) -> Result<ObserverState> {
    if u.len() != m.input_dim() || y.len() != m.output_dim() {
        return Err(Error::Dimension(format!(
            "observer step with u of length {} and y of length {}",
            u.len(),
            y.len()
        )));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite measurement".into()));
    }
    if !u.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite input".into()));
    }
    let e = m.c() * &s.xi_hat - y;
    let xi_hat = m.a() * &s.xi_hat + m.b() * u + &s.l * &e;
    Ok(ObserverState { xi_hat, l: s.l.clone(), last_error: e, spectral_radius: s.spectral_radius })
}
