//! Grünwald-Letnikov coefficients, truncated differences and truncation error bounds.
//!
//! The GL difference of order `α` with step `h` is the weighted sum
//! `Σ_j c_j x_{k-j}` with `c_j = (-1)^j binom(α, j)`. Keeping only the `ν + 1`
//! most recent samples leaves a residual whose size is governed by the tail
//! `Σ_{j>ν} |c_j|`, which is what [`tail_sum`] returns and what
//! [`disturbance_box`] propagates through the model matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FractionalModel, StateScheme};

/// Coefficients `c_0..c_ν` of the truncated GL operator of a given order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlCoefficients {
    order: f64,
    values: Vec<f64>,
}

impl GlCoefficients {
    pub fn order(&self) -> f64 {
        self.order
    }

    /// Memory length `ν`; there are `ν + 1` coefficients.
    pub fn memory(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Coefficient `c_j`, zero beyond the stored memory.
    pub fn get(&self, j: usize) -> f64 {
        self.values.get(j).copied().unwrap_or(0.0)
    }

    /// `Σ_{j=0}^{ν} c_j`.
    pub fn partial_sum(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn check_order(order: f64) -> Result<()> {
    if !order.is_finite() || order < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "GL order must be finite and nonnegative, got {order}"
        )));
    }
    Ok(())
}

/// Coefficients `c_j = (-1)^j binom(order, j)` for `j = 0..=memory`.
///
/// Uses the recurrence `c_j = c_{j-1} (j - 1 - order) / j`, which stays
/// finite for memories far beyond what factorials allow.
pub fn gl_coefficients(order: f64, memory: usize) -> Result<GlCoefficients> {
    check_order(order)?;
    let mut values = Vec::with_capacity(memory + 1);
    values.push(1.0);
    for j in 1..=memory {
        let prev = values[j - 1];
        values.push(prev * ((j as f64) - 1.0 - order) / (j as f64));
    }
    Ok(GlCoefficients { order, values })
}

/// Scaled truncated difference `h^{-α} Σ_{j=0}^{ν} c_j x_{k-j}`.
///
/// `history[0]` is the newest sample `x_k`, `history[ν]` the oldest.
pub fn truncated_difference(
    coeffs: &GlCoefficients,
    history: &[DVector<f64>],
    step: f64,
) -> Result<DVector<f64>> {
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::InvalidParameter(format!("step must be positive, got {step}")));
    }
    if history.len() != coeffs.values.len() {
        return Err(Error::Dimension(format!(
            "history has {} samples, operator of memory {} needs {}",
            history.len(),
            coeffs.memory(),
            coeffs.values.len()
        )));
    }
    let dim = history[0].len();
    if let Some(bad) = history.iter().position(|x| x.len() != dim) {
        return Err(Error::Dimension(format!(
            "history sample {bad} has dimension {}, expected {dim}",
            history[bad].len()
        )));
    }
    let mut acc = DVector::zeros(dim);
    for (c, x) in coeffs.values.iter().zip(history) {
        acc.axpy(*c, x, 1.0);
    }
    Ok(acc * step.powf(-coeffs.order))
}

/// How a tail sum was evaluated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailMethod {
    /// Exact from the leading coefficients via `Σ_j c_j = 0`.
    ClosedForm,
    /// Bounded direct summation; `remainder_bound` bounds the neglected terms.
    Direct { terms: usize, remainder_bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSum {
    pub value: f64,
    pub method: TailMethod,
}

impl TailSum {
    pub fn is_closed_form(&self) -> bool {
        matches!(self.method, TailMethod::ClosedForm)
    }
}

/// Cap on the number of terms summed for orders outside `(0, 1]`.
pub const DIRECT_SUM_CAP: usize = 10_000_000;

/// Tail `Σ_{j=ν+1}^{∞} |c_j|` of the GL coefficient sequence.
///
/// For `0 < order ≤ 1` every `c_j` with `j ≥ 1` is nonpositive and the full
/// sum vanishes, so the tail equals `Σ_{j=0}^{ν} c_j`. Other orders below 2
/// are summed directly until the remaining terms are provably below `1e-16`
/// or [`DIRECT_SUM_CAP`] terms have been added.
pub fn tail_sum(order: f64, memory: usize) -> Result<TailSum> {
    check_order(order)?;
    if order >= 2.0 {
        return Err(Error::InvalidParameter(format!(
            "tail sums are supported for orders below 2, got {order}"
        )));
    }
    if order > 0.0 && order <= 1.0 {
        let coeffs = gl_coefficients(order, memory)?;
        // Clamp round-off; the exact value is nonnegative.
        return Ok(TailSum { value: coeffs.partial_sum().max(0.0), method: TailMethod::ClosedForm });
    }
    if order == 0.0 {
        return Ok(TailSum {
            value: 0.0,
            method: TailMethod::Direct { terms: 0, remainder_bound: 0.0 },
        });
    }

    // 1 < order < 2: c_j > 0 for j ≥ 2 and c_j j^{order+1} decreases, so the
    // remainder after index J is at most c_J J / order.
    let mut c = 1.0;
    let mut j = 0usize;
    while j < memory + 1 {
        j += 1;
        c *= ((j as f64) - 1.0 - order) / (j as f64);
    }
    let mut sum = 0.0;
    let mut terms = 0usize;
    let mut remainder_bound = f64::INFINITY;
    while terms < DIRECT_SUM_CAP {
        sum += c.abs();
        terms += 1;
        if j >= 2 {
            remainder_bound = c.abs() * (j as f64) / order;
            if remainder_bound < 1e-16 {
                break;
            }
        }
        j += 1;
        c *= ((j as f64) - 1.0 - order) / (j as f64);
    }
    Ok(TailSum { value: sum, method: TailMethod::Direct { terms, remainder_bound } })
}

/// Balanced box `{z : |z_i| ≤ radii_i}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    radii: Vec<f64>,
}

impl IntervalBox {
    pub fn new(radii: Vec<f64>) -> Result<Self> {
        if let Some(r) = radii.iter().find(|r| !r.is_finite() || **r < 0.0) {
            return Err(Error::InvalidParameter(format!(
                "box radii must be finite and nonnegative, got {r}"
            )));
        }
        Ok(Self { radii })
    }

    pub fn zero(dim: usize) -> Self {
        Self { radii: vec![0.0; dim] }
    }

    /// Balanced box of the interval hull `[lower, upper]` recentered at its
    /// midpoint. Returns `(center, box)`.
    pub fn recentered(lower: &[f64], upper: &[f64]) -> Result<(Vec<f64>, Self)> {
        if lower.len() != upper.len() {
            return Err(Error::Dimension("lower and upper bounds differ in length".into()));
        }
        let mut center = Vec::with_capacity(lower.len());
        let mut radii = Vec::with_capacity(lower.len());
        for (lo, hi) in lower.iter().zip(upper) {
            if !(lo <= hi) {
                return Err(Error::InvalidParameter(format!("empty interval [{lo}, {hi}]")));
            }
            center.push(0.5 * (lo + hi));
            radii.push(0.5 * (hi - lo));
        }
        Ok((center, Self::new(radii)?))
    }

    pub fn dim(&self) -> usize {
        self.radii.len()
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.radii.len() && z.iter().zip(&self.radii).all(|(v, r)| v.abs() <= *r)
    }

    /// Minkowski sum of two balanced boxes (radii add).
    pub fn minkowski_sum(&self, other: &Self) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension(format!(
                "cannot add boxes of dimension {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Self { radii: self.radii.iter().zip(&other.radii).map(|(a, b)| a + b).collect() })
    }

    /// Smallest balanced box containing `M · self`: radii `|M| r`.
    pub fn linear_image(&self, m: &DMatrix<f64>) -> Result<Self> {
        if m.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "matrix with {} columns applied to box of dimension {}",
                m.ncols(),
                self.dim()
            )));
        }
        let r = DVector::from_column_slice(&self.radii);
        let image = m.abs() * r;
        Ok(Self { radii: image.iter().copied().collect() })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let f = factor.abs();
        Self { radii: self.radii.iter().map(|r| r * f).collect() }
    }
}

/// Outer box of the truncation disturbance set `D_ν = D_ν^x ⊕ D_ν^u`.
///
/// Each state term contributes `|Â_0^{-1} Ā_i| tail(α_i, ν) · stateBox` and each
/// input term `|Â_0^{-1} B̄_i| tail(β_i, ν) · inputBox`, where `Ā_i = h^{-α_i} A_i`
/// and `Â_0` is the matrix multiplying the newest state under `scheme`.
pub fn disturbance_box(
    model: &FractionalModel,
    state_box: &IntervalBox,
    input_box: &IntervalBox,
    step: f64,
    memory: usize,
    scheme: StateScheme,
) -> Result<IntervalBox> {
    let n = model.state_dim();
    let m = model.input_dim();
    if state_box.dim() != n || input_box.dim() != m {
        return Err(Error::Dimension(format!(
            "boxes have dimensions ({}, {}), model expects ({n}, {m})",
            state_box.dim(),
            input_box.dim()
        )));
    }
    let a0 = model.leading_matrix(step, scheme)?;
    let a0_inv = a0
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Singular("Â_0 is singular; disturbance set is unbounded".into()))?;

    let mut total = IntervalBox::zero(n);
    for term in model.state_terms() {
        let tail = tail_sum(term.order, memory)?.value;
        let scaled = &a0_inv * &term.matrix * step.powf(-term.order);
        total = total.minkowski_sum(&state_box.linear_image(&scaled)?.scaled(tail))?;
    }
    for term in model.input_terms() {
        let tail = tail_sum(term.order, memory)?.value;
        let scaled = &a0_inv * &term.matrix * step.powf(-term.order);
        total = total.minkowski_sum(&input_box.linear_image(&scaled)?.scaled(tail))?;
    }
    Ok(total)
}
