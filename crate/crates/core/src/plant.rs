//! Continuous-time two-compartment plant with a fractional exchange term.
//!
//! `D^β` (β = 1 - α) acting on `A_2` is replaced by an Oustaloup rational
//! approximation and the coupled ODE is integrated with fixed-step RK4:
//!
//! ```text
//! ż   = A_f z + B_f A_2
//! w   = C_f z + D_f A_2                 (≈ D^β A_2)
//! Ȧ_1 = -(k12 + k10) A_1 + k21 w + u
//! Ȧ_2 = k12 A_1 - k21 w
//! ```

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PkParameters;

/// Oustaloup approximation of `s^β` on `[ω_L, ω_H]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OustaloupFilter {
    order: f64,
    omega_low: f64,
    omega_high: f64,
    zeros: Vec<f64>,
    poles: Vec<f64>,
    gain: f64,
    a: DMatrix<f64>,
    b: DVector<f64>,
    c: DVector<f64>,
    d: f64,
}

/// Filter parameters as they appear in scenario files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub omega_low: f64,
    pub omega_high: f64,
    pub sections: usize,
}

impl Default for FilterParams {
    fn default() -> Self {
        Self { omega_low: 1e-2, omega_high: 1e3, sections: 8 }
    }
}

/// Zeros and poles of `(s + z)/(s + p)` sections are returned as the positive
/// magnitudes `z`, `p`; the roots themselves sit at `-z`, `-p`.
pub fn build_oustaloup(order: f64, omega_low: f64, omega_high: f64, sections: usize) -> Result<OustaloupFilter> {
    if !(order > 0.0 && order < 1.0) {
        return Err(Error::InvalidParameter(format!("filter order {order} must lie in (0, 1)")));
    }
    if !(omega_low > 0.0 && omega_low < omega_high && omega_high.is_finite()) {
        return Err(Error::InvalidParameter(format!("need 0 < ω_L < ω_H, got {omega_low}, {omega_high}")));
    }
    if sections == 0 {
        return Err(Error::InvalidParameter("filter needs at least one section".into()));
    }
    let ratio = omega_high / omega_low;
    let nf = sections as f64;
    let zeros: Vec<f64> = (1..=sections)
        .map(|k| omega_low * ratio.powf((2.0 * k as f64 - 1.0 - order) / (2.0 * nf)))
        .collect();
    let poles: Vec<f64> = (1..=sections)
        .map(|k| omega_low * ratio.powf((2.0 * k as f64 - 1.0 + order) / (2.0 * nf)))
        .collect();
    let gain = omega_high.powf(order);

    // Cascade of (s + z)/(s + p) = 1 + (z - p)/(s + p), section k fed by the
    // output of section k - 1.
    let mut a = DMatrix::zeros(sections, sections);
    for k in 0..sections {
        a[(k, k)] = -poles[k];
        for i in 0..k {
            a[(k, i)] = zeros[i] - poles[i];
        }
    }
    let b = DVector::from_element(sections, 1.0);
    let c = DVector::from_iterator(sections, zeros.iter().zip(&poles).map(|(z, p)| gain * (z - p)));
    Ok(OustaloupFilter { order, omega_low, omega_high, zeros, poles, gain, a, b, c, d: gain })
}

impl OustaloupFilter {
    pub fn from_params(order: f64, p: &FilterParams) -> Result<Self> {
        build_oustaloup(order, p.omega_low, p.omega_high, p.sections)
    }

    pub fn order(&self) -> f64 {
        self.order
    }
    pub fn band(&self) -> (f64, f64) {
        (self.omega_low, self.omega_high)
    }
    pub fn zeros(&self) -> &[f64] {
        &self.zeros
    }
    pub fn poles(&self) -> &[f64] {
        &self.poles
    }
    pub fn gain(&self) -> f64 {
        self.gain
    }
    pub fn sections(&self) -> usize {
        self.zeros.len()
    }
    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }
    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
    pub fn d(&self) -> f64 {
        self.d
    }

    /// `H(jω)` from the factored form.
    pub fn freq_response(&self, omega: f64) -> Complex64 {
        let s = Complex64::new(0.0, omega);
        self.zeros.iter().zip(&self.poles).fold(Complex64::new(self.gain, 0.0), |h, (z, p)| h * (s + z) / (s + p))
    }

    /// `C(jωI - A)^{-1}B + D` from the realization.
    pub fn state_space_response(&self, omega: f64) -> Complex64 {
        let n = self.sections();
        let s = Complex64::new(0.0, omega);
        let m = DMatrix::from_fn(n, n, |i, j| if i == j { s } else { Complex64::new(0.0, 0.0) } - self.a[(i, j)]);
        let rhs = self.b.map(|v| Complex64::new(v, 0.0));
        let x = m.lu().solve(&rhs).expect("filter poles lie off the imaginary axis");
        self.c.iter().zip(x.iter()).fold(Complex64::new(self.d, 0.0), |acc, (c, x)| acc + x * c)
    }
}

/// Integration state `(A_1, A_2, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthPlant {
    pk: PkParameters,
    filter: OustaloupFilter,
    a1: f64,
    a2: f64,
    z: DVector<f64>,
    time: f64,
    integrator_step: f64,
}

/// Slack allowed below zero before a compartment counts as negative.
pub const MASS_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_INTEGRATOR_STEP: f64 = 1e-3;

impl TruthPlant {
    /// Zero initial state; the filter order is `1 - α`.
    pub fn new(pk: PkParameters, filter_params: &FilterParams, integrator_step: f64) -> Result<Self> {
        pk.validate()?;
        let filter = OustaloupFilter::from_params(pk.beta(), filter_params)?;
        Self::with_filter(pk, filter, integrator_step)
    }

    pub fn with_filter(pk: PkParameters, filter: OustaloupFilter, integrator_step: f64) -> Result<Self> {
        if !(integrator_step > 0.0 && integrator_step.is_finite()) {
            return Err(Error::InvalidParameter(format!("integrator step {integrator_step} must be positive")));
        }
        let z = DVector::zeros(filter.sections());
        Ok(Self { pk, filter, a1: 0.0, a2: 0.0, z, time: 0.0, integrator_step })
    }

    pub fn pk(&self) -> &PkParameters {
        &self.pk
    }
    pub fn filter(&self) -> &OustaloupFilter {
        &self.filter
    }
    pub fn a1(&self) -> f64 {
        self.a1
    }
    pub fn a2(&self) -> f64 {
        self.a2
    }
    pub fn filter_state(&self) -> &DVector<f64> {
        &self.z
    }
    pub fn time(&self) -> f64 {
        self.time
    }
    pub fn integrator_step(&self) -> f64 {
        self.integrator_step
    }
    pub fn total_mass(&self) -> f64 {
        self.a1 + self.a2
    }

    pub fn state_vector(&self) -> Vec<f64> {
        let mut v = vec![self.a1, self.a2];
        v.extend(self.z.iter());
        v
    }

    /// Replace the compartment amounts, keeping the filter state.
    pub fn with_amounts(mut self, a1: f64, a2: f64) -> Self {
        self.a1 = a1;
        self.a2 = a2;
        self
    }

    fn rhs(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        let n = self.filter.sections();
        let (a1, a2) = (x[0], x[1]);
        let z = x.rows(2, n);
        let w = self.filter.c.dot(&z) + self.filter.d * a2;
        let mut dx = DVector::zeros(n + 2);
        dx[0] = -self.pk.k0() * a1 + self.pk.k21 * w + u;
        dx[1] = self.pk.k12 * a1 - self.pk.k21 * w;
        let dz = &self.filter.a * z + &self.filter.b * a2;
        dx.rows_mut(2, n).copy_from(&dz);
        dx
    }

    /// Advance by `duration` with `u` held constant.
    pub fn step(&self, u: f64, duration: f64) -> Result<Self> {
        plant_step(self, u, duration)
    }

    pub fn output(&self) -> f64 {
        sample_output(self)
    }
}

pub fn plant_step(p: &TruthPlant, u: f64, duration: f64) -> Result<TruthPlant> {
    let fail = |reason: String| Error::Plant { time: p.time, reason, last_state: p.state_vector() };
    if !(u.is_finite() && u >= 0.0) {
        return Err(fail(format!("input {u} must be finite and nonnegative")));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(fail(format!("duration {duration} must be positive")));
    }
    let substeps = ((duration / p.integrator_step) - 1e-9).ceil().max(1.0) as usize;
    let dt = duration / substeps as f64;
    let mut x = DVector::from_vec(p.state_vector());
    let mut last_good = x.clone();
    for i in 0..substeps {
        let k1 = p.rhs(&x, u);
        let k2 = p.rhs(&(&x + &k1 * (dt / 2.0)), u);
        let k3 = p.rhs(&(&x + &k2 * (dt / 2.0)), u);
        let k4 = p.rhs(&(&x + &k3 * dt), u);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Plant {
                time: p.time + i as f64 * dt,
                reason: "state became non-finite".into(),
                last_state: last_good.iter().copied().collect(),
            });
        }
        if x[0] < -MASS_TOLERANCE || x[1] < -MASS_TOLERANCE {
            return Err(Error::Plant {
                time: p.time + (i + 1) as f64 * dt,
                reason: format!("negative amount (A1 = {:e}, A2 = {:e})", x[0], x[1]),
                last_state: last_good.iter().copied().collect(),
            });
        }
        last_good.copy_from(&x);
    }
    let n = p.filter.sections();
    Ok(TruthPlant {
        pk: p.pk,
        filter: p.filter.clone(),
        a1: x[0],
        a2: x[1],
        z: x.rows(2, n).into_owned(),
        time: p.time + duration,
        integrator_step: p.integrator_step,
    })
}

/// Noise-free measurement of `A_1`.
pub fn sample_output(p: &TruthPlant) -> f64 {
    p.a1
}

/// Seeded additive Gaussian measurement noise.
#[derive(Debug, Clone)]
pub struct Sensor {
    noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl Sensor {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise level {sigma} must be nonnegative")));
        }
        let noise = if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            Some((normal, ChaCha8Rng::seed_from_u64(seed)))
        } else {
            None
        };
        Ok(Self { noise })
    }

    pub fn noiseless() -> Self {
        Self { noise: None }
    }

    pub fn sample(&mut self, p: &TruthPlant) -> f64 {
        let y = sample_output(p);
        match &mut self.noise {
            Some((normal, rng)) => y + normal.sample(rng),
            None => y,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nominal_filter() -> OustaloupFilter {
        build_oustaloup(0.413, 1e-2, 1e3, 8).unwrap()
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(build_oustaloup(0.0, 1e-2, 1e3, 8).is_err());
        assert!(build_oustaloup(1.0, 1e-2, 1e3, 8).is_err());
        assert!(build_oustaloup(0.5, 1e3, 1e-2, 8).is_err());
        assert!(build_oustaloup(0.5, 1e-2, 1e3, 0).is_err());
    }

    #[test]
    fn poles_and_zeros_interlace() {
        let f = nominal_filter();
        for k in 0..8 {
            assert!(f.zeros()[k] < f.poles()[k]);
            if k + 1 < 8 {
                assert!(f.poles()[k] < f.zeros()[k + 1]);
            }
            assert!(f.zeros()[k] >= 1e-2 && f.poles()[k] <= 1e3);
        }
    }

    #[test]
    fn realization_matches_factored_form() {
        let f = nominal_filter();
        for k in 0..=40 {
            let w = 10f64.powf(-3.0 + 7.0 * k as f64 / 40.0);
            let a = f.freq_response(w);
            let b = f.state_space_response(w);
            assert!((a - b).norm() <= 1e-9 * a.norm(), "ω = {w}");
        }
    }

    #[test]
    fn vanishing_order_is_identity() {
        let f = build_oustaloup(1e-6, 1e-2, 1e3, 8).unwrap();
        for k in 0..=20 {
            let w = 10f64.powf(-2.0 + 5.0 * k as f64 / 20.0);
            assert!((f.freq_response(w).norm() - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn filter_is_stable() {
        let f = nominal_filter();
        // Lower triangular: the eigenvalues are the diagonal.
        assert!(f.a().diagonal().iter().all(|v| *v < 0.0));
        assert!(crate::linalg::eigenvalues(f.a()).iter().all(|l| l.re < 0.0));
    }

    #[test]
    fn zero_input_zero_state_stays_zero() {
        let p = TruthPlant::new(PkParameters::NOMINAL, &FilterParams::default(), 1e-3).unwrap();
        let q = p.step(0.0, 5.0).unwrap();
        assert_eq!(q.state_vector().iter().map(|v| v.abs()).fold(0.0, f64::max), 0.0);
        assert_eq!(q.output(), 0.0);
        assert!((q.time() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative_input() {
        let p = TruthPlant::new(PkParameters::NOMINAL, &FilterParams::default(), 1e-3).unwrap();
        assert!(matches!(p.step(-1.0, 0.1), Err(Error::Plant { .. })));
        assert!(matches!(p.step(f64::NAN, 0.1), Err(Error::Plant { .. })));
    }

    #[test]
    fn short_step_is_continuous() {
        let p = TruthPlant::new(PkParameters::NOMINAL, &FilterParams::default(), 1e-3)
            .unwrap()
            .with_amounts(0.7, 0.2);
        let q = p.step(0.0, 1e-9).unwrap();
        assert!((q.output() - 0.7).abs() < 1e-8);
    }

    #[test]
    fn sensor_without_noise_is_exact() {
        let p = TruthPlant::new(PkParameters::NOMINAL, &FilterParams::default(), 1e-3)
            .unwrap()
            .with_amounts(0.25, 0.0);
        assert_eq!(Sensor::new(0.0, 1).unwrap().sample(&p), 0.25);
        assert!(Sensor::new(-1.0, 1).is_err());
    }
}
