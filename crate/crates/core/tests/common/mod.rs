//! Shared oracles for the integration tests.

use fracmpc::qp::QuadraticProgram;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Strictly convex QP with `d ≤ 6`, `q ≤ 10` and a known strictly feasible point.
pub fn random_problem(rng: &mut ChaCha8Rng) -> (QuadraticProgram, DVector<f64>) {
    let d = rng.gen_range(1..=6);
    let q = rng.gen_range(0..=10);
    let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0..1.0));
    let h = m.transpose() * &m + DMatrix::identity(d, d) * 0.1;
    let f = DVector::from_fn(d, |_, _| rng.gen_range(-2.0..2.0));
    let g = DMatrix::from_fn(q, d, |_, _| rng.gen_range(-1.0..1.0));
    let interior = DVector::from_fn(d, |_, _| rng.gen_range(-1.0..1.0));
    let slack = DVector::from_fn(q, |_, _| rng.gen_range(0.01..1.0));
    let b = &g * &interior + slack;
    (QuadraticProgram::new(h, f).with_inequalities(g, b), interior)
}

/// Accelerated projected gradient on the dual `max_{λ≥0} -½(f+G'λ)'H⁻¹(f+G'λ) - b'λ`.
pub fn dual_reference(p: &QuadraticProgram) -> (DVector<f64>, f64) {
    let hinv = p.h.clone().try_inverse().unwrap();
    let q = p.h_ineq.len();
    let primal = |lam: &DVector<f64>| -(&hinv * (&p.f + p.g_ineq.transpose() * lam));
    if q == 0 {
        let z = primal(&DVector::zeros(0));
        let obj = p.objective(&z);
        return (z, obj);
    }
    let m = &p.g_ineq * &hinv * p.g_ineq.transpose();
    let lip = m.clone().symmetric_eigenvalues().iter().fold(0.0f64, |a, v| a.max(*v)).max(1e-12);
    let dual = |lam: &DVector<f64>| {
        let v = &p.f + p.g_ineq.transpose() * lam;
        -0.5 * v.dot(&(&hinv * &v)) - p.h_ineq.dot(lam)
    };
    let mut lam = DVector::zeros(q);
    let mut y = lam.clone();
    let mut t = 1.0f64;
    for _ in 0..1_000_000 {
        let grad = &p.g_ineq * primal(&y) - &p.h_ineq;
        let next = (&y + grad / lip).map(|v| v.max(0.0));
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        let momentum = (t - 1.0) / t_next;
        y = &next + (&next - &lam) * momentum;
        if dual(&next) < dual(&lam) {
            // Adaptive restart.
            y = next.clone();
            t = 1.0;
        } else {
            t = t_next;
        }
        lam = next;
        let z = primal(&lam);
        let gap = p.objective(&z) - dual(&lam);
        if p.max_violation(&z) < 1e-12 && gap.abs() < 1e-12 * (1.0 + gap.abs()) {
            break;
        }
    }
    let z = primal(&lam);
    let obj = p.objective(&z);
    (z, obj)
}
