use fracmpc::dare::{observer_gain, solve_dare};
use fracmpc::estimator::{augment, ObserverState};
use fracmpc::model::{build_pk_model, DiscreteLtiModel, LtiParts, PkParameter, PkParameters};
use nalgebra::{DMatrix, DVector};

fn scalar_model() -> DiscreteLtiModel {
    let one = DMatrix::from_element(1, 1, 1.0);
    DiscreteLtiModel::new(LtiParts {
        a: DMatrix::from_element(1, 1, 0.5),
        b: one.clone(),
        g: one.clone(),
        c: one,
        c_d: DMatrix::zeros(1, 1),
        step: 1.0,
        memory: 1,
        block_dim: 1,
        state_blocks: 1,
    })
    .unwrap()
}

#[test]
fn scalar_disturbance_is_recovered() {
    let aug = augment(&scalar_model()).unwrap();
    let mut obs = ObserverState::with_default_gain(&aug).unwrap();
    let mut x = 1.0;
    let mut hit = None;
    for k in 0..2000 {
        let u = 0.2 * (0.05 * k as f64).cos();
        obs = obs.step(&aug, &DVector::from_element(1, u), &DVector::from_element(1, x)).unwrap();
        x = 0.5 * x + u + 0.3;
        if hit.is_none() && (obs.d_hat(&aug)[0] - 0.3).abs() <= 1e-6 {
            hit = Some(k);
        }
    }
    assert!(hit.unwrap() < 500, "converged at {hit:?}");
    assert!((obs.d_hat(&aug)[0] - 0.3).abs() <= 1e-6);
    assert!((obs.x_hat(&aug)[0] - x).abs() <= 1e-6);
}

#[test]
fn error_contracts_at_the_certified_rate() {
    let aug = augment(&scalar_model()).unwrap();
    let rho = ObserverState::with_default_gain(&aug).unwrap().spectral_radius();
    assert!(rho < 1.0);
    // With exact data the estimation error obeys e⁺ = (Ā + LC̄) e.
    let mut obs = ObserverState::with_estimate(&aug, aug.default_gain().unwrap().l, DVector::from_vec(vec![5.0, -2.0]))
        .unwrap();
    let mut x = 0.0;
    let mut errs = Vec::new();
    for _ in 0..300 {
        obs = obs.step(&aug, &DVector::zeros(1), &DVector::from_element(1, x)).unwrap();
        x = 0.5 * x + 0.3;
        let e = DVector::from_vec(vec![obs.xi_hat()[0] - x, obs.xi_hat()[1] - 0.3]);
        errs.push(e.norm());
    }
    for w in (0..200).step_by(100) {
        if errs[w + 100] < 1e-13 {
            break;
        }
        let rate = (errs[w + 100] / errs[w]).powf(0.01);
        assert!(rate <= rho + 0.05, "window {w}: rate {rate}, radius {rho}");
    }
}

#[test]
fn pk_observer_absorbs_plant_mismatch() {
    let nominal = build_pk_model(&PkParameters::NOMINAL, 0.1, 25).unwrap();
    let truth = build_pk_model(&PkParameters::NOMINAL.perturbed(PkParameter::K10, 0.1), 0.1, 25).unwrap();
    let aug = augment(&nominal).unwrap();
    let mut obs = ObserverState::with_default_gain(&aug).unwrap();
    let mut x = DVector::zeros(truth.state_dim());
    let u = DVector::from_element(1, 1.0);
    let zero = DVector::zeros(1);
    for _ in 0..5000 {
        let y = truth.output_of(&x, &zero);
        obs = obs.step(&aug, &u, &y).unwrap();
        x = truth.next_state(&x, &u, &zero);
    }
    assert!(obs.last_error()[0].abs() < 1e-8, "e = {}", obs.last_error()[0]);
    assert!(obs.d_hat(&aug)[0] < 0.0);
}

#[test]
fn exact_pk_model_keeps_zero_error() {
    let m = build_pk_model(&PkParameters::NOMINAL, 0.1, 25).unwrap();
    let aug = augment(&m).unwrap();
    let mut obs = ObserverState::with_default_gain(&aug).unwrap();
    let mut x = DVector::zeros(m.state_dim());
    let zero = DVector::zeros(1);
    for k in 0..300 {
        let u = DVector::from_element(1, if k < 100 { 2.0 } else { 0.5 });
        obs = obs.step(&aug, &u, &m.output_of(&x, &zero)).unwrap();
        assert!(obs.last_error()[0].abs() < 1e-12);
        x = m.next_state(&x, &u, &zero);
    }
    assert!(obs.d_hat(&aug)[0].abs() < 1e-12);
}

#[test]
fn scalar_riccati_closed_form() {
    // a = b = q = r = 1: P = (1 + √5) / 2.
    let one = DMatrix::from_element(1, 1, 1.0);
    let sol = solve_dare(&one, &one, &one, &one).unwrap();
    assert!((sol.p[(0, 0)] - (1.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
    // Dual problem: Σ solves the same equation, L = -aΣ/(Σ + v).
    let g = observer_gain(&one, &one, &one, &one).unwrap();
    let s = (1.0 + 5f64.sqrt()) / 2.0;
    assert!((g.l[(0, 0)] + s / (s + 1.0)).abs() < 1e-12);
    assert!((g.spectral_radius - (1.0 - s / (s + 1.0))).abs() < 1e-12);
}
