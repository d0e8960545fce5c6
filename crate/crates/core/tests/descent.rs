use symcomplete::gd::{gd_step, gradient, objective, run_gd, GdConfig};
use symcomplete::linops::{vec_matrix, LinearOperator, StepOperator};
use symcomplete::problem::{init_perturbed, init_spectral, ProblemInstance};
use symcomplete::rate::{contraction_check, empirical_rate, RateWindow};
use symcomplete::rng::{gaussian_matrix, stream_rng, Stream};

#[test]
fn gradient_matches_central_differences() {
    for case in 0..20u64 {
        let n = 3 + (case as usize % 4);
        let r = 1 + (case as usize % 2);
        let inst = ProblemInstance::generate(n, r, 0.7, case).unwrap();
        let mut rng = stream_rng(case, Stream::Directions, 7);
        let x = gaussian_matrix(&mut rng, n, r);
        let dir = gaussian_matrix(&mut rng, n, r);
        let dir = &dir / dir.norm();
        let h = 1e-6 * x.norm();
        let obs = inst.observed();
        let plus = objective(&(&x + &dir * h), &inst.mask, &obs).unwrap();
        let minus = objective(&(&x - &dir * h), &inst.mask, &obs).unwrap();
        let fd = (plus - minus) / (2.0 * h);
        let g = gradient(&x, &inst.mask, &obs).unwrap();
        let analytic = g.dot(&dir);
        let scale = g.norm().max(1e-12);
        assert!(
            (fd - analytic).abs() <= 1e-6 * scale,
            "case {case}: fd {fd} vs {analytic}"
        );
    }
}

#[test]
fn solution_is_a_fixed_point() {
    let inst = ProblemInstance::generate(10, 3, 0.4, 2).unwrap();
    let eta = 0.5 / inst.truth.spectral_norm();
    let x = &inst.truth.xstar;
    let next = gd_step(x, &inst.mask, inst.m(), eta).unwrap();
    assert!((next - x).norm() <= 1e-13 * x.norm());
}

#[test]
fn linearization_error_quarters_when_delta_halves() {
    let inst = ProblemInstance::generate(8, 2, 0.6, 5).unwrap();
    let eta = 0.5 / inst.truth.spectral_norm();
    let a = StepOperator::for_instance(&inst, eta).unwrap();
    let mut rng = stream_rng(5, Stream::Directions, 3);
    let g = gaussian_matrix(&mut rng, 8, 2);
    let g = &g / g.norm();
    let residual = |delta: f64| {
        let x0 = &inst.truth.xstar + &g * delta;
        let e0 = &x0 * x0.transpose() - inst.m();
        let x1 = gd_step(&x0, &inst.mask, inst.m(), eta).unwrap();
        let e1 = &x1 * x1.transpose() - inst.m();
        (vec_matrix(&e1).unwrap() - a.apply(&vec_matrix(&e0).unwrap()).unwrap()).norm()
    };
    for delta in [1e-2, 5e-3, 2.5e-3] {
        let ratio = residual(delta) / residual(delta / 2.0);
        assert!((3.4..=4.6).contains(&ratio), "delta {delta}: ratio {ratio}");
    }
}

#[test]
fn local_rate_matches_spectral_radius() {
    let inst = ProblemInstance::generate(10, 2, 0.6, 3).unwrap();
    let eta = 0.5 / inst.truth.spectral_norm();
    let rate = contraction_check(&inst, eta).unwrap();
    assert!(rate.contracts);
    let x0 = init_perturbed(&inst.truth.canonical_factor(), 1e-3, 3).unwrap();
    let cfg = GdConfig {
        eta,
        max_iters: 20_000,
        stop_tol: 1e-13 * inst.m().norm(),
        record_every: 1,
    };
    let run = run_gd(&inst, &x0, &cfg).unwrap();
    let emp = empirical_rate(&run.trace, inst.m().norm(), &RateWindow::default()).unwrap();
    assert!(
        (emp.rate - rate.rho_h).abs() <= 5e-3,
        "{} vs {}",
        emp.rate,
        rate.rho_h
    );
}

#[test]
fn spectral_init_with_full_observation_recovers_m() {
    let inst = ProblemInstance::generate(7, 2, 1.0, 8).unwrap();
    let init = init_spectral(&inst.observed(), &inst.mask, 1.0, 2).unwrap();
    assert!(!init.deficient);
    let err = (&init.x0 * init.x0.transpose() - inst.m()).norm();
    assert!(err <= 1e-10 * inst.m().norm());
}
