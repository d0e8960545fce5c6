//! Acceptance criteria 1–10. Each test prints one `criterion N: PASS|FAIL`
//! line (written to the raw stdout handle so it shows up without
//! `--nocapture`) and then asserts.

use std::io::Write;
use std::process::Command;

use nalgebra::{DMatrix, DVector};
use symcomplete::gd::{gradient, objective, run_gd, GdConfig};
use symcomplete::linops::{
    materialize, Composite, LinearOperator, Projection, RateOperator, SymProjection,
    TangentProjection, DEFAULT_DENSE_CAP,
};
use symcomplete::problem::{init_perturbed, ProblemInstance};
use symcomplete::rate::{
    build_h, empirical_rate, scalar_bound, spectral_radius_dense, spectral_radius_reduced,
    RateWindow,
};
use symcomplete::rng::{gaussian_matrix, gaussian_vector, stream_rng, Stream};
use symcomplete::verify::{
    check_tight_sweep, check_projection_residual, check_recursion_residual,
    check_rho_a_witness, TightSweep, WitnessOutcome, DEFAULT_DELTAS,
};

fn report(criterion: u32, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {criterion}: {verdict} — {detail}");
    let _ = out.flush();
}

fn eta_half(inst: &ProblemInstance) -> f64 {
    0.5 / inst.truth.spectral_norm()
}

/// A long reference-scale run on one seed whose `ρ(H) < 0.999`.
struct ReferenceRun {
    seed: u64,
    rho_h: f64,
    empirical: Option<f64>,
    h_in_band: bool,
    a_leaves_band: bool,
    rows_in_window: usize,
}

/// Scans seeds upward and returns the first 10 with `ρ(H) < 0.999`.
fn reference_runs() -> Vec<ReferenceRun> {
    let mut runs = Vec::new();
    for seed in 0..2000u64 {
        if runs.len() == 10 {
            break;
        }
        let inst = ProblemInstance::generate(20, 3, 0.3, seed).unwrap();
        let eta = eta_half(&inst);
        // Screen on the compressed operator, then take ρ(H) from the full
        // 400×400 eigensolve for the seeds that are kept.
        if spectral_radius_reduced(&inst, eta).unwrap().rho >= 0.999 {
            continue;
        }
        let h = build_h(&inst, eta, DEFAULT_DENSE_CAP).unwrap();
        let rho_h = spectral_radius_dense(&h).unwrap().rho;
        if rho_h >= 0.999 {
            continue;
        }
        let x0 = init_perturbed(&inst.truth.canonical_factor(), 1e-2, seed).unwrap();
        let cfg = GdConfig {
            max_iters: 60_000,
            ..GdConfig::for_truth(&inst.truth, 60_000)
        };
        let mut trace = run_gd(&inst, &x0, &cfg).unwrap().trace;
        let empirical =
            empirical_rate(&trace, inst.m().norm(), &RateWindow::default()).map(|r| r.rate);
        symcomplete::verify::attach_first_order_predictions(&mut trace, &inst, &x0, eta, rho_h)
            .unwrap();
        let (pa, ph) = (trace.predicted_a.unwrap(), trace.predicted_h.unwrap());
        let mut h_in_band = true;
        let mut a_leaves_band = false;
        let mut rows_in_window = 0;
        for (i, &err) in trace.err_fro.iter().enumerate() {
            if (1e-8..=1e-4).contains(&err) {
                rows_in_window += 1;
                h_in_band &= (ph[i].ln() - err.ln()).abs() <= 0.5;
                a_leaves_band |= (pa[i].ln() - err.ln()).abs() > 0.5;
            }
        }
        runs.push(ReferenceRun {
            seed,
            rho_h,
            empirical,
            h_in_band: h_in_band && rows_in_window > 0,
            a_leaves_band,
            rows_in_window,
        });
    }
    runs
}

fn reference_cached() -> &'static [ReferenceRun] {
    static RUNS: std::sync::OnceLock<Vec<ReferenceRun>> = std::sync::OnceLock::new();
    RUNS.get_or_init(reference_runs)
}

#[test]
fn criterion_01_rate_prediction() {
    let start = std::time::Instant::now();
    let runs = reference_cached();
    let mut good = 0;
    let mut worst: f64 = 0.0;
    for run in runs {
        if let Some(rate) = run.empirical {
            let rel = (rate - run.rho_h).abs() / run.rho_h;
            worst = worst.max(rel);
            if rel <= 0.02 {
                good += 1;
            }
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = runs.len() == 10 && good >= 9 && elapsed <= 60.0;
    report(
        1,
        pass,
        &format!(
            "{good}/10 seeds within 2% (worst {:.3e}); seeds {:?}; {:.1}s",
            worst,
            runs.iter().map(|r| r.seed).collect::<Vec<_>>(),
            elapsed
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_02_h_model_fidelity() {
    let runs = reference_cached();
    let both = runs.iter().filter(|r| r.h_in_band && r.a_leaves_band).count();
    let h_all = runs.iter().filter(|r| r.h_in_band).count();
    let pass = runs.len() == 10 && both >= 9;
    report(
        2,
        pass,
        &format!(
            "H within e^0.5 and A outside on {both}/10 seeds (H alone {h_all}/10, window rows {:?})",
            runs.iter().map(|r| r.rows_in_window).collect::<Vec<_>>()
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_03_rho_a_witness() {
    let mut verified = 0;
    let mut tried = 0;
    let mut seed = 0u64;
    while tried < 20 {
        let n = 3 + (seed as usize % 8);
        let p = [0.2, 0.3, 0.5, 0.7, 0.9][seed as usize % 5];
        let inst = ProblemInstance::generate(n, 1 + seed as usize % 2, p, 1000 + seed).unwrap();
        seed += 1;
        if inst.mask.is_full() {
            continue;
        }
        tried += 1;
        let eta = eta_half(&inst);
        if let WitnessOutcome::Verified { checked } = check_rho_a_witness(&inst, eta).unwrap() {
            if checked == n * n - inst.mask.len() {
                verified += 1;
            }
        }
    }
    let pass = verified == 20;
    report(3, pass, &format!("exact fixed points on {verified}/20 partial masks"));
    assert!(pass);
}

#[test]
fn criterion_04_projection_algebra() {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in [2usize, 3, 4, 6] {
        for r in [1usize, 2] {
            let inst = ProblemInstance::generate(n, r, 0.5, (n * 10 + r) as u64).unwrap();
            let p1 = TangentProjection::new(inst.u().clone()).unwrap();
            let p2 = SymProjection::new(n);
            let p = Projection::new(inst.u().clone()).unwrap();
            let ops: [&dyn LinearOperator; 3] = [&p1, &p2, &p];
            let mut rng = stream_rng(n as u64, Stream::Probes, r as u64);
            for _ in 0..100 {
                let v = DVector::from_vec(gaussian_vector(&mut rng, n * n));
                let w = DVector::from_vec(gaussian_vector(&mut rng, n * n));
                let scale = v.norm() * w.norm();
                for op in ops {
                    let pv = op.apply(&v).unwrap();
                    worst = worst.max((op.apply(&pv).unwrap() - &pv).norm() / v.norm());
                    let pw = op.apply(&w).unwrap();
                    worst = worst.max((pv.dot(&w) - v.dot(&pw)).abs() / scale);
                }
                let a = p1.apply(&p2.apply(&v).unwrap()).unwrap();
                let b = p2.apply(&p1.apply(&v).unwrap()).unwrap();
                worst = worst.max((a - b).norm() / v.norm());
                cases += 1;
            }
        }
    }
    let pass = worst <= 1e-12;
    report(4, pass, &format!("{cases} vectors, worst relative defect {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_05_second_order_residuals() {
    let mut sweeps_ok = 0;
    let mut tight_pass = 0;
    let mut tight_fail = 0;
    let mut slopes = Vec::new();
    for seed in 0..5u64 {
        let inst = ProblemInstance::generate(10, 2, 0.5, seed).unwrap();
        let eta = eta_half(&inst);
        let rec = check_recursion_residual(&inst, eta, &DEFAULT_DELTAS, 5, seed).unwrap();
        let proj = check_projection_residual(&inst, &DEFAULT_DELTAS, 5, seed).unwrap();
        if rec.second_order() && proj.second_order() {
            sweeps_ok += 1;
        }
        let tight = match check_tight_sweep(&inst, eta, &DEFAULT_DELTAS).unwrap() {
            TightSweep::Done(res) => {
                if res.passed() {
                    tight_pass += 1;
                } else {
                    tight_fail += 1;
                }
                res.sweep.fitted_slope
            }
            TightSweep::NotApplicable { .. } => None,
        };
        slopes.push((rec.fitted_slope, proj.fitted_slope, tight));
    }
    let pass = sweeps_ok == 5 && tight_pass >= 3 && tight_fail == 0;
    report(
        5,
        pass,
        &format!(
            "recursion+projection on {sweeps_ok}/5, tight passed {tight_pass}/5 (failed {tight_fail}); slopes {slopes:.3?}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_06_rate_equalities() {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for n in [2usize, 3, 4] {
        for seed in 0..5u64 {
            let inst = ProblemInstance::generate(n, 1 + seed as usize % (n.min(2)), 0.6, 50 + seed)
                .unwrap();
            let eta = eta_half(&inst);
            let h = RateOperator::for_instance(&inst, eta).unwrap();
            let ap = Composite::product(vec![
                Box::new(h.step().clone()),
                Box::new(h.projection().clone()),
            ])
            .unwrap();
            let rho_pap = spectral_radius_dense(&materialize(&h, 64).unwrap()).unwrap().rho;
            let rho_ap = spectral_radius_dense(&materialize(&ap, 64).unwrap()).unwrap().rho;
            worst = worst.max((rho_pap - rho_ap).abs() / rho_pap.max(f64::MIN_POSITIVE));
            cases += 1;
        }
    }
    let pass = worst <= 1e-8;
    report(6, pass, &format!("{cases} instances, worst relative gap {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_07_scalar_recursion() {
    let bound = scalar_bound(0.5, 1.0, 0.2).unwrap();
    let k = bound.k.unwrap();
    let mut a: f64 = 0.2;
    // 0.2 is not representable, so K is 5 to within a few ulps.
    let mut ok = (k - 5.0).abs() <= 4.0 * f64::EPSILON * 5.0 && bound.converges;
    for n in 0..=100 {
        ok &= a <= 0.2 * 5.0 * 0.5f64.powi(n) && a <= bound.bound_at(n as usize).unwrap();
        a = 0.5 * a + a * a;
    }
    report(7, ok, &format!("K = {k:.17}, a_n ≤ a₀Kρⁿ for n ≤ 100: {ok}"));
    assert!(ok);
}

#[test]
fn criterion_08_full_sampling_closed_form() {
    let mut worst: f64 = 0.0;
    for (n, r, seed) in [(4, 1, 0u64), (5, 2, 1), (6, 2, 2), (8, 3, 3), (10, 2, 4)] {
        let inst = ProblemInstance::generate(n, r, 1.0, seed).unwrap();
        let eta = eta_half(&inst);
        let lam = |i: usize| if i < r { inst.truth.lambda[i] } else { 0.0 };
        let mut expected: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i < r || j < r {
                    expected = expected.max((1.0 - eta * (lam(i) + lam(j))).abs());
                }
            }
        }
        let got = spectral_radius_dense(&build_h(&inst, eta, DEFAULT_DENSE_CAP).unwrap())
            .unwrap()
            .rho;
        worst = worst.max((got - expected).abs() / expected);
    }
    let pass = worst <= 1e-8;
    report(8, pass, &format!("worst relative gap {worst:.2e} over 5 instances"));
    assert!(pass);
}

#[test]
fn criterion_09_gradient_check() {
    let mut worst: f64 = 0.0;
    for case in 0..20u64 {
        let n = 2 + (case as usize % 5);
        let r = 1 + (case as usize % n.min(3));
        let inst = ProblemInstance::generate(n, r, 0.6, 200 + case).unwrap();
        let mut rng = stream_rng(case, Stream::Directions, 9);
        let x = gaussian_matrix(&mut rng, n, r);
        let obs = inst.observed();
        let g = gradient(&x, &inst.mask, &obs).unwrap();
        let h = 1e-6 * x.norm();
        // Full finite-difference gradient, entry by entry.
        let fd = DMatrix::from_fn(n, r, |i, j| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[(i, j)] += h;
            xm[(i, j)] -= h;
            (objective(&xp, &inst.mask, &obs).unwrap() - objective(&xm, &inst.mask, &obs).unwrap())
                / (2.0 * h)
        });
        worst = worst.max((fd - &g).norm() / g.norm().max(1e-300));
    }
    let pass = worst <= 1e-6;
    report(9, pass, &format!("20 instances, worst relative error {worst:.2e}"));
    assert!(pass);
}

#[test]
fn criterion_10_determinism() {
    let bin = env!("CARGO_BIN_EXE_symcomplete");
    let dir = tempfile::tempdir().unwrap();
    let mut csvs = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let status = Command::new(bin)
            .args(["run", "--seed", "3", "--max-iters", "1500", "--out-dir"])
            .arg(&out)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
        csvs.push(std::fs::read(out.join("run_seed3.csv")).unwrap());
    }
    let pass = csvs[0] == csvs[1] && !csvs[0].is_empty();
    report(10, pass, &format!("two runs, {} bytes each, identical: {pass}", csvs[0].len()));
    assert!(pass);
}
