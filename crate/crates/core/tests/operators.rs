use approx::assert_abs_diff_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use symcomplete::eigen::eigenvalues;
use symcomplete::linops::*;
use symcomplete::problem::ProblemInstance;

const CAP: usize = 4096;

fn instance(n: usize, seed: u64) -> ProblemInstance {
    let r = 1 + (seed as usize) % n.min(3);
    ProblemInstance::generate(n, r, 0.6, seed).unwrap()
}

fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}

fn dense_t(n: usize) -> DMatrix<f64> {
    let map = VecIndexMap::new(n);
    DMatrix::from_fn(n * n, n * n, |row, col| {
        let (i, j) = map.pair(col);
        (row == map.linear(j, i)) as u8 as f64
    })
}

/// Kronecker-product forms, independent of the matrix-free code paths.
fn dense_reference(inst: &ProblemInstance, eta: f64) -> [DMatrix<f64>; 5] {
    let n = inst.n();
    let id = DMatrix::identity(n, n);
    let uu = inst.u() * inst.u().transpose();
    let m = inst.m();
    let p1 = kron(&id, &uu) + kron(&uu, &id) - kron(&uu, &uu);
    let p2 = (DMatrix::identity(n * n, n * n) + dense_t(n)) * 0.5;
    let s = DMatrix::from_diagonal(&DVector::from_fn(n * n, |k, _| {
        let (i, j) = VecIndexMap::new(n).pair(k);
        inst.mask.contains(i, j) as u8 as f64
    }));
    let a = DMatrix::identity(n * n, n * n) - (kron(&id, m) + kron(m, &id)) * &s * eta;
    let p = &p1 * &p2;
    let h = &p * &a * &p;
    [p1, p2, p, a, h]
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

#[test]
fn projections_are_orthogonal_and_commute() {
    for n in [2, 3, 4, 6] {
        for seed in 0..3 {
            let inst = instance(n, seed);
            let p1 = materialize(&TangentProjection::new(inst.u().clone()).unwrap(), CAP).unwrap();
            let p2 = materialize(&SymProjection::new(n), CAP).unwrap();
            let p = materialize(&Projection::new(inst.u().clone()).unwrap(), CAP).unwrap();
            for q in [&p1, &p2, &p] {
                assert!(max_abs(&(q * q - q)) <= 1e-12, "idempotence n={n}");
                assert!(max_abs(&(q - q.transpose())) <= 1e-12, "self-adjoint n={n}");
            }
            assert!(max_abs(&(&p1 * &p2 - &p2 * &p1)) <= 1e-12, "commute n={n}");
            let t = materialize(&TransposeOperator::new(n), CAP).unwrap();
            assert_eq!(&t * &t, DMatrix::identity(n * n, n * n));
            assert_eq!(t, t.transpose());
        }
    }
}

#[test]
fn matrix_free_matches_kronecker_forms() {
    for n in [2, 3, 4, 6] {
        for seed in 0..3 {
            let inst = instance(n, seed);
            let eta = 0.5 / inst.truth.spectral_norm();
            let [p1, p2, p, a, h] = dense_reference(&inst, eta);
            let h_op = RateOperator::for_instance(&inst, eta).unwrap();
            let ours = [
                materialize(&TangentProjection::new(inst.u().clone()).unwrap(), CAP).unwrap(),
                materialize(&SymProjection::new(n), CAP).unwrap(),
                materialize(h_op.projection(), CAP).unwrap(),
                materialize(h_op.step(), CAP).unwrap(),
                materialize(&h_op, CAP).unwrap(),
            ];
            for (name, (got, want)) in ["P1", "P2", "P", "A", "H"].iter().zip(ours.iter().zip([p1, p2, p, a, h])) {
                let scale = max_abs(&want).max(1.0);
                assert!(max_abs(&(got - &want)) <= 1e-12 * scale, "{name} n={n} seed={seed}");
            }
        }
    }
}

#[test]
fn kron_sum_and_mask_are_self_adjoint() {
    for n in [2, 3, 4, 6] {
        let inst = instance(n, 1);
        let k = materialize(&KronSum::new(inst.m()).unwrap(), CAP).unwrap();
        assert!(max_abs(&(&k - k.transpose())) <= 1e-12 * max_abs(&k));
        let s = materialize(&MaskOperator::new(inst.mask.clone()), CAP).unwrap();
        assert_eq!(&s * &s, s);
        assert_eq!(s, s.transpose());
    }
}

#[test]
fn rate_operator_spectrum_is_real_and_in_unit_interval() {
    for n in [3, 4, 6] {
        for seed in 0..4 {
            let inst = instance(n, seed);
            let eta = 0.5 / inst.truth.spectral_norm();
            let h = materialize(&RateOperator::for_instance(&inst, eta).unwrap(), CAP).unwrap();
            for v in eigenvalues(&h).unwrap() {
                assert!(v.im.abs() <= 1e-8, "{v:?}");
                assert!(v.re >= -1e-10 && v.re <= 1.0 + 1e-10, "{v:?}");
            }
        }
    }
}

#[test]
fn vec_round_trip_and_column_major_layout() {
    let sq = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(vec_matrix(&sq).unwrap().as_slice(), &[1.0, 3.0, 2.0, 4.0]);
    assert_eq!(unvec(&vec_matrix(&sq).unwrap()).unwrap(), sq);
    assert!(unvec(&DVector::zeros(3)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn apply_agrees_with_materialized(seed in 0u64..1000, n in prop::sample::select(vec![2usize, 3, 4, 6])) {
        let inst = instance(n, seed);
        let eta = 0.5 / inst.truth.spectral_norm();
        let h = RateOperator::for_instance(&inst, eta).unwrap();
        let dense = materialize(&h, CAP).unwrap();
        let x = DVector::from_fn(n * n, |k, _| ((k as f64 + 1.0) * (seed as f64 + 0.5)).sin());
        let direct = h.apply(&x).unwrap();
        assert_abs_diff_eq!(direct, &dense * &x, epsilon = 1e-12 * x.norm().max(1.0) * dense.norm().max(1.0));
        // Projections fix their own range.
        let px = h.projection().apply(&x).unwrap();
        assert_abs_diff_eq!(h.projection().apply(&px).unwrap(), px.clone(), epsilon = 1e-12 * x.norm());
    }

    #[test]
    fn wrong_length_is_rejected(n in 2usize..6, extra in 1usize..4) {
        let op = SymProjection::new(n);
        prop_assert!(op.apply(&DVector::zeros(n * n + extra)).is_err());
    }
}
