use afba::atoms::ProxAtom;
use afba::diagnostics::{monitor_fejer, sandwich_constants, RanPProjection};
use afba::linops::{min_eig, LinearMap, Matrix, Vector, POWER_TOL};
use afba::primal_dual::{tau_of, PdMatrices, PdParams};
use proptest::prelude::*;

fn matrix(max: usize) -> impl Strategy<Value = Matrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0..3.0f64, r * c).prop_map(move |v| Matrix::from_vec(r, c, v))
    })
}

fn vector(n: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-5.0..5.0f64, n).prop_map(Vector::from_vec)
}

fn atom() -> impl Strategy<Value = ProxAtom> {
    prop_oneof![
        Just(ProxAtom::Zero),
        (0.01..3.0f64).prop_map(|w| ProxAtom::l1(w).unwrap()),
        (0.01..3.0f64).prop_map(|m| ProxAtom::sq_l2(m).unwrap()),
        (0.01..3.0f64).prop_map(|w| ProxAtom::l2(w).unwrap()),
        (-2.0..0.0f64, 0.0..2.0f64).prop_map(|(lo, hi)| ProxAtom::boxed(lo, hi).unwrap()),
        Just(ProxAtom::NonNeg),
    ]
}

fn pd_params() -> impl Strategy<Value = (Matrix, PdParams)> {
    (matrix(5), 0.0..2.0f64, -1.0..1.0f64, 0.01..0.99f64, 0.0..=1.0f64).prop_map(|(l, theta, lg1, u, mu)| {
        let nl = l.clone().svd(false, false).singular_values.max();
        let g1 = 10f64.powf(lg1);
        let cap = if theta * nl > 0.0 { 4.0 / (g1 * theta * theta * nl * nl) } else { 10.0 };
        (l, PdParams::new(g1, u * cap, theta, mu).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn adjoint_matches_transpose(a in matrix(6), seed in 0u64..1000) {
        let l = LinearMap::compose(LinearMap::dense(a.clone()), LinearMap::dense(Matrix::identity(a.ncols(), a.ncols())))
            .unwrap();
        let l = LinearMap::sum(l, LinearMap::scaled(0.5, LinearMap::dense(a.clone()))).unwrap();
        let x = Vector::from_fn(a.ncols(), |i, _| ((i as u64 + seed) % 7) as f64 - 3.0);
        let y = Vector::from_fn(a.nrows(), |i, _| ((i as u64 * 3 + seed) % 5) as f64 - 2.0);
        let lhs = l.apply(&x).unwrap().dot(&y);
        let rhs = x.dot(&l.adjoint_apply(&y).unwrap());
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
        prop_assert!((l.adjoint().to_dense() - l.to_dense().transpose()).amax() <= 1e-12);
    }

    #[test]
    fn op_norm_matches_singular_value(a in matrix(6), seed in 0u64..50) {
        let exact = a.clone().svd(false, false).singular_values.max();
        let est = LinearMap::dense(a).op_norm_seeded(POWER_TOL, seed).unwrap().value;
        prop_assert!(est <= exact * (1.0 + 1e-9) + 1e-12);
        prop_assert!(est >= exact * (1.0 - 1e-4) - 1e-12);
    }

    #[test]
    fn moreau_identity(a in atom(), v in vector(4), gamma in 0.05..5.0f64) {
        let p = a.resolvent(gamma, &v).unwrap();
        let d = a.moreau_conjugate_prox(1.0 / gamma, &(&v / gamma)).unwrap();
        prop_assert!((&p + d * gamma - &v).amax() <= 1e-10 * (1.0 + v.amax()));
    }

    #[test]
    fn resolvent_firmly_nonexpansive(a in atom(), u in vector(4), v in vector(4), gamma in 0.05..5.0f64) {
        let du = a.resolvent(gamma, &u).unwrap() - a.resolvent(gamma, &v).unwrap();
        let lhs = du.norm_squared();
        let rhs = du.dot(&(&u - &v));
        prop_assert!(lhs <= rhs + 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn tau_certifies_p((l, p) in pd_params()) {
        let nl = l.clone().svd(false, false).singular_values.max();
        let mats = PdMatrices::new(&l, &p);
        prop_assert!(min_eig(&mats.p).unwrap() >= tau_of(&p, nl) - 1e-9);
    }

    #[test]
    fn sandwich_bounds_hold((l, p) in pd_params(), seed in 0u64..1000) {
        let mats = PdMatrices::new(&l, &p);
        let d = mats.d(p.mu);
        let (c1, c2) = sandwich_constants(&mats.p, &d).unwrap();
        prop_assert!(c1 > 0.0 && c1 <= c2);
        let k = mats.p.nrows();
        let z = Vector::from_fn(k, |i, _| (((i as u64 + 1) * (seed + 3)) % 11) as f64 - 5.0);
        let pz = z.dot(&(&mats.p * &z));
        let dz = z.dot(&(&d * &z));
        prop_assert!(dz >= c1 * pz - 1e-8 * (1.0 + dz.abs()));
        prop_assert!(dz <= c2 * pz + 1e-8 * (1.0 + dz.abs()));
    }

    #[test]
    fn ran_p_projection(a in matrix(5), v in vector(5)) {
        let p = a.transpose() * &a;
        let k = p.nrows();
        let v = Vector::from_fn(k, |i, _| v[i % v.len()]);
        let proj = RanPProjection::new(&p).unwrap();
        let q = proj.project(&v);
        prop_assert!((proj.project(&q) - &q).amax() <= 1e-9 * (1.0 + v.amax()));
        // On ran P the R-norm is the P-seminorm.
        let rq = proj.r_norm_sq_of_projection(&v);
        let pq = q.dot(&(&p * &q));
        prop_assert!((rq - pq).abs() <= 1e-8 * (1.0 + pq.abs()));
        prop_assert!((&p * (&v - &q)).amax() <= 1e-8 * (1.0 + p.amax() * v.amax()));
    }

    #[test]
    fn fejer_monitor_is_pure(series in prop::collection::vec(0.0..10.0f64, 1..40)) {
        let copy = series.clone();
        let a = monitor_fejer(&series);
        let b = monitor_fejer(&series);
        prop_assert_eq!(&series, &copy);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let mut sorted = series.clone();
        sorted.sort_by(|x, y| y.partial_cmp(x).unwrap());
        prop_assert!(monitor_fejer(&sorted).holds);
    }
}
