use beamopt_core::linalg::{hermitian, matmul, norm2, solve, CMatrix, CVector, C64};
use proptest::prelude::*;

fn cplx() -> impl Strategy<Value = C64> {
    (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(re, im)| C64::new(re, im))
}

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = CMatrix> {
    proptest::collection::vec(cplx(), rows * cols).prop_map(move |d| CMatrix::new(rows, cols, d).unwrap())
}

/// Diagonally dominant, so comfortably well conditioned.
fn well_conditioned(n: usize) -> impl Strategy<Value = CMatrix> {
    matrix(n, n).prop_map(move |mut a| {
        for i in 0..n {
            let v = a.get(i, i) + C64::new(2.0 * n as f64, 0.0);
            a.set(i, i, v);
        }
        a
    })
}

fn max_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    a.sub(b).unwrap().max_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn solve_inverts_matmul((a, x) in (1usize..=8, 1usize..=4).prop_flat_map(|(n, r)| (well_conditioned(n), matrix(n, r)))) {
        let b = matmul(&a, &x).unwrap();
        let y = solve(&a, &b).unwrap();
        prop_assert!(max_diff(&x, &y) <= 1e-9);
    }

    #[test]
    fn hermitian_is_an_involution(a in (1usize..=6, 1usize..=6).prop_flat_map(|(r, c)| matrix(r, c))) {
        prop_assert_eq!(hermitian(&hermitian(&a)), a);
    }

    #[test]
    fn matmul_is_associative(
        (a, b, c) in (1usize..=5, 1usize..=5, 1usize..=5, 1usize..=5)
            .prop_flat_map(|(p, q, r, s)| (matrix(p, q), matrix(q, r), matrix(r, s)))
    ) {
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = left.frobenius_norm().max(1e-300);
        prop_assert!(left.sub(&right).unwrap().frobenius_norm() / scale <= 1e-12);
    }

    #[test]
    fn norm_squared_is_self_inner_product(v in proptest::collection::vec(cplx(), 0..16)) {
        let v = CVector::new(v).unwrap();
        let n = norm2(&v);
        let ip = v.as_slice().iter().map(|z| z.conj() * z).sum::<C64>();
        prop_assert!((n * n - ip.re).abs() <= 1e-13);
        prop_assert!(ip.im.abs() <= 1e-13);
    }
}

#[test]
fn norm_examples() {
    let v = CVector::new(vec![C64::new(3.0, 0.0), C64::new(0.0, 4.0)]).unwrap();
    assert_eq!(norm2(&v), 5.0);
    assert_eq!(norm2(&CVector::zeros(3)), 0.0);
}
