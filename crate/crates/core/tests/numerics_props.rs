use driftless_core::numerics::{matmul, softmax_rows, Graph, Matrix, ParamSet};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

fn triple() -> impl Strategy<Value = (Matrix, Matrix, Matrix)> {
    (1usize..6, 1usize..6, 1usize..6, 1usize..6)
        .prop_flat_map(|(a, b, c, d)| (matrix(a, b), matrix(b, c), matrix(c, d)))
}

proptest! {
    #[test]
    fn matmul_is_associative((a, b, c) in triple()) {
        let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
        let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
        let scale = left.data().iter().chain(right.data()).fold(1.0f64, |m, v| m.max(v.abs()));
        prop_assert!(left.max_abs_diff(&right) <= 1e-9 * scale);
    }

    #[test]
    fn softmax_rows_are_distributions(m in (1usize..6, 1usize..9).prop_flat_map(|(r, c)| matrix(r, c)), shift in -500.0f64..500.0) {
        let shifted = m.map(|v| 10.0 * v + shift);
        let s = softmax_rows(&shifted).unwrap();
        for r in 0..s.rows() {
            let total: f64 = s.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() <= 1e-12);
            prop_assert!(s.row(r).iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn sum_of_parameters_has_unit_gradients(shapes in prop::collection::vec((1usize..5, 1usize..5), 1..5)) {
        let mut params = ParamSet::new();
        for (i, &(r, c)) in shapes.iter().enumerate() {
            params.push(format!("p{i}"), Matrix::from_fn(r, c, |a, b| (a * 7 + b) as f64 - 3.5));
        }
        let mut g = Graph::new(&params);
        let mut total = None;
        for i in 0..params.len() {
            let p = g.param(i);
            let s = g.sum(p);
            total = Some(match total {
                None => s,
                Some(acc) => g.add(acc, s).unwrap(),
            });
        }
        let grads = g.backward(total.unwrap()).unwrap().into_dense();
        for (gm, &(r, c)) in grads.iter().zip(&shapes) {
            prop_assert_eq!(gm.shape(), (r, c));
            prop_assert!(gm.data().iter().all(|&v| v == 1.0));
        }
    }
}
