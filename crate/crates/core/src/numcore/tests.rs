use super::*;
use crate::Error;
use proptest::prelude::*;

fn arr(shape: &[usize], values: &[f64]) -> DiffArray {
    DiffArray::new(shape.to_vec(), values.to_vec()).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
}

#[test]
fn matmul_identity_and_inner_product() {
    let mut t = Tape::new();
    let i = t.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let m = t.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let p = t.matmul(i, m).unwrap();
    assert_eq!(t.value(p), &[1.0, 2.0, 3.0, 4.0]);

    let a = t.constant(vec![1, 2], vec![1.0, 2.0]).unwrap();
    let b = t.constant(vec![2, 1], vec![3.0, 4.0]).unwrap();
    let c = t.matmul(a, b).unwrap();
    assert_eq!(t.shape(c), &[1, 1]);
    assert_eq!(t.value(c), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
    let b = t.constant(vec![2, 3], vec![0.0; 6]).unwrap();
    match t.matmul(a, b) {
        Err(Error::Dimension { left, right, .. }) => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_of_sum_is_ones_times_b_transpose() {
    let mut rng = crate::rng::seeded(3);
    let a0 = gradcheck::random_array(vec![3, 4], &mut rng);
    let b0 = gradcheck::random_array(vec![4, 2], &mut rng);
    let mut t = Tape::new();
    let a = t.variable(&a0).unwrap();
    let b = t.constant_array(&b0).unwrap();
    let c = t.matmul(a, b).unwrap();
    let s = t.sum(c).unwrap();
    t.backward(s).unwrap();
    let g = t.grad(a).unwrap();
    for i in 0..3 {
        for k in 0..4 {
            let expect = b0.values()[k * 2] + b0.values()[k * 2 + 1];
            assert!((g[i * 4 + k] - expect).abs() < 1e-15);
        }
    }
    let fd = gradcheck::check("matmul_sum", &[a0, b0], 1e-5, 1e-6, |t, v| {
        let c = t.matmul(v[0], v[1])?;
        t.sum(c)
    })
    .unwrap();
    assert!(fd.passed(), "{fd:?}");
}

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let x = t.constant(vec![1, 3], vec![0.0, 0.0, 0.0]).unwrap();
    let y = t.softmax_rows(x).unwrap();
    assert!(close(t.value(y), &[1.0 / 3.0; 3], 1e-15));

    let x = t.constant(vec![1, 2], vec![1000.0, 1000.0]).unwrap();
    let y = t.softmax_rows(x).unwrap();
    assert_eq!(t.value(y), &[0.5, 0.5]);

    let x = t.constant(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let y = t.softmax_rows(x).unwrap();
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    let direct: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp() / z).collect();
    assert!(close(t.value(y), &direct, 1e-15));
    assert!(close(t.value(y), &[0.09003, 0.24473, 0.66524], 5e-6));
}

#[test]
fn layer_norm_examples() {
    let mut t = Tape::new();
    let g = t.constant(vec![4], vec![1.0; 4]).unwrap();
    let b = t.constant(vec![4], vec![0.0; 4]).unwrap();
    let x = t.constant(vec![4], vec![5.0; 4]).unwrap();
    let y = t.layer_norm(x, g, b, 1e-5).unwrap();
    assert_eq!(t.value(y), &[0.0; 4]);

    let g2 = t.constant(vec![2], vec![1.0; 2]).unwrap();
    let b2 = t.constant(vec![2], vec![0.0; 2]).unwrap();
    let x = t.constant(vec![2], vec![1.0, 3.0]).unwrap();
    let y = t.layer_norm(x, g2, b2, 1e-5).unwrap();
    assert!(close(t.value(y), &[-1.0, 1.0], 1e-5));
}

#[test]
fn layer_norm_moments_on_random_vector() {
    let mut rng = crate::rng::seeded(11);
    let x0 = gradcheck::random_array(vec![4], &mut rng);
    let mut t = Tape::new();
    let g = t.constant(vec![4], vec![1.0; 4]).unwrap();
    let b = t.constant(vec![4], vec![0.0; 4]).unwrap();
    let x = t.constant_array(&x0).unwrap();
    let y = t.layer_norm(x, g, b, 0.0).unwrap();
    let y = t.value(y).to_vec();
    let mean = y.iter().sum::<f64>() / 4.0;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 4.0;
    assert!(mean.abs() <= 1e-12);
    assert!((var - 1.0).abs() <= 1e-6);
}

#[test]
fn feed_forward_examples() {
    let mut t = Tape::new();
    let x = t.constant(vec![2, 3], vec![1.0, -2.0, 0.5, 3.0, 3.0, 3.0]).unwrap();
    let w1 = t.constant(vec![3, 4], vec![0.0; 12]).unwrap();
    let b1 = t.constant(vec![4], vec![0.0; 4]).unwrap();
    let w2 = t.constant(vec![4, 3], vec![0.0; 12]).unwrap();
    let b2 = t.constant(vec![3], vec![0.1, 0.2, 0.3]).unwrap();
    let w = nn::FeedForwardWeights { w1, b1, w2, b2 };
    let y = nn::feed_forward(&mut t, x, &w).unwrap();
    assert_eq!(t.value(y), &[0.1, 0.2, 0.3, 0.1, 0.2, 0.3]);

    for (input, expect) in [(2.0, 2.0), (-2.0, 0.0)] {
        let mut t = Tape::new();
        let x = t.constant(vec![1, 1], vec![input]).unwrap();
        let one = |t: &mut Tape, v| t.constant(vec![1, 1], vec![v]).unwrap();
        let w1 = one(&mut t, 1.0);
        let w2 = one(&mut t, 1.0);
        let b1 = t.constant(vec![1], vec![0.0]).unwrap();
        let b2 = t.constant(vec![1], vec![0.0]).unwrap();
        let y = nn::feed_forward(&mut t, x, &nn::FeedForwardWeights { w1, b1, w2, b2 }).unwrap();
        assert_eq!(t.value(y), &[expect]);
    }
}

#[test]
fn backward_of_sum_and_half_square() {
    let x0 = arr(&[2, 3], &[0.5, -1.0, 2.0, 3.5, 0.0, -7.25]);
    let mut t = Tape::new();
    let x = t.variable(&x0).unwrap();
    let s = t.sum(x).unwrap();
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[1.0; 6]);

    let mut t = Tape::new();
    let x = t.variable(&x0).unwrap();
    let sq = t.mul(x, x).unwrap();
    let s = t.sum(sq).unwrap();
    let half = t.scale(s, 0.5).unwrap();
    t.backward(half).unwrap();
    assert_eq!(t.grad(x).unwrap(), x0.values());
}

#[test]
fn backward_rejects_non_scalar_and_second_pass() {
    let mut t = Tape::new();
    let x = t.variable(&arr(&[2], &[1.0, 2.0])).unwrap();
    assert!(matches!(t.backward(x), Err(Error::Contract(_))));
    let s = t.sum(x).unwrap();
    t.backward(s).unwrap();
    assert!(matches!(t.backward(s), Err(Error::Contract(_))));
    // recording after backward is rejected as well
    assert!(t.sum(x).is_err());
}

#[test]
fn foreign_vars_are_rejected() {
    let mut a = Tape::new();
    let mut b = Tape::new();
    let x = a.constant(vec![1], vec![1.0]).unwrap();
    assert!(matches!(b.sum(x), Err(Error::Contract(_))));
}

#[test]
fn non_finite_values_are_reported() {
    let mut t = Tape::new();
    let x = t.constant(vec![2], vec![1.0, 0.0]).unwrap();
    assert!(matches!(t.scale(x, f64::INFINITY), Err(Error::NonFinite(_))));
    assert!(matches!(t.constant(vec![1], vec![f64::NAN]), Err(Error::NonFinite(_))));
}

#[test]
fn bound_parameters_receive_gradients() {
    let mut params = ParamSet::new();
    params.insert("w", arr(&[2, 1], &[1.0, -1.0]));
    params.insert("unused", arr(&[3], &[0.0; 3]));
    let mut t = Tape::new();
    let bound = t.bind(&params).unwrap();
    let x = t.constant(vec![1, 2], vec![3.0, 4.0]).unwrap();
    let y = t.matmul(x, bound.var(0)).unwrap();
    let s = t.sum(y).unwrap();
    t.backward(s).unwrap();
    t.accumulate_into(&bound, &mut params).unwrap();
    assert_eq!(params.get("w").unwrap().grad().unwrap(), &[3.0, 4.0]);
    assert_eq!(params.get("unused").unwrap().grad().unwrap(), &[0.0; 3]);
}

#[test]
fn diff_array_rejects_inconsistent_shapes() {
    assert!(DiffArray::new(vec![2, 2], vec![0.0; 3]).is_err());
    assert!(DiffArray::new(vec![0], vec![]).is_err());
    assert_eq!(DiffArray::new(vec![], vec![4.0]).unwrap().len(), 1);
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_ignore_row_shifts(
        rows in 1usize..5,
        cols in 1usize..9,
        seed in any::<u64>(),
        shift in -50.0f64..50.0,
    ) {
        let mut rng = crate::rng::seeded(seed);
        let x0 = gradcheck::random_array(vec![rows, cols], &mut rng);
        let shifted: Vec<f64> = x0.values().iter().map(|v| v * 3.0 + shift).collect();
        let base: Vec<f64> = x0.values().iter().map(|v| v * 3.0).collect();
        let mut t = Tape::new();
        let a = t.constant(vec![rows, cols], base).unwrap();
        let b = t.constant(vec![rows, cols], shifted).unwrap();
        let ya = t.softmax_rows(a).unwrap();
        let yb = t.softmax_rows(b).unwrap();
        for row in t.value(ya).chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(close(t.value(ya), t.value(yb), 1e-9));
    }

    #[test]
    fn layer_norm_is_invariant_to_positive_affine_maps(
        d in 2usize..9,
        seed in any::<u64>(),
        a in 0.1f64..10.0,
        c in -10.0f64..10.0,
    ) {
        let mut rng = crate::rng::seeded(seed);
        let x0 = gradcheck::random_array(vec![d], &mut rng);
        let moved: Vec<f64> = x0.values().iter().map(|v| a * v + c).collect();
        let mut t = Tape::new();
        let g = t.constant(vec![d], vec![1.0; d]).unwrap();
        let b = t.constant(vec![d], vec![0.0; d]).unwrap();
        let x = t.constant_array(&x0).unwrap();
        let y = t.constant(vec![d], moved).unwrap();
        let lx = t.layer_norm(x, g, b, 0.0).unwrap();
        let ly = t.layer_norm(y, g, b, 0.0).unwrap();
        prop_assert!(close(t.value(lx), t.value(ly), 1e-9));
    }
}
