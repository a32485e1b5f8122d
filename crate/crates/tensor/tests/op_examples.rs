use advlab_tensor::gradcheck::{finite_difference_gradient, relative_error, DEFAULT_STEP};
use advlab_tensor::{Activation, Conv2dOptions, Graph, ShuffleDirection, Tensor, TensorError};

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, v).unwrap()
}

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

#[test]
fn conv_all_ones_counts_overlaps() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let w = g.constant(Tensor::ones(&[1, 1, 3, 3]));
    let y = g.conv2d(x, w, None, Conv2dOptions::same(3)).unwrap();
    let out = g.value(y).data();
    assert_eq!(out[4], 9.0);
    assert_eq!(out[0], 4.0);
    assert_eq!(out[1], 6.0);
}

#[test]
fn grouped_pointwise_conv_scales_each_channel() {
    let mut g = Graph::<f64>::new();
    let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
    let x = g.constant(t(&[1, 2, 2, 2], &xs));
    let w = g.constant(t(&[2, 1, 1, 1], &[2.0, 3.0]));
    let opts = Conv2dOptions {
        groups: 2,
        ..Default::default()
    };
    let y = g.conv2d(x, w, None, opts).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 4.0, 6.0, 8.0, 15.0, 18.0, 21.0, 24.0]);
}

#[test]
fn conv_output_size_follows_stride_and_padding() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::<f64>::zeros(&[2, 3, 9, 7]));
    let w = g.constant(Tensor::zeros(&[5, 3, 3, 3]));
    let b = g.constant(Tensor::zeros(&[5]));
    let opts = Conv2dOptions {
        stride: 2,
        padding: 1,
        groups: 1,
    };
    let y = g.conv2d(x, w, Some(b), opts).unwrap();
    assert_eq!(g.shape(y), &[2, 5, 5, 4]);
}

#[test]
fn conv_rejects_bad_shapes_naming_the_dimension() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 3, 4, 4]));
    let w = g.constant(Tensor::zeros(&[2, 2, 3, 3]));
    let err = g.conv2d(x, w, None, Conv2dOptions::same(3)).unwrap_err();
    assert!(matches!(err, TensorError::ShapeMismatch { .. }), "{err}");
    assert!(err.to_string().contains("dim 1"), "{err}");

    let w = g.constant(Tensor::zeros(&[2, 1, 3, 3]));
    let opts = Conv2dOptions {
        groups: 2,
        ..Conv2dOptions::same(3)
    };
    assert!(matches!(
        g.conv2d(x, w, None, opts).unwrap_err(),
        TensorError::Divisibility { .. }
    ));

    let w = g.constant(Tensor::zeros(&[1, 3, 7, 7]));
    let err = g.conv2d(x, w, None, Conv2dOptions::default()).unwrap_err();
    assert!(err.to_string().contains("kernel height"), "{err}");
}

#[test]
fn layer_norm_of_constant_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[1, 4, 2, 2], 0.7));
    let gamma = g.constant(Tensor::ones(&[4]));
    let beta = g.constant(Tensor::zeros(&[4]));
    let y = g.layer_norm_channels(x, gamma, beta, 1e-6).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn layer_norm_of_symmetric_pair_is_unit() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 2, 1, 1], &[-0.3, 0.3]));
    let gamma = g.constant(Tensor::ones(&[2]));
    let beta = g.constant(Tensor::zeros(&[2]));
    let y = g.layer_norm_channels(x, gamma, beta, 1e-12).unwrap();
    close(g.value(y).data(), &[-1.0, 1.0], 1e-9);
}

#[test]
fn layer_norm_requires_positive_eps() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::<f64>::zeros(&[1, 2, 1, 1]));
    let gamma = g.constant(Tensor::ones(&[2]));
    let beta = g.constant(Tensor::zeros(&[2]));
    assert!(g.layer_norm_channels(x, gamma, beta, 0.0).is_err());
}

#[test]
fn activation_values() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = g.relu(x);
    assert_eq!(g.value(r).data(), &[0.0, 0.0, 2.0]);
    let z = g.constant(Tensor::zeros(&[1]));
    let ge = g.gelu(z);
    let s = g.sigmoid(z);
    assert_eq!(g.value(ge).data(), &[0.0]);
    assert_eq!(g.value(s).data(), &[0.5]);
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(t(&[3], &[-1.0, 0.0, 2.0]));
    let r = g.relu(x);
    let l = g.sum_all(r);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn gelu_gradient_matches_differences_at_fixed_points() {
    let pts = t(&[5], &[-3.0, -1.0, 0.0, 1.0, 3.0]);
    let mut g = Graph::<f64>::new();
    let x = g.variable(pts.clone());
    let y = g.activation(Activation::Gelu, x);
    let l = g.sum_all(y);
    g.backward(l).unwrap();
    let fd = finite_difference_gradient(
        |p| p.data().iter().map(|&v| Activation::Gelu.apply(v)).sum(),
        &pts,
        DEFAULT_STEP,
    );
    assert!(relative_error(g.grad(x).unwrap(), &fd) < 1e-6);
}

#[test]
fn simple_gate_examples() {
    let mut g = Graph::<f64>::new();
    let first = [0.1, -0.2, 0.3, 0.4];
    let mut data = first.to_vec();
    data.extend([1.0; 4]);
    let x = g.constant(t(&[1, 2, 2, 2], &data));
    let y = g.simple_gate(x).unwrap();
    assert_eq!(g.shape(y), &[1, 1, 2, 2]);
    assert_eq!(g.value(y).data(), &first);

    let mut data = vec![2.0; 4];
    data.extend([3.0; 4]);
    let x = g.constant(t(&[1, 2, 2, 2], &data));
    let y = g.simple_gate(x).unwrap();
    assert_eq!(g.value(y).data(), &[6.0; 4]);

    let odd = g.constant(Tensor::zeros(&[1, 3, 2, 2]));
    assert!(matches!(g.simple_gate(odd), Err(TensorError::Divisibility { .. })));
}

#[test]
fn softmax_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full(&[2, 4], 1.3));
    let y = g.softmax(x, 1).unwrap();
    close(g.value(y).data(), &[0.25; 8], 1e-15);

    let x = g.constant(t(&[2], &[0.0, 3f64.ln()]));
    let y = g.softmax(x, 0).unwrap();
    close(g.value(y).data(), &[0.25, 0.75], 1e-15);

    assert!(matches!(g.softmax(x, 1), Err(TensorError::InvalidAxis { .. })));
}

#[test]
fn global_avg_pool_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(t(&[1, 2, 2, 2], &[1.0, 2.0, 3.0, 6.0, 5.0, 5.0, 5.0, 5.0]));
    let y = g.global_avg_pool(x).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 1, 1]);
    assert_eq!(g.value(y).data(), &[3.0, 5.0]);
    let l = g.sum_all(y);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[0.25; 8]);
}

#[test]
fn pixel_shuffle_down_gathers_cell_pixels() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let y = g.pixel_shuffle(x, 2, ShuffleDirection::Down).unwrap();
    assert_eq!(g.shape(y), &[1, 4, 1, 1]);
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);
    let z = g.pixel_shuffle(y, 2, ShuffleDirection::Up).unwrap();
    assert_eq!(g.value(z), g.value(x));
}

#[test]
fn pixel_shuffle_divisibility_errors() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros(&[1, 1, 3, 4]));
    assert!(matches!(
        g.pixel_shuffle(x, 2, ShuffleDirection::Down),
        Err(TensorError::Divisibility { .. })
    ));
    let x = g.constant(Tensor::zeros(&[1, 6, 2, 2]));
    assert!(matches!(
        g.pixel_shuffle(x, 2, ShuffleDirection::Up),
        Err(TensorError::Divisibility { .. })
    ));
}

#[test]
fn matmul_identity_and_broadcast() {
    let mut g = Graph::<f64>::new();
    let i = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let m = g.constant(t(&[2, 2], &[1.5, -2.0, 0.25, 7.0]));
    let p = g.matmul(i, m).unwrap();
    assert_eq!(g.value(p), g.value(m));

    let batch = g.constant(Tensor::from_fn(&[3, 2, 2], |k| k as f64));
    let p = g.matmul(batch, i).unwrap();
    assert_eq!(g.value(p), g.value(batch));

    let bad = g.constant(Tensor::zeros(&[3, 2]));
    assert!(g.matmul(m, bad).is_err());
}

#[test]
fn elementwise_and_broadcast_errors() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[3], &[1.0, -2.0, 3.5]));
    let ones = g.constant(Tensor::ones(&[3]));
    let p = g.mul(a, ones).unwrap();
    assert_eq!(g.value(p), g.value(a));
    let bad = g.constant(Tensor::ones(&[2]));
    assert!(matches!(g.add(a, bad), Err(TensorError::Broadcast { .. })));
}

#[test]
fn sum_gradient_is_all_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(Tensor::from_fn(&[2, 3, 4], |i| i as f64 * 0.1));
    let l = g.sum_all(x);
    g.backward(l).unwrap();
    assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn square_gradient_is_analytic() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(t(&[2], &[1.0, 2.0]));
    let sq = g.mul(x, x).unwrap();
    let l = g.sum_all(sq);
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 4.0]);
}

#[test]
fn reductions_keep_axes() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::from_fn(&[2, 3], |i| i as f64));
    let s = g.sum(x, &[1]).unwrap();
    assert_eq!(g.shape(s), &[2, 1]);
    assert_eq!(g.value(s).data(), &[3.0, 12.0]);
    let m = g.mean(x, &[0]).unwrap();
    assert_eq!(g.value(m).data(), &[1.5, 2.5, 3.5]);
}

#[test]
fn backward_requires_scalar_loss() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(Tensor::<f64>::ones(&[2]));
    assert!(matches!(g.backward(x), Err(TensorError::NotScalar(_))));
}

#[test]
fn gradients_reset_unless_accumulating() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(t(&[2], &[1.0, 2.0]));
    let l = g.sum_all(x);
    g.backward(l).unwrap();
    g.backward(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1.0, 1.0]);
    g.backward_accumulate(l).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(t(&[2], &[1.0, 2.0]));
    let c = g.constant(t(&[2], &[3.0, 4.0]));
    let p = g.mul(x, c).unwrap();
    let l = g.sum_all(p);
    g.backward(l).unwrap();
    assert!(g.grad(c).is_none());
    assert!(!g.requires_grad(c));
    assert_eq!(g.grad(x).unwrap().data(), &[3.0, 4.0]);
}

#[test]
fn backward_visits_each_op_once() {
    let mut g = Graph::<f64>::new();
    let x = g.variable(Tensor::<f64>::from_fn(&[1, 2, 4, 4], |i| (i as f64 * 0.37).sin()));
    let w = g.variable(Tensor::from_fn(&[2, 2, 3, 3], |i| (i as f64 * 0.11).cos()));
    let y = g.conv2d(x, w, None, Conv2dOptions::same(3)).unwrap();
    let a = g.gelu(y);
    let b = g.add(a, x).unwrap();
    let c = g.mul(b, b).unwrap();
    let l = g.mean_all(c);
    g.backward(l).unwrap();
    assert_eq!(g.last_backward_visits(), g.op_count());
    // a second call recounts from zero
    g.backward(l).unwrap();
    assert_eq!(g.last_backward_visits(), g.op_count());
}

#[test]
fn edge_dump_lists_every_edge() {
    let mut g = Graph::<f64>::new();
    let a = g.variable(t(&[2], &[1.0, 2.0]));
    let b = g.constant(t(&[2], &[3.0, 4.0]));
    let c = g.add(a, b).unwrap();
    let _ = g.sum_all(c);
    let dump = g.dump_edges();
    assert!(dump.contains("0 -> 2 add"));
    assert!(dump.contains("1 -> 2 add"));
    assert!(dump.contains("node 2 add [2] grad"));
    assert!(dump.lines().filter(|l| l.contains("->")).count() >= 3);
}

#[test]
fn squared_error_with_unit_weights_matches_plain_mse_bitwise() {
    let p = Tensor::<f64>::from_fn(&[2, 3, 2, 2], |i| (i as f64 * 0.71).sin());
    let x = Tensor::<f64>::from_fn(&[2, 3, 2, 2], |i| (i as f64 * 0.13).cos());
    let run = |w: Option<Tensor<f64>>| {
        let mut g = Graph::<f64>::new();
        let pv = g.variable(p.clone());
        let xv = g.constant(x.clone());
        let l = g.squared_error(pv, xv, w).unwrap();
        g.backward(l).unwrap();
        (g.value(l).clone(), g.grad(pv).unwrap().clone())
    };
    let (l0, g0) = run(None);
    let (l1, g1) = run(Some(Tensor::ones(&[2, 1, 2, 2])));
    assert_eq!(l0.data()[0].to_bits(), l1.data()[0].to_bits());
    assert_eq!(g0, g1);
    let expected: f64 =
        p.data().iter().zip(x.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / p.len() as f64;
    assert!((l0.data()[0] - expected).abs() < 1e-15);
}

#[test]
fn finite_difference_examples() {
    let x = Tensor::<f64>::from_fn(&[4], |i| i as f64 - 1.5);
    let g = finite_difference_gradient(|p| p.sum(), &x, DEFAULT_STEP);
    close(g.data(), &[1.0; 4], 1e-9);
    let x = t(&[1], &[3.0]);
    let g = finite_difference_gradient(|p| p.data()[0] * p.data()[0], &x, DEFAULT_STEP);
    close(g.data(), &[6.0], 1e-8);
}
