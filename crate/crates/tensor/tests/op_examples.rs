use std::sync::Arc;

use cpseg_tensor::{BnMode, Graph, Tensor, TensorError};

fn t5(shape: [usize; 5], data: Vec<f64>) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn conv_1x1_is_scalar_multiply() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t5([1, 1, 1, 1, 1], vec![2.0]));
    let w = g.constant(t5([1, 1, 1, 1, 1], vec![3.0]));
    let b = g.constant(Tensor::new(vec![1], vec![0.0]).unwrap());
    let y = g.conv3d(x, w, Some(b)).unwrap();
    assert_eq!(g.value(y).data(), &[6.0]);
}

#[test]
fn conv_delta_kernel_is_identity() {
    let mut kernel = vec![0.0; 27];
    kernel[13] = 1.0;
    let data: Vec<f64> = (0..2 * 4 * 5 * 3).map(|i| (i as f64).sin()).collect();
    let mut g = Graph::<f64>::new();
    let x = g.constant(t5([2, 1, 4, 5, 3], data.clone()));
    let w = g.constant(t5([1, 1, 3, 3, 3], kernel));
    let y = g.conv3d(x, w, None).unwrap();
    assert_eq!(g.value(y).data(), &data[..]);
}

#[test]
fn conv_ones_kernel_sums_block() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full([1, 1, 3, 3, 3], 1.0));
    let w = g.constant(Tensor::full([1, 1, 3, 3, 3], 1.0));
    let y = g.conv3d(x, w, None).unwrap();
    assert_eq!(g.value(y).data()[13], 27.0);
    // corners see 8 of the ones
    assert_eq!(g.value(y).data()[0], 8.0);
}

#[test]
fn bn_train_two_point_normalization() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t5([1, 1, 1, 1, 2], vec![1.0, 3.0]));
    let gamma = g.constant(Tensor::full([1], 1.0));
    let beta = g.constant(Tensor::full([1], 0.0));
    let mode = BnMode::Train {
        running: None,
        momentum: 0.1,
    };
    let y = g.batch_norm(x, gamma, beta, 1e-12, mode).unwrap();
    let v = g.value(y).data();
    assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 1.0).abs() < 1e-9);

    let gamma2 = g.constant(Tensor::full([1], 2.0));
    let beta2 = g.constant(Tensor::full([1], 1.0));
    let mode = BnMode::Train {
        running: None,
        momentum: 0.1,
    };
    let y2 = g.batch_norm(x, gamma2, beta2, 1e-12, mode).unwrap();
    let v = g.value(y2).data();
    assert!((v[0] + 1.0).abs() < 1e-9 && (v[1] - 3.0).abs() < 1e-9);
}

#[test]
fn bn_eval_identity_statistics() {
    let mut g = Graph::<f64>::new();
    let data = vec![-2.0, 0.5, 7.0, 1.0];
    let x = g.constant(t5([1, 1, 1, 2, 2], data.clone()));
    let gamma = g.constant(Tensor::full([1], 1.0));
    let beta = g.constant(Tensor::full([1], 0.0));
    let mode = BnMode::Eval {
        running_mean: &[0.0],
        running_var: &[1.0],
    };
    let y = g.batch_norm(x, gamma, beta, 0.0, mode).unwrap();
    assert_eq!(g.value(y).data(), &data[..]);
}

#[test]
fn bn_updates_running_statistics() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t5([1, 1, 1, 1, 2], vec![1.0, 3.0]));
    let gamma = g.constant(Tensor::full([1], 1.0));
    let beta = g.constant(Tensor::full([1], 0.0));
    let (mut rm, mut rv) = (vec![0.0], vec![1.0]);
    let mode = BnMode::Train {
        running: Some((&mut rm, &mut rv)),
        momentum: 0.1,
    };
    g.batch_norm(x, gamma, beta, 1e-5, mode).unwrap();
    assert!((rm[0] - 0.2).abs() < 1e-12);
    // unbiased variance of {1,3} is 2
    assert!((rv[0] - (0.9 + 0.2)).abs() < 1e-12);
}

#[test]
fn prelu_examples() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(t5([1, 1, 1, 1, 2], vec![2.0, -4.0]));
    let a = g.constant(Tensor::full([1], 0.25));
    let y = g.prelu(x, a).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, -1.0]);
}

#[test]
fn prelu_slope_derivative_matches_finite_difference() {
    let eval = |a: f64, want_grad: bool| {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t5([1, 1, 1, 1, 1], vec![-1.0]));
        let av = g.input(Tensor::full([1], a), want_grad);
        let y = g.prelu(x, av).unwrap();
        let s = g.sum(y);
        let val = g.value(s).item();
        let grad = want_grad.then(|| g.backward(s, None).unwrap().get(av).unwrap().item());
        (val, grad)
    };
    let (_, analytic) = eval(0.25, true);
    let h = 1e-4;
    let numeric = (eval(0.25 + h, false).0 - eval(0.25 - h, false).0) / (2.0 * h);
    assert_eq!(analytic.unwrap(), -1.0);
    assert!((numeric - -1.0).abs() < 1e-6);
}

#[test]
fn upsample_constant_and_replication() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::full([1, 2, 2, 3, 2], 4.5));
    let y = g.upsample(x, [5, 7, 4]).unwrap();
    assert_eq!(g.shape(y), &[1, 2, 5, 7, 4]);
    assert!(g.value(y).data().iter().all(|&v| (v - 4.5).abs() < 1e-12));

    let one = g.constant(t5([1, 1, 1, 1, 1], vec![3.0]));
    let y = g.upsample(one, [2, 2, 2]).unwrap();
    assert_eq!(g.value(y).data(), &[3.0; 8]);
}

#[test]
fn upsample_linear_ramp_matches_closed_form() {
    // half-pixel sampling: src = (j + 0.5) * 4/8 - 0.5, clamped to [0, 3]
    let mut g = Graph::<f64>::new();
    let x = g.constant(t5([1, 1, 4, 1, 1], vec![0.0, 1.0, 2.0, 3.0]));
    let y = g.upsample(x, [8, 1, 1]).unwrap();
    for (j, &v) in g.value(y).data().iter().enumerate() {
        let src = ((j as f64 + 0.5) * 0.5 - 0.5).clamp(0.0, 3.0);
        assert!((v - src).abs() < 1e-6, "j={j}: {v} vs {src}");
    }
}

#[test]
fn upsample_rejects_downsampling() {
    let mut g = Graph::<f64>::new();
    let x = g.constant(Tensor::zeros([1, 1, 4, 4, 4]));
    assert!(g.upsample(x, [2, 4, 4]).is_err());
}

#[test]
fn pointwise_and_structural_examples() {
    let mut g = Graph::<f64>::new();
    let z = g.constant(Tensor::zeros([1]));
    let s = g.sigmoid(z);
    assert_eq!(g.value(s).item(), 0.5);

    let part = g.constant(Tensor::zeros([2, 4, 2, 2, 2]));
    let cat = g.concat(&[part, part, part, part]).unwrap();
    assert_eq!(g.shape(cat), &[2, 16, 2, 2, 2]);

    let a = g.constant(Tensor::zeros([1, 2, 2, 2, 2]));
    let b = g.constant(Tensor::zeros([1, 3, 2, 2, 2]));
    let err = g.add(a, b).unwrap_err();
    assert!(matches!(err, TensorError::ShapeMismatch { dim: "channels", .. }));
}

#[test]
fn max_pool_single_one_matches_brute_force() {
    let mut data = vec![0.0; 64];
    data[0] = 1.0;
    let mut g = Graph::<f64>::new();
    let x = g.constant(t5([1, 1, 4, 4, 4], data.clone()));
    let y = g.max_pool2(x).unwrap();
    // brute force: each output takes the max of its 2x2x2 window
    let mut expect = vec![0.0; 8];
    for (o, e) in expect.iter_mut().enumerate() {
        let (oz, oy, ox) = (o / 4, (o / 2) % 2, o % 2);
        for i in 0..64 {
            let (z, yy, xx) = (i / 16, (i / 4) % 4, i % 4);
            if z / 2 == oz && yy / 2 == oy && xx / 2 == ox {
                *e = f64::max(*e, data[i]);
            }
        }
    }
    assert_eq!(g.value(y).data(), &expect[..]);
    assert_eq!(g.value(y).data().iter().filter(|&&v| v == 1.0).count(), 1);
}

#[test]
fn backward_of_sum_is_ones() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::from_fn([1, 2, 2, 2, 2], |i| i as f64), true);
    let s = g.sum(x);
    let grads = g.backward(s, None).unwrap();
    assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_of_square_sum() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full([1], 3.0), true);
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq);
    let grads = g.backward(s, None).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::zeros([1, 1, 1, 1, 2]), true);
    assert!(matches!(g.backward(x, None), Err(TensorError::NonScalarLoss(_))));
}

#[test]
fn backward_accumulates_into_store() {
    use cpseg_tensor::{ParamKind, ParameterStore};
    let mut store = ParameterStore::<f64>::new();
    let id = store.register("w", ParamKind::Learnable, Tensor::full([2], 1.5)).unwrap();
    for _ in 0..2 {
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let s = g.sum(w);
        g.backward(s, Some(&mut store)).unwrap();
    }
    assert_eq!(store.grad(id).unwrap().data(), &[2.0, 2.0]);
}

#[test]
fn wbce_perfect_prediction_and_direct_value() {
    let mut g = Graph::<f64>::new();
    let target = Arc::new(Tensor::new(vec![4], vec![1.0, 0.0, 1.0, 0.0]).unwrap());
    let p = g.constant((*target).clone());
    let l = g.wbce(p, target, 3.0).unwrap();
    assert!(g.value(l).item() <= 1e-6);

    let target = Arc::new(Tensor::full([1], 1.0));
    let p = g.constant(Tensor::full([1], 0.5));
    let l = g.wbce(p, target, 2.0).unwrap();
    assert!((g.value(l).item() - 2.0 * std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn inference_graph_records_no_gradients() {
    let mut g = Graph::<f64>::inference();
    let x = g.input(Tensor::full([1], 2.0), true);
    assert!(!g.requires_grad(x));
    let y = g.scale(x, 3.0);
    assert!(!g.requires_grad(y));
    assert_eq!(g.value(y).item(), 6.0);
}
