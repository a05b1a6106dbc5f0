use cpseg_tensor::{Graph, Tensor};
use proptest::prelude::*;

fn conv(x: &Tensor<f64>, w: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::inference();
    let xv = g.constant(x.clone());
    let wv = g.constant(w.clone());
    let y = g.conv3d(xv, wv, None).unwrap();
    g.into_value(y)
}

fn shape_and_kernel() -> impl Strategy<Value = ([usize; 5], usize, usize)> {
    (1usize..3, 1usize..3, 1usize..5, 1usize..5, 1usize..5, prop::sample::select(vec![1usize, 3, 5]), 1usize..3)
        .prop_map(|(n, c, d, h, w, k, co)| ([n, c, d, h, w], k, co))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn conv_is_linear((shape, k, co) in shape_and_kernel(), a in -2.0f64..2.0, b in -2.0f64..2.0, seed in 0u64..1000) {
        let numel: usize = shape.iter().product();
        let x = Tensor::from_fn(shape.to_vec(), |i| ((i as u64 * 31 + seed) as f64).sin());
        let y = Tensor::from_fn(shape.to_vec(), |i| ((i as u64 * 17 + seed) as f64).cos());
        let w = Tensor::from_fn(vec![co, shape[1], k, k, k], |i| ((i as u64 + seed) as f64 * 0.7).sin());
        let combo = Tensor::new(shape.to_vec(), (0..numel).map(|i| a * x.data()[i] + b * y.data()[i]).collect()).unwrap();
        let lhs = conv(&combo, &w);
        let (cx, cy) = (conv(&x, &w), conv(&y, &w));
        for i in 0..lhs.numel() {
            prop_assert!((lhs.data()[i] - (a * cx.data()[i] + b * cy.data()[i])).abs() < 1e-6);
        }
    }

    #[test]
    fn output_shapes_follow_inputs((shape, k, co) in shape_and_kernel()) {
        let mut g = Graph::<f64>::inference();
        let x = g.constant(Tensor::zeros(shape.to_vec()));
        let w = g.constant(Tensor::zeros([co, shape[1], k, k, k]));
        let y = g.conv3d(x, w, None).unwrap();
        prop_assert_eq!(g.shape(y), &[shape[0], co, shape[2], shape[3], shape[4]][..]);

        let target = [shape[2] * 2, shape[3] + 1, shape[4] * 3];
        let u = g.upsample(x, target).unwrap();
        prop_assert_eq!(g.shape(u), &[shape[0], shape[1], target[0], target[1], target[2]][..]);

        let cat = g.concat(&[x, y]).unwrap();
        prop_assert_eq!(g.shape(cat)[1], shape[1] + co);

        let even = g.constant(Tensor::zeros([shape[0], shape[1], 2 * shape[2], 2 * shape[3], 2 * shape[4]]));
        let p = g.max_pool2(even).unwrap();
        prop_assert_eq!(g.shape(p), &shape[..]);
    }

    #[test]
    fn forward_is_deterministic((shape, k, co) in shape_and_kernel(), seed in 0u64..1000) {
        let x = Tensor::<f32>::from_fn(shape.to_vec(), |i| ((i as u64 * 13 + seed) as f32).sin());
        let w = Tensor::<f32>::from_fn(vec![co, shape[1], k, k, k], |i| ((i as u64 + seed) as f32).cos());
        let run = || {
            let mut g = Graph::<f32>::inference();
            let xv = g.constant(x.clone());
            let wv = g.constant(w.clone());
            let y = g.conv3d(xv, wv, None).unwrap();
            let y = g.sigmoid(y);
            g.into_value(y)
        };
        let (a, b) = (run(), run());
        prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
