use gaborcnn::tensor::{
    conv2d_valid, conv_layer_backward, conv_layer_forward, fc_backward, fc_forward,
    meanpool_backward, meanpool_forward, numerical_gradient_check, ConvLayerState,
    DenseLayerState, Network, NetworkSpec, Shape3, LayerSpec, Tensor,
};
use gaborcnn::tensor::Activation;
use proptest::prelude::*;

fn naive_conv(x: &[f64], h: usize, w: usize, k: &[f64], kk: usize) -> Vec<f64> {
    let (oh, ow) = (h - kk + 1, w - kk + 1);
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            for u in 0..kk {
                for v in 0..kk {
                    out[r * ow + c] += x[(r + u) * w + c + v] * k[u * kk + v];
                }
            }
        }
    }
    out
}

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #[test]
    fn conv_matches_naive_loops(
        (h, w, kk, x, k) in (3usize..9, 3usize..9, prop::sample::select(vec![1usize, 3]))
            .prop_flat_map(|(h, w, kk)| (Just(h), Just(w), Just(kk), values(h * w), values(kk * kk)))
    ) {
        let xt = Tensor::new(vec![h, w], x.clone()).unwrap();
        let kt = Tensor::new(vec![kk, kk], k.clone()).unwrap();
        let got = conv2d_valid(&xt, &kt).unwrap();
        let want = naive_conv(&x, h, w, &k, kk);
        for (a, b) in got.data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pooling_adjoint_identity(
        (m, s, f, x, g) in (1usize..3, 1usize..4, 1usize..4)
            .prop_flat_map(|(m, s, f)| (Just(m), Just(s), Just(f), values(m * s * f * s * f), values(m * s * s)))
    ) {
        // <pool(x), g> == <x, pool_adjoint(g)>
        let n = s * f;
        let xt = Tensor::new(vec![m, n, n], x).unwrap();
        let gt = Tensor::new(vec![m, s, s], g).unwrap();
        let lhs: f64 = meanpool_forward(&xt, f).unwrap().data().iter().zip(gt.data()).map(|(a, b)| a * b).sum();
        let back = meanpool_backward(&gt, f).unwrap();
        let rhs: f64 = xt.data().iter().zip(back.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv_input_grad_is_adjoint_of_forward(
        (c, m, x, k, g) in (1usize..3, 1usize..3)
            .prop_flat_map(|(c, m)| (Just(c), Just(m), values(c * 36), values(m * c * 9), values(m * 16)))
    ) {
        // With identity activation the input gradient is the transposed
        // correlation: <conv(x) - b, g> == <x, input_grad(g)>.
        let state = ConvLayerState::new(
            Tensor::new(vec![m, c, 3, 3], k).unwrap(),
            vec![0.0; m],
            Activation::Identity,
        ).unwrap();
        let xt = Tensor::new(vec![c, 6, 6], x).unwrap();
        let y = conv_layer_forward(&state, &xt).unwrap();
        let gt = Tensor::new(vec![m, 4, 4], g).unwrap();
        let back = conv_layer_backward(&state, &xt, &y, &gt, &vec![false; m * c]).unwrap();
        let lhs: f64 = y.data().iter().zip(gt.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = xt.data().iter().zip(back.input_grad.data()).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-10);
        prop_assert!(back.weights.slots.iter().all(Option::is_none));
    }

    #[test]
    fn dense_backward_matches_differences(w in values(6), b in values(2), x in values(3), g in values(2)) {
        let layer = DenseLayerState::new(Tensor::new(vec![2, 3], w).unwrap(), b, Activation::Sigmoid).unwrap();
        let y = fc_forward(&layer, &x).unwrap();
        let back = fc_backward(&layer, &x, &y, &g).unwrap();
        let obj = |xs: &[f64]| -> f64 { fc_forward(&layer, xs).unwrap().iter().zip(&g).map(|(a, b)| a * b).sum() };
        for i in 0..3 {
            let (mut p, mut q) = (x.clone(), x.clone());
            p[i] += 1e-5;
            q[i] -= 1e-5;
            let fd = (obj(&p) - obj(&q)) / 2e-5;
            prop_assert!((fd - back.input_grad[i]).abs() < 1e-7);
        }
    }
}

#[test]
fn gradient_check_on_a_hidden_fc_stack() {
    let spec = NetworkSpec::new(
        Shape3::new(1, 6, 6),
        vec![
            LayerSpec::conv(3, 2),
            LayerSpec::pool(2),
            LayerSpec::fully_connected(4),
            LayerSpec::output(3),
        ],
    )
    .unwrap();
    let net = Network::<f64>::init(&spec, 3).unwrap();
    let x = Tensor::from_fn(&[1, 6, 6], |i| (i as f64 * 0.37).sin().abs());
    let r = numerical_gradient_check(&net, &x, 2, 1e-4).unwrap();
    assert!(r.passed, "{r:?}");
}

#[test]
fn shape_errors() {
    let k = Tensor::<f64>::zeros(&[5, 5]);
    assert!(conv2d_valid(&Tensor::zeros(&[4, 4]), &k).is_err());
    assert!(conv2d_valid(&Tensor::<f64>::zeros(&[1, 4, 4]), &Tensor::zeros(&[3, 3])).is_err());
    assert!(meanpool_forward(&Tensor::<f64>::zeros(&[1, 5, 5]), 2).is_err());
    let state = ConvLayerState::new(Tensor::<f64>::zeros(&[1, 2, 3, 3]), vec![0.0], Activation::Sigmoid).unwrap();
    assert!(conv_layer_forward(&state, &Tensor::zeros(&[1, 6, 6])).is_err());
}
