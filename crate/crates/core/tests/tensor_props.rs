use proptest::prelude::*;
use tvconv::tensor::ops::{conv2d, depthwise_conv2d, downsample_mean, layer_norm, relu};
use tvconv::Tensor;

fn tensor(dims: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = dims.iter().product();
    prop::collection::vec(-2.0f64..2.0, n).prop_map(move |d| Tensor::new(dims.clone(), d).unwrap())
}

fn chw() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..4, 1usize..7, 1usize..7)
}

fn kernel() -> impl Strategy<Value = usize> {
    prop_oneof![Just(1usize), Just(3), Just(5)]
}

fn dw_case() -> impl Strategy<Value = (Tensor, Tensor, Tensor, Tensor, f64, f64)> {
    (chw(), kernel()).prop_flat_map(|((c, h, w), k)| {
        (
            tensor(vec![c, h, w]),
            tensor(vec![c, h, w]),
            tensor(vec![c, k, k]),
            tensor(vec![c, k, k]),
            -3.0f64..3.0,
            -3.0f64..3.0,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn depthwise_is_linear_in_input((x, y, w, _, a, b) in dw_case()) {
        let combo = x.scale(a).add(&y.scale(b)).unwrap();
        let lhs = depthwise_conv2d(&combo, &w).unwrap();
        let rhs = depthwise_conv2d(&x, &w).unwrap().scale(a).add(&depthwise_conv2d(&y, &w).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn depthwise_is_linear_in_weight((x, _, v, w, a, b) in dw_case()) {
        let combo = v.scale(a).add(&w.scale(b)).unwrap();
        let lhs = depthwise_conv2d(&x, &combo).unwrap();
        let rhs = depthwise_conv2d(&x, &v).unwrap().scale(a).add(&depthwise_conv2d(&x, &w).unwrap().scale(b)).unwrap();
        prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-10);
    }

    #[test]
    fn single_channel_conv_is_depthwise_bitwise(
        (x, w) in (1usize..8, 1usize..8, kernel())
            .prop_flat_map(|(h, w, k)| (tensor(vec![1, h, w]), tensor(vec![1, k, k])))
    ) {
        let k = w.dims()[1];
        let dw = depthwise_conv2d(&x, &w).unwrap();
        let full = conv2d(&x, &w.clone().reshape(&[1, 1, k, k]).unwrap()).unwrap();
        prop_assert_eq!(dw.data(), full.data());
        let x32: Tensor<f32> = x.cast();
        let w32: Tensor<f32> = w.cast();
        let dw32 = depthwise_conv2d(&x32, &w32).unwrap();
        let full32 = conv2d(&x32, &w32.reshape(&[1, 1, k, k]).unwrap()).unwrap();
        prop_assert_eq!(dw32.data(), full32.data());
    }

    #[test]
    fn layer_norm_standardises(
        (x, scale) in (chw().prop_flat_map(|(c, h, w)| tensor(vec![c, h, w])), prop_oneof![Just(1.0), Just(1e-2), Just(2e-3)])
    ) {
        // eps small enough that var / (var + eps) is within 1e-6 of 1 for
        // every admitted input; the default eps shrinks small variances
        let x = x.scale(scale);
        let n = x.len() as f64;
        let mean = x.sum() / n;
        let var = x.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        prop_assume!(var > 1e-6);
        let c = x.dims()[0];
        let y = layer_norm(&x, &Tensor::filled(&[c], 1.0).unwrap(), &Tensor::zeros(&[c]).unwrap(), 1e-12).unwrap();
        let m = y.sum() / n;
        let v = y.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        prop_assert!(m.abs() < 1e-9);
        prop_assert!((v - 1.0).abs() < 1e-6, "variance {v}, input variance {var}");
    }

    #[test]
    fn ops_are_deterministic((x, _, w, _, _, _) in dw_case()) {
        prop_assert_eq!(depthwise_conv2d(&x, &w).unwrap(), depthwise_conv2d(&x, &w).unwrap());
        prop_assert_eq!(relu(&x), relu(&x));
        let c = x.dims()[0];
        let g = Tensor::filled(&[c], 0.7).unwrap();
        let b = Tensor::filled(&[c], 0.1).unwrap();
        prop_assert_eq!(layer_norm(&x, &g, &b, 1e-5).unwrap(), layer_norm(&x, &g, &b, 1e-5).unwrap());
    }

    #[test]
    fn downsample_partitions_tile_the_input(
        (x, oh, ow) in chw().prop_flat_map(|(c, h, w)| (tensor(vec![c, h, w]), 1..=h, 1..=w))
    ) {
        // the partition-size weighted sum of the cell means recovers the total
        let (c, h, w) = x.chw("x").unwrap();
        let y = downsample_mean(&x, oh, ow).unwrap();
        for ch in 0..c {
            let mut total = 0.0;
            for i in 0..oh {
                for j in 0..ow {
                    let rows = (i + 1) * h / oh - i * h / oh;
                    let cols = (j + 1) * w / ow - j * w / ow;
                    total += y.get(&[ch, i, j]).unwrap() * (rows * cols) as f64;
                }
            }
            let want: f64 = x.data()[ch * h * w..(ch + 1) * h * w].iter().sum();
            prop_assert!((total - want).abs() < 1e-10);
        }
    }
}
