use proptest::prelude::*;
use rand::Rng;
use tvconv::error::Error;
use tvconv::seed::rng_for;
use tvconv::tensor::ops::{conv2d, depthwise_conv2d, layer_norm, relu};
use tvconv::tvconv::{
    factorized_weights, generate_weights, init_affinity_constant, tvconv_apply, tvconv_naive_oracle, AffinityMaps,
    GeneratorConfig, GeneratorParams, TvConvLayer, WeightField,
};
use tvconv::Tensor;

fn tensor(dims: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = dims.iter().product();
    prop::collection::vec(-1.0f64..1.0, n).prop_map(move |d| Tensor::new(dims.clone(), d).unwrap())
}

fn random(rng: &mut impl Rng, dims: &[usize]) -> Tensor {
    Tensor::from_fn(dims, |_| rng.gen_range(-1.0..1.0)).unwrap()
}

fn generator(rng: &mut impl Rng, c_a: usize, c: usize, k: usize, layers: usize, kb: usize) -> GeneratorParams {
    let cfg = GeneratorConfig {
        layers,
        channels: rng.gen_range(1..=6),
        kernel: kb,
    };
    let mut g = GeneratorParams::init(c_a, c, k, cfg, rng).unwrap();
    for unit in &mut g.hidden {
        unit.gamma = random(rng, unit.gamma.dims());
        unit.beta = random(rng, unit.beta.dims());
    }
    g
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn apply_matches_naive_oracle(
        (x, field, k) in (1usize..=4, 1usize..=6, 1usize..=6, prop_oneof![Just(1usize), Just(3)])
            .prop_flat_map(|(c, h, w, k)| (tensor(vec![c, h, w]), tensor(vec![c * k * k, h, w]), Just(k)))
    ) {
        let c = x.dims()[0];
        let wf = WeightField::new(field, c, k).unwrap();
        let fast = tvconv_apply(&x, &wf).unwrap();
        let slow = tvconv_naive_oracle(&x, &wf).unwrap();
        prop_assert!(fast.max_abs_diff(&slow).unwrap() < 1e-12);
    }
}

#[test]
fn constant_maps_with_pointwise_generator_degenerate_everywhere() {
    let mut rng = rng_for(1, "degenerate-global");
    for _ in 0..100 {
        let (c, h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=7), rng.gen_range(1..=7));
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let c_a = rng.gen_range(1..=4);
        let layers = rng.gen_range(0..=3);
        let gen = generator(&mut rng, c_a, c, k, layers, 1);
        let a = init_affinity_constant(c_a, h, w, 1.0).unwrap();
        let wf = generate_weights(&a, &gen).unwrap();
        let slice = wf.slice_at(0, 0);
        for i in 0..h {
            for j in 0..w {
                assert_eq!(wf.slice_at(i, j), slice);
            }
        }
        let x = random(&mut rng, &[c, h, w]);
        let tv = tvconv_apply(&x, &wf).unwrap();
        let dw = depthwise_conv2d(&x, &slice).unwrap();
        assert!(tv.max_abs_diff(&dw).unwrap() < 1e-12);
    }
}

/// Border effects reach `(L + 1) * (k_B / 2)` pixels in: the `L` hidden
/// convs and the output conv all pad with zeros.
fn interior(layers: usize, kb: usize) -> usize {
    (layers + 1) * (kb / 2)
}

#[test]
fn constant_maps_degenerate_on_the_interior() {
    let mut rng = rng_for(2, "degenerate-interior");
    let mut checked = 0;
    while checked < 100 {
        let layers = rng.gen_range(0..=3);
        let kb = [3, 5][rng.gen_range(0..2)];
        let m = interior(layers, kb);
        let (h, w) = (2 * m + rng.gen_range(1..=4), 2 * m + rng.gen_range(1..=4));
        let (c, k, c_a) = (rng.gen_range(1..=3), [1, 3][rng.gen_range(0..2)], rng.gen_range(1..=3));
        let gen = generator(&mut rng, c_a, c, k, layers, kb);
        let value = rng.gen_range(-2.0..2.0);
        let wf = generate_weights(&init_affinity_constant(c_a, h, w, value).unwrap(), &gen).unwrap();
        let slice = wf.slice_at(m, m);
        let x = random(&mut rng, &[c, h, w]);
        let tv = tvconv_apply(&x, &wf).unwrap();
        let dw = depthwise_conv2d(&x, &slice).unwrap();
        for i in m..h - m {
            for j in m..w - m {
                assert_eq!(wf.slice_at(i, j), slice);
                for ch in 0..c {
                    let d = tv.get(&[ch, i, j]).unwrap() - dw.get(&[ch, i, j]).unwrap();
                    assert!(d.abs() < 1e-12);
                }
            }
        }
        checked += 1;
    }
}

#[test]
fn hidden_layer_margin_alone_misses_the_output_conv() {
    // with no hidden layers an L * (k_B / 2) margin would claim a constant
    // field everywhere, but the padded output conv still varies at the border
    let mut rng = rng_for(3, "margin");
    let gen = generator(&mut rng, 2, 2, 3, 0, 3);
    let wf = generate_weights(&init_affinity_constant(2, 5, 5, 1.0).unwrap(), &gen).unwrap();
    assert_ne!(wf.slice_at(0, 0), wf.slice_at(2, 2));
    assert_eq!(wf.slice_at(1, 1), wf.slice_at(2, 2));
}

#[test]
fn linear_generator_is_the_factorised_form() {
    let mut rng = rng_for(4, "factorised");
    for _ in 0..200 {
        let (c, h, w) = (rng.gen_range(1..=4), rng.gen_range(1..=6), rng.gen_range(1..=6));
        let k = [1, 3][rng.gen_range(0..2)];
        let c_a = rng.gen_range(1..=4);
        let gen = generator(&mut rng, c_a, c, k, 0, 1);
        let a = AffinityMaps::new(random(&mut rng, &[c_a, h, w])).unwrap();
        let basis = gen.output.clone().reshape(&[c * k * k, c_a]).unwrap();
        let coeff = a.tensor().clone().reshape(&[c_a, h * w]).unwrap();
        let eq3 = factorized_weights(&basis, &coeff, c, k, h, w).unwrap();
        assert_eq!(generate_weights(&a, &gen).unwrap(), eq3);
    }
}

#[test]
fn generator_matches_straight_line_composition() {
    let mut rng = rng_for(5, "compose");
    for _ in 0..5 {
        let (c, h, w) = (rng.gen_range(1..=3), rng.gen_range(2..=6), rng.gen_range(2..=6));
        let gen = GeneratorParams::init(4, c, 3, GeneratorConfig::default(), &mut rng).unwrap();
        let a = AffinityMaps::new(random(&mut rng, &[4, h, w])).unwrap();
        let u = &gen.hidden;
        let mut x = a.tensor().clone();
        x = relu(&layer_norm(&conv2d(&x, &u[0].conv).unwrap(), &u[0].gamma, &u[0].beta, 1e-5).unwrap());
        x = relu(&layer_norm(&conv2d(&x, &u[1].conv).unwrap(), &u[1].gamma, &u[1].beta, 1e-5).unwrap());
        x = relu(&layer_norm(&conv2d(&x, &u[2].conv).unwrap(), &u[2].gamma, &u[2].beta, 1e-5).unwrap());
        let want = conv2d(&x, &gen.output).unwrap();
        let got = generate_weights(&a, &gen).unwrap();
        assert_eq!(got.tensor().dims(), &[c * 9, h, w]);
        assert!(got.tensor().max_abs_diff(&want).unwrap() < 1e-12);
    }
}

fn layer(seed: u64) -> TvConvLayer {
    let mut rng = rng_for(seed, "layer");
    let gen = generator(&mut rng, 3, 4, 3, 2, 3);
    TvConvLayer::new(AffinityMaps::new(random(&mut rng, &[3, 6, 5])).unwrap(), gen).unwrap()
}

#[test]
fn frozen_inference_is_bit_identical_to_eager() {
    let mut rng = rng_for(6, "cache");
    let frozen = layer(6).frozen().unwrap();
    for _ in 0..100 {
        let x = random(&mut rng, &[4, 6, 5]);
        assert_eq!(frozen.infer_cached(&x).unwrap(), frozen.infer_eager(&x).unwrap());
    }
}

#[test]
fn mutation_after_freeze_is_detected() {
    let mut l = layer(7).frozen().unwrap();
    let x = Tensor::filled(&[4, 6, 5], 0.5).unwrap();
    assert!(l.infer_cached(&x).is_ok());
    l.affinity_mut().values_mut()[3] += 1e-9;
    assert!(matches!(l.infer_cached(&x), Err(Error::StaleCache { .. })));

    let mut l = layer(7).frozen().unwrap();
    l.generator_mut().output.data_mut()[0] *= -1.0;
    assert!(matches!(l.infer_cached(&x), Err(Error::StaleCache { .. })));
}

#[test]
fn mode_contract() {
    let mut l = layer(8);
    let x = Tensor::filled(&[4, 6, 5], 0.5).unwrap();
    assert!(matches!(l.infer_cached(&x), Err(Error::Mode { .. })));
    l.freeze().unwrap();
    assert!(matches!(l.freeze(), Err(Error::Mode { .. })));
    l.unfreeze();
    assert!(l.infer_cached(&x).is_err());
    assert!(l.infer_eager(&x).is_ok());
}
