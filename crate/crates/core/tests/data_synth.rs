use proptest::prelude::*;
use rand_distr::{Distribution, Normal};
use tvconv::data::{
    apply_affine, gen_layout_dataset, random_translation, variance_stats, write_dataset, AffineTransform,
    LayoutDatasetSpec,
};
use tvconv::seed::rng_for;
use tvconv::Tensor;

#[test]
fn default_dataset_has_layout_statistics() {
    let ds = gen_layout_dataset(&LayoutDatasetSpec::default()).unwrap();
    let s = variance_stats(&ds.train.images).unwrap();
    println!("intra {:.4} cross {:.4} ratio {:.2}", s.intra_image_var, s.cross_image_var, s.ratio());
    assert!(s.ratio() > 3.0);
    // numpy on the written images.tvt: 0.112724 / 0.020170
    assert!((s.ratio() - 5.588599).abs() < 1e-5);
}

#[test]
fn iid_noise_null_is_near_one() {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rng = rng_for(11, "null");
    let images: Vec<Tensor> = (0..200)
        .map(|_| Tensor::from_fn(&[1, 32, 32], |_| normal.sample(&mut rng)).unwrap())
        .collect();
    let r = variance_stats(&images).unwrap().ratio();
    assert!((r - 1.0).abs() < 0.2, "ratio {r}");
}

#[test]
fn same_seed_gives_identical_bytes() {
    let spec = LayoutDatasetSpec { train: 30, test: 10, ..LayoutDatasetSpec::default() };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_dataset(&gen_layout_dataset(&spec).unwrap(), a.path()).unwrap();
    write_dataset(&gen_layout_dataset(&spec).unwrap(), b.path()).unwrap();
    for f in ["meta.txt", "images.tvt", "labels.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let other = gen_layout_dataset(&LayoutDatasetSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(other.train.images, gen_layout_dataset(&LayoutDatasetSpec { seed: 0, ..other.spec.clone() }).unwrap().train.images);
}

#[test]
fn too_many_classes_is_an_error() {
    let spec = LayoutDatasetSpec { classes: 17, ..LayoutDatasetSpec::default() };
    assert!(gen_layout_dataset(&spec).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn labels_are_balanced(classes in 1usize..9, train in 1usize..60, test in 1usize..60, seed in 0u64..1000) {
        let spec = LayoutDatasetSpec { classes, train, test, seed, ..LayoutDatasetSpec::default() };
        let ds = gen_layout_dataset(&spec).unwrap();
        for split in [&ds.train, &ds.test] {
            let counts = split.class_counts(classes);
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn translation_composes_and_zero_fills(dy in -6i32..=6, dx in -6i32..=6, ey in -6i32..=6, ex in -6i32..=6) {
        let img = Tensor::from_fn(&[2, 8, 8], |i| 1.0 + (i % 13) as f64).unwrap();
        let t = |dy: i32, dx: i32| AffineTransform::Translate { dy: dy as f64, dx: dx as f64 };
        let one = apply_affine(&img, t(dy, dx)).unwrap();
        let total: f64 = one.data().iter().sum();
        prop_assert!(total <= img.data().iter().sum::<f64>());
        let zeros = one.data().iter().filter(|&&v| v == 0.0).count();
        let kept = (8 - dy.unsigned_abs() as usize) * (8 - dx.unsigned_abs() as usize);
        prop_assert_eq!(zeros, 2 * (64 - kept));
        if dy.signum() * ey.signum() >= 0 && dx.signum() * ex.signum() >= 0 && (dy + ey).abs() <= 8 && (dx + ex).abs() <= 8 {
            let two = apply_affine(&one, t(ey, ex)).unwrap();
            prop_assert_eq!(two, apply_affine(&img, t(dy + ey, dx + ex)).unwrap());
        }
    }

    #[test]
    fn resampling_is_deterministic(seed in 0u64..10_000, frac in 0.0f64..0.5) {
        let img = Tensor::from_fn(&[1, 12, 12], |i| i as f64).unwrap();
        let a = random_translation(&img, frac, &mut rng_for(seed, "aug")).unwrap();
        let b = random_translation(&img, frac, &mut rng_for(seed, "aug")).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn rotation_by_quarter_turns_is_exact(n in 0usize..5, h in 2usize..9) {
        let img = Tensor::from_fn(&[1, h, h], |i| (i as f64).sqrt()).unwrap();
        let out = apply_affine(&img, AffineTransform::Rotate { degrees: 90.0 * n as f64 }).unwrap();
        let mut want = img.clone();
        for _ in 0..n % 4 {
            let prev = want.clone();
            want = Tensor::from_fn(&[1, h, h], |i| prev.get(&[0, i % h, h - 1 - i / h]).unwrap()).unwrap();
        }
        prop_assert!(out.max_abs_diff(&want).unwrap() < 1e-6);
    }
}

