use std::collections::HashSet;
use std::time::Instant;

use advlab_core::data::{
    apply_blur, generate_synthetic_scene, load_dataset, load_png, make_dataset, pair_seed, save_dataset, save_png,
    BlurKernel, Dataset, DatasetSpec, KernelFamily, KernelKind, Split,
};
use advlab_core::metrics::{fft2, high_frequency_energy, luminance, total_energy};
use advlab_core::CoreError;
use advlab_tensor::Tensor;
use proptest::prelude::*;

fn hf_fraction(img: &Tensor<f64>) -> f64 {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    let f = fft2(&luminance(img).unwrap(), h, w);
    high_frequency_energy(&f, h, w) / total_energy(&f)
}

fn spec(n_train: usize, n_test: usize) -> DatasetSpec {
    DatasetSpec {
        n_train,
        n_val: 2,
        n_test,
        height: 32,
        width: 32,
        family: KernelFamily::Gaussian,
        seed: 1,
    }
}

#[test]
fn scenes_are_seeded() {
    let a = generate_synthetic_scene(42, 32, 48).unwrap();
    assert_eq!(a, generate_synthetic_scene(42, 32, 48).unwrap());
    assert_ne!(a, generate_synthetic_scene(43, 32, 48).unwrap());
    assert_eq!(a.shape(), &[3, 32, 48]);
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn scenes_below_minimum_size_are_rejected() {
    assert!(generate_synthetic_scene(0, 15, 32).is_err());
    assert!(generate_synthetic_scene(0, 32, 8).is_err());
    assert!(generate_synthetic_scene(0, 16, 16).is_ok());
}

#[test]
fn scene_histograms_cover_half_the_range() {
    const BINS: usize = 16;
    for seed in 0..100 {
        let img = generate_synthetic_scene(seed, 32, 32).unwrap();
        let mut used = [false; BINS];
        for &v in img.data() {
            used[((v * BINS as f64) as usize).min(BINS - 1)] = true;
        }
        let occupied = used.iter().filter(|&&u| u).count();
        assert!(occupied * 2 >= BINS, "seed {seed}: {occupied}/{BINS} bins");
    }
}

#[test]
fn scenes_carry_energy_above_half_nyquist() {
    for seed in 0..100 {
        let img = generate_synthetic_scene(seed, 32, 32).unwrap();
        let frac = hf_fraction(&img);
        assert!(frac >= 0.01, "seed {seed}: {frac}");
    }
}

#[test]
fn identity_kernel_is_a_no_op() {
    let x = generate_synthetic_scene(1, 16, 16).unwrap();
    assert_eq!(apply_blur(&x, &BlurKernel::identity()).unwrap(), x);
}

#[test]
fn constant_images_are_unchanged() {
    let x = Tensor::full(&[3, 16, 20], 0.37);
    for k in [
        BlurKernel::gaussian(7, 1.4).unwrap(),
        BlurKernel::box_kernel(5).unwrap(),
        BlurKernel::linear_motion(7, 30.0, 5.0).unwrap(),
    ] {
        let y = apply_blur(&x, &k).unwrap();
        assert!(y.data().iter().all(|v| (v - 0.37).abs() < 1e-12), "{:?}", k.kind);
    }
}

#[test]
fn box_blur_of_an_impulse_is_a_plateau() {
    let mut x = Tensor::zeros(&[1, 9, 9]);
    x.data_mut()[4 * 9 + 4] = 1.0;
    let y = apply_blur(&x, &BlurKernel::box_kernel(3).unwrap()).unwrap();
    for i in 0..9 {
        for j in 0..9 {
            let want = if (3..=5).contains(&i) && (3..=5).contains(&j) { 1.0 / 9.0 } else { 0.0 };
            assert!((y.data()[i * 9 + j] - want).abs() < 1e-15, "({i},{j})");
        }
    }
}

#[test]
fn reflect_padding_mirrors_without_repeating_the_edge() {
    // Row [1, 0, 0, ...]: reflecting index −1 reads index 1 (0), so the box
    // average at the border sees the edge value once.
    let mut x = Tensor::zeros(&[1, 1, 6]);
    x.data_mut()[0] = 1.0;
    let k = BlurKernel {
        kind: KernelKind::Box,
        size: 3,
        weights: vec![0.0, 0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0, 0.0],
    };
    let y = apply_blur(&x, &k).unwrap();
    assert!((y.data()[0] - 1.0 / 3.0).abs() < 1e-15);
    assert!((y.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    assert_eq!(y.data()[2], 0.0);
}

#[test]
fn invalid_kernels_are_rejected() {
    assert!(BlurKernel::box_kernel(4).is_err());
    assert!(BlurKernel::gaussian(6, 1.0).is_err());
    assert!(BlurKernel::gaussian(5, 0.0).is_err());
    let even = BlurKernel {
        kind: KernelKind::Box,
        size: 4,
        weights: vec![1.0 / 16.0; 16],
    };
    let x = Tensor::zeros(&[3, 16, 16]);
    assert!(apply_blur(&x, &even).is_err());
    let unnormalized = BlurKernel {
        kind: KernelKind::Box,
        size: 3,
        weights: vec![0.2; 9],
    };
    assert!(apply_blur(&x, &unnormalized).is_err());
    let negative = BlurKernel {
        kind: KernelKind::Box,
        size: 1,
        weights: vec![-1.0],
    };
    assert!(negative.validate().is_err());
}

#[test]
fn sampled_kernels_are_normalized() {
    for family in [KernelFamily::Gaussian, KernelFamily::Box, KernelFamily::LinearMotion] {
        let pairs = make_dataset(20, 16, 16, family, 3).unwrap();
        for p in pairs {
            let k = p.blur.unwrap();
            k.validate().unwrap();
            assert!(k.weights.iter().all(|&w| w >= 0.0));
            assert!((k.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            match (family, k.kind) {
                (KernelFamily::Gaussian, KernelKind::Gaussian { sigma }) => assert!((1.0..1.8).contains(&sigma)),
                (KernelFamily::Box, KernelKind::Box) => assert!(k.size == 3 || k.size == 5),
                (KernelFamily::LinearMotion, KernelKind::LinearMotion { angle, length }) => {
                    assert!((0.0..180.0).contains(&angle) && (3.0..7.0).contains(&length))
                }
                (f, kind) => panic!("{f:?} produced {kind:?}"),
            }
        }
    }
}

#[test]
fn blur_lowers_high_frequency_energy() {
    for family in [KernelFamily::Gaussian, KernelFamily::Box] {
        for p in make_dataset(30, 32, 32, family, 5).unwrap() {
            let (h, w) = (32, 32);
            let fx = fft2(&luminance(&p.x).unwrap(), h, w);
            let fy = fft2(&luminance(&p.y_clean).unwrap(), h, w);
            assert!(
                high_frequency_energy(&fy, h, w) < high_frequency_energy(&fx, h, w),
                "{family:?} {}",
                p.id
            );
        }
    }
}

#[test]
fn pairs_are_recomputable() {
    for family in [KernelFamily::Gaussian, KernelFamily::Box, KernelFamily::LinearMotion] {
        for p in make_dataset(5, 16, 24, family, 9).unwrap() {
            assert_eq!(p.recompute().unwrap(), p.y_clean);
        }
    }
}

#[test]
fn datasets_are_deterministic_with_disjoint_splits() {
    let s = spec(20, 10);
    let a = Dataset::generate(&s).unwrap();
    assert_eq!(a, Dataset::generate(&s).unwrap());
    let mut ids = HashSet::new();
    let mut seeds = HashSet::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        for p in a.split(split) {
            assert!(ids.insert(p.id.clone()), "duplicate id {}", p.id);
            assert!(seeds.insert(p.seed), "duplicate scene seed {}", p.seed);
        }
    }
    assert_eq!(ids.len(), 32);
    assert_ne!(pair_seed(1, Split::Train, 5), pair_seed(1, Split::Test, 5));
    assert_ne!(pair_seed(1, Split::Train, 5), pair_seed(2, Split::Train, 5));
    // The training split does not depend on how many test pairs exist.
    assert_eq!(Dataset::generate(&spec(20, 3)).unwrap().train, a.train);
}

#[test]
fn two_hundred_pairs_generate_quickly() {
    let t = Instant::now();
    let pairs = make_dataset(200, 32, 32, KernelFamily::Gaussian, 1).unwrap();
    let secs = t.elapsed().as_secs_f64();
    assert_eq!(pairs.len(), 200);
    assert!(secs < 5.0, "{secs:.2}s");
}

#[test]
fn png_round_trip_is_within_half_a_step() {
    let dir = tempfile::tempdir().unwrap();
    let img = generate_synthetic_scene(7, 16, 24).unwrap();
    let blurred = apply_blur(&img, &BlurKernel::gaussian(7, 1.3).unwrap()).unwrap();
    let path = dir.path().join("nested/dir/img.png");
    save_png(&blurred, &path).unwrap();
    let back: Tensor<f64> = load_png(&path).unwrap();
    assert_eq!(back.shape(), blurred.shape());
    let err = back.data().iter().zip(blurred.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 1.0 / 510.0 + 1e-12, "{err}");
    // Already-quantized data survives exactly.
    save_png(&back, &path).unwrap();
    assert_eq!(load_png::<f64>(&path).unwrap(), back);
}

#[test]
fn png_errors_carry_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.png");
    match load_png::<f64>(&missing) {
        Err(e @ (CoreError::Io { .. } | CoreError::Format { .. })) => assert!(e.to_string().contains("nope.png")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(save_png(&Tensor::<f64>::zeros(&[1, 4, 4]), &dir.path().join("gray.png")).is_err());
}

#[test]
fn saved_datasets_reload() {
    let dir = tempfile::tempdir().unwrap();
    let s = spec(3, 2);
    let data = Dataset::generate(&s).unwrap();
    let manifest = save_dataset(dir.path(), &data, Some(&s)).unwrap();
    assert_eq!(manifest.entries.len(), 7);
    let back = load_dataset(dir.path()).unwrap();
    assert_eq!(back.train.len(), 3);
    assert_eq!(back.val.len(), 2);
    assert_eq!(back.test.len(), 2);
    for (a, b) in back.test.iter().zip(&data.test) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.blur, b.blur);
        assert!(a.x.data().iter().zip(b.x.data()).all(|(p, q)| (p - q).abs() <= 1.0 / 510.0 + 1e-12));
    }

    // Without a manifest, any sharp/blurred directory pair loads.
    std::fs::remove_file(dir.path().join("manifest.json")).unwrap();
    let bare = load_dataset(dir.path()).unwrap();
    assert_eq!(bare.train.len(), 3);
    assert!(bare.train.iter().all(|p| p.blur.is_none()));
    assert!(load_dataset(&dir.path().join("empty")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn blur_is_linear(s1 in 0u64..1000, s2 in 0u64..1000, a in 0.0f64..0.6, b in 0.0f64..0.4, sigma in 0.6f64..2.0) {
        let x1 = generate_synthetic_scene(s1, 16, 16).unwrap();
        let x2 = generate_synthetic_scene(s2, 16, 16).unwrap();
        let k = BlurKernel::gaussian(7, sigma).unwrap();
        let mixed = x1.zip_map(&x2, |p, q| a * p + b * q).unwrap();
        let lhs = apply_blur(&mixed, &k).unwrap();
        let (y1, y2) = (apply_blur(&x1, &k).unwrap(), apply_blur(&x2, &k).unwrap());
        let rhs = y1.zip_map(&y2, |p, q| a * p + b * q).unwrap();
        let err = lhs.data().iter().zip(rhs.data()).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        prop_assert!(err < 1e-7, "{}", err);
    }

    #[test]
    fn blur_output_stays_in_range(seed in 0u64..1000, len in 3.0f64..7.0, angle in 0.0f64..180.0) {
        let x = generate_synthetic_scene(seed, 16, 16).unwrap();
        let k = BlurKernel::linear_motion(7, angle, len).unwrap();
        let y = apply_blur(&x, &k).unwrap();
        prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
