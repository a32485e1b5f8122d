mod common;

use advlab_core::data::{apply_blur, generate_synthetic_scene, BlurKernel};
use advlab_core::metrics::{
    channel_correlations, dft2_direct, evaluate_image, fft2, high_frequency_energy, nyquist_peak, psnr,
    spectral_artifact_scores, ssim, total_energy, ImageMetrics, MetricsReport, Summary, PSNR_CAP, REPORT_HEADER,
};
use advlab_tensor::Tensor;
use common::ssim_oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(seed: u64, shape: &[usize]) -> Tensor<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| r.gen_range(0.0..1.0))
}

fn gray(plane: impl Fn(usize, usize) -> f64, h: usize, w: usize) -> Tensor<f64> {
    Tensor::from_fn(&[3, h, w], |i| plane((i / w) % h, i % w))
}

#[test]
fn psnr_examples() {
    let a = Tensor::<f64>::zeros(&[3, 4, 4]);
    let b = Tensor::full(&[3, 4, 4], 0.1);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    assert!((psnr(&a, &b.map(|v| v * 255.0), 255.0).unwrap() - 20.0).abs() < 1e-9);
    let c = Tensor::full(&[3, 4, 4], 0.01);
    assert!((psnr(&a, &c, 1.0).unwrap() - 40.0).abs() < 1e-9);
    assert_eq!(psnr(&b, &b, 1.0).unwrap(), PSNR_CAP);
    assert_eq!(psnr(&a, &Tensor::full(&[3, 4, 4], 1e-60), 1.0).unwrap(), PSNR_CAP);
    assert!(psnr(&a, &Tensor::zeros(&[3, 4, 5]), 1.0).is_err());
}

#[test]
fn ssim_matches_the_direct_summation_oracle() {
    for seed in 0..20 {
        let a = random_image(seed, &[1, 32, 32]);
        let noise = random_image(seed + 100, &[1, 32, 32]);
        let b = a.zip_map(&noise, |x, n| (0.7 * x + 0.3 * n).clamp(0.0, 1.0)).unwrap();
        let lib = ssim(&a, &b).unwrap();
        let oracle = ssim_oracle(a.data(), b.data(), 32, 32);
        assert!((lib - oracle).abs() < 1e-6, "seed {seed}: {lib} vs {oracle}");
    }
}

#[test]
fn ssim_of_an_image_with_itself_is_one() {
    for seed in 0..5 {
        let a = generate_synthetic_scene(seed, 32, 32).unwrap();
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
    let flat = Tensor::<f64>::full(&[3, 16, 16], 0.5);
    assert!((ssim(&flat, &flat).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn ssim_rejects_tiny_or_mismatched_images() {
    assert!(ssim(&Tensor::<f64>::zeros(&[3, 10, 32]), &Tensor::zeros(&[3, 10, 32])).is_err());
    assert!(ssim(&Tensor::<f64>::zeros(&[3, 16, 16]), &Tensor::zeros(&[3, 16, 17])).is_err());
}

#[test]
fn multichannel_ssim_averages_planes() {
    let a = random_image(1, &[3, 16, 16]);
    let b = random_image(2, &[3, 16, 16]);
    let per_plane: f64 = (0..3)
        .map(|c| ssim(&a.slice0(c, 1).unwrap(), &b.slice0(c, 1).unwrap()).unwrap())
        .sum::<f64>()
        / 3.0;
    assert!((ssim(&a, &b).unwrap() - per_plane).abs() < 1e-14);
}

#[test]
fn fft_matches_direct_dft() {
    for (h, w) in [(8, 8), (6, 10), (7, 5), (32, 32)] {
        let plane = random_image((h * w) as u64, &[h * w]).into_data();
        let fast = fft2(&plane, h, w);
        let slow = dft2_direct(&plane, h, w);
        let err = fast.iter().zip(&slow).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{h}x{w}: {err}");
        // Parseval
        let energy: f64 = plane.iter().map(|v| v * v).sum::<f64>() * (h * w) as f64;
        assert!((total_energy(&fast) - energy).abs() < 1e-8 * energy);
    }
}

#[test]
fn identical_images_score_neutral() {
    let a = generate_synthetic_scene(3, 32, 32).unwrap();
    let s = spectral_artifact_scores(&a, &a).unwrap();
    assert_eq!((s.hf_energy_ratio, s.grid_peak_score, s.color_mixing_score), (1.0, 0.0, 0.0));
}

#[test]
fn checkerboard_has_a_half_amplitude_nyquist_peak() {
    let (h, w) = (8, 8);
    let board = gray(|i, j| ((i + j + 1) % 2) as f64, h, w);
    let plane: Vec<f64> = board.data()[..h * w].to_vec();
    let f = dft2_direct(&plane, h, w);
    assert!((f[(h / 2) * w + w / 2].norm() - 32.0).abs() < 1e-9);
    assert!((nyquist_peak(&f, h, w) - 0.5).abs() < 1e-12);
    let flat = Tensor::full(&[3, h, w], 0.5);
    let s = spectral_artifact_scores(&board, &flat).unwrap();
    assert!((s.grid_peak_score - 0.5).abs() < 1e-12);
    assert!(s.hf_energy_ratio > 1e6);

    let stripes = gray(|_, j| (j % 2) as f64, h, w);
    let s = spectral_artifact_scores(&stripes, &flat).unwrap();
    assert!((s.grid_peak_score - 0.5).abs() < 1e-12);
    // Odd dimensions have no Nyquist bin.
    assert_eq!(nyquist_peak(&dft2_direct(&[1.0; 15], 3, 5), 3, 5), 0.0);
}

#[test]
fn blurred_reconstructions_lose_high_frequencies() {
    for seed in 0..10 {
        let x = generate_synthetic_scene(seed, 32, 32).unwrap();
        let y = apply_blur(&x, &BlurKernel::gaussian(7, 1.5).unwrap()).unwrap();
        let s = spectral_artifact_scores(&y, &x).unwrap();
        assert!(s.hf_energy_ratio < 1.0, "seed {seed}: {}", s.hf_energy_ratio);
    }
}

#[test]
fn scores_are_invariant_to_circular_shifts() {
    let (h, w) = (32, 32);
    let x = generate_synthetic_scene(4, h, w).unwrap();
    let r = random_image(5, &[3, h, w]);
    let roll = |t: &Tensor<f64>| {
        Tensor::from_fn(&[3, h, w], |i| {
            let (c, y, xx) = (i / (h * w), (i / w) % h, i % w);
            t.data()[c * h * w + ((y + 5) % h) * w + (xx + 11) % w]
        })
    };
    let a = spectral_artifact_scores(&r, &x).unwrap();
    let b = spectral_artifact_scores(&roll(&r), &roll(&x)).unwrap();
    assert!((a.hf_energy_ratio - b.hf_energy_ratio).abs() < 1e-9);
    assert!((a.grid_peak_score - b.grid_peak_score).abs() < 1e-12);
    assert!((a.color_mixing_score - b.color_mixing_score).abs() < 1e-12);
}

#[test]
fn decorrelated_channels_raise_color_mixing() {
    let base = generate_synthetic_scene(6, 32, 32).unwrap();
    let lum: Vec<f64> = (0..32 * 32)
        .map(|p| (base.data()[p] + base.data()[1024 + p] + base.data()[2048 + p]) / 3.0)
        .collect();
    let reference = gray(|i, j| lum[i * 32 + j], 32, 32);
    assert_eq!(channel_correlations(&reference).unwrap(), [1.0, 1.0, 1.0]);
    let noisy = random_image(7, &[3, 32, 32]);
    let s = spectral_artifact_scores(&noisy, &reference).unwrap();
    assert!(s.color_mixing_score > 0.3 && s.color_mixing_score <= 1.0, "{}", s.color_mixing_score);
    let inverted = gray(|i, j| 1.0 - lum[i * 32 + j], 32, 32);
    assert!(spectral_artifact_scores(&inverted, &reference).unwrap().color_mixing_score.abs() < 1e-12);
}

#[test]
fn high_frequency_energy_excludes_low_bins() {
    let (h, w) = (16, 16);
    // A single low-frequency cosine has no energy above the cutoff.
    let plane: Vec<f64> = (0..h * w).map(|i| (2.0 * std::f64::consts::PI * (i % w) as f64 / w as f64).cos()).collect();
    let f = fft2(&plane, h, w);
    assert!(high_frequency_energy(&f, h, w) < 1e-18);
    let plane: Vec<f64> = (0..h * w).map(|i| if (i % w) % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let f = fft2(&plane, h, w);
    assert!((high_frequency_energy(&f, h, w) - total_energy(&f)).abs() < 1e-6);
}

#[test]
fn evaluate_image_bundles_every_metric() {
    let x = generate_synthetic_scene(8, 32, 32).unwrap();
    let y = apply_blur(&x, &BlurKernel::box_kernel(3).unwrap()).unwrap();
    let m = evaluate_image("img-0", &y, &x).unwrap();
    assert_eq!(m.id, "img-0");
    assert_eq!(m.psnr, psnr(&y, &x, 1.0).unwrap());
    assert_eq!(m.ssim, ssim(&y, &x).unwrap());
    let s = spectral_artifact_scores(&y, &x).unwrap();
    assert_eq!(m.hf_energy_ratio, s.hf_energy_ratio);
    assert!(evaluate_image("bad", &Tensor::<f64>::zeros(&[1, 32, 32]), &Tensor::zeros(&[1, 32, 32])).is_err());
}

#[test]
fn report_csv_has_rows_and_summaries() {
    let row = |id: &str, p: f64| ImageMetrics {
        id: id.into(),
        psnr: p,
        ssim: 0.5,
        hf_energy_ratio: 1.0,
        grid_peak_score: 0.0,
        color_mixing_score: 0.1,
    };
    let report = MetricsReport {
        config: "model: nafnet".into(),
        rows: vec![row("a", 20.0), row("b", 30.0)],
    };
    let csv = report.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# model: nafnet");
    assert_eq!(lines[1], REPORT_HEADER);
    assert_eq!(lines.len(), 6);
    assert!(lines[4].starts_with("mean,25.000000,0.500000"));
    assert!(lines[5].starts_with("std,5.000000,0.000000"));
    assert_eq!(Summary::of([]), Summary::default());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn psnr_falls_as_noise_grows(seed in 0u64..1000, s in 0.01f64..0.2, k in 1.1f64..4.0) {
        let x = random_image(seed, &[3, 16, 16]);
        let n = random_image(seed + 1, &[3, 16, 16]).map(|v| v - 0.5);
        let a = x.zip_map(&n, |p, q| p + s * q).unwrap();
        let b = x.zip_map(&n, |p, q| p + k * s * q).unwrap();
        prop_assert!(psnr(&b, &x, 1.0).unwrap() < psnr(&a, &x, 1.0).unwrap());
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(s1 in 0u64..1000, s2 in 0u64..1000) {
        let a = random_image(s1, &[3, 16, 16]);
        let b = random_image(s2 + 5000, &[3, 16, 16]);
        let ab = ssim(&a, &b).unwrap();
        prop_assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-14);
        prop_assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn heavier_blur_removes_more_high_frequency_energy(seed in 0u64..500, sigma in 0.6f64..1.2) {
        let x = generate_synthetic_scene(seed, 32, 32).unwrap();
        let light = apply_blur(&x, &BlurKernel::gaussian(7, sigma).unwrap()).unwrap();
        let heavy = apply_blur(&x, &BlurKernel::gaussian(7, sigma + 0.8).unwrap()).unwrap();
        let rl = spectral_artifact_scores(&light, &x).unwrap().hf_energy_ratio;
        let rh = spectral_artifact_scores(&heavy, &x).unwrap().hf_energy_ratio;
        prop_assert!(rh < rl && rl < 1.0);
    }
}
