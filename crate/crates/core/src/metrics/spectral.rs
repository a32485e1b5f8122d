use std::f64::consts::PI;

use advlab_tensor::{Real, Tensor};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Rec.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// Radial frequency (cycles per pixel) above which energy counts as high.
pub const HF_CUTOFF: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralScores {
    pub hf_energy_ratio: f64,
    pub grid_peak_score: f64,
    pub color_mixing_score: f64,
}

fn rgb_dims<T: Real>(img: &Tensor<T>) -> Result<(usize, usize)> {
    match *img.shape() {
        [3, h, w] => Ok((h, w)),
        _ => Err(invalid("spectral", format!("expected 3×H×W, got {:?}", img.shape()))),
    }
}

/// Luminance plane of a 3×H×W image.
pub fn luminance<T: Real>(img: &Tensor<T>) -> Result<Vec<f64>> {
    let (h, w) = rgb_dims(img)?;
    let hw = h * w;
    let d = img.data();
    Ok((0..hw)
        .map(|p| (0..3).map(|c| LUMA[c] * d[c * hw + p].to_f64_lossless()).sum())
        .collect())
}

/// 2-D DFT of a real h×w plane, row-major, unnormalized.
pub fn fft2(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut planner = FftPlanner::new();
    let row = planner.plan_fft_forward(w);
    let col = planner.plan_fft_forward(h);
    let mut buf: Vec<Complex64> = plane.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    for r in buf.chunks_exact_mut(w) {
        row.process(r);
    }
    let mut column = vec![Complex64::new(0.0, 0.0); h];
    for j in 0..w {
        for i in 0..h {
            column[i] = buf[i * w + j];
        }
        col.process(&mut column);
        for i in 0..h {
            buf[i * w + j] = column[i];
        }
    }
    buf
}

/// Direct O((hw)²) evaluation of the same transform as [`fft2`].
pub fn dft2_direct(plane: &[f64], h: usize, w: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); h * w];
    for u in 0..h {
        for v in 0..w {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..h {
                for j in 0..w {
                    let phase = -2.0 * PI * ((u * i) as f64 / h as f64 + (v * j) as f64 / w as f64);
                    acc += Complex64::from_polar(plane[i * w + j], phase);
                }
            }
            out[u * w + v] = acc;
        }
    }
    out
}

/// Signed frequency of bin `k` of an `n`-point transform, in cycles/pixel.
fn freq(k: usize, n: usize) -> f64 {
    let k = if k >= n.div_ceil(2) { k as f64 - n as f64 } else { k as f64 };
    k / n as f64
}

/// Sum of `|F|²` over bins with radial frequency above [`HF_CUTOFF`].
pub fn high_frequency_energy(spectrum: &[Complex64], h: usize, w: usize) -> f64 {
    let mut e = 0.0;
    for u in 0..h {
        let fu = freq(u, h);
        for v in 0..w {
            let fv = freq(v, w);
            if (fu * fu + fv * fv).sqrt() > HF_CUTOFF {
                e += spectrum[u * w + v].norm_sqr();
            }
        }
    }
    e
}

pub fn total_energy(spectrum: &[Complex64]) -> f64 {
    spectrum.iter().map(|c| c.norm_sqr()).sum()
}

/// Largest `|F| / (hw)` on the Nyquist row and column; zero along an odd
/// dimension, which has no Nyquist bin.
pub fn nyquist_peak(spectrum: &[Complex64], h: usize, w: usize) -> f64 {
    let norm = (h * w) as f64;
    let mut peak: f64 = 0.0;
    if h.is_multiple_of(2) {
        let u = h / 2;
        for v in 0..w {
            peak = peak.max(spectrum[u * w + v].norm() / norm);
        }
    }
    if w.is_multiple_of(2) {
        let v = w / 2;
        for u in 0..h {
            peak = peak.max(spectrum[u * w + v].norm() / norm);
        }
    }
    peak
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let d = (saa * sbb).sqrt();
    if d > 0.0 {
        (sab / d).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}

/// Pearson correlations of the (R,G), (R,B) and (G,B) channel pairs; a
/// constant channel counts as uncorrelated.
pub fn channel_correlations<T: Real>(img: &Tensor<T>) -> Result<[f64; 3]> {
    let (h, w) = rgb_dims(img)?;
    let hw = h * w;
    let d = img.to_f64_vec();
    let ch = |c: usize| &d[c * hw..(c + 1) * hw];
    Ok([pearson(ch(0), ch(1)), pearson(ch(0), ch(2)), pearson(ch(1), ch(2))])
}

/// Scores of `restored` relative to `reference` (both 3×H×W):
///
/// * `hf_energy_ratio`: luminance energy above [`HF_CUTOFF`], restored over reference.
/// * `grid_peak_score`: [`nyquist_peak`] of restored minus that of reference.
/// * `color_mixing_score`: `1 − mean_k min(1+ρᵣ, 1+ρ₀)/max(1+ρᵣ, 1+ρ₀)` over channel pairs.
pub fn spectral_artifact_scores<T: Real>(restored: &Tensor<T>, reference: &Tensor<T>) -> Result<SpectralScores> {
    if restored.shape() != reference.shape() {
        return Err(invalid(
            "spectral",
            format!("shapes {:?} and {:?} differ", restored.shape(), reference.shape()),
        ));
    }
    let (h, w) = rgb_dims(restored)?;
    let fr = fft2(&luminance(restored)?, h, w);
    let f0 = fft2(&luminance(reference)?, h, w);

    let tiny = 1e-12 * (h * w) as f64;
    let hf_energy_ratio = (high_frequency_energy(&fr, h, w) + tiny) / (high_frequency_energy(&f0, h, w) + tiny);
    let grid_peak_score = nyquist_peak(&fr, h, w) - nyquist_peak(&f0, h, w);

    let (cr, c0) = (channel_correlations(restored)?, channel_correlations(reference)?);
    let agreement: f64 = cr
        .iter()
        .zip(&c0)
        .map(|(&a, &b)| {
            let (a, b) = (1.0 + a, 1.0 + b);
            if a.max(b) > 0.0 {
                a.min(b) / a.max(b)
            } else {
                1.0
            }
        })
        .sum::<f64>()
        / 3.0;
    Ok(SpectralScores {
        hf_energy_ratio,
        grid_peak_score,
        color_mixing_score: 1.0 - agreement,
    })
}
