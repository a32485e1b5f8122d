use advlab_tensor::{Real, Tensor};

use crate::error::{invalid, Result};

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(invalid(what, format!("shapes {:?} and {:?} differ", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn mse<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossless() - y.to_f64_lossless();
            d * d
        })
        .sum();
    Ok(s / a.len().max(1) as f64)
}

/// `10·log10(max_val² / MSE)` over all elements, capped at [`PSNR_CAP`].
pub fn psnr<T: Real>(a: &Tensor<T>, b: &Tensor<T>, max_val: f64) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (max_val * max_val / m).log10()).min(PSNR_CAP))
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as f64;
    let w: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an h×w plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..k).map(|t| taps[t] * plane[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..k).map(|t| taps[t] * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, taps: &[f64]) -> f64 {
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, taps);
    let mu_b = filter_valid(b, h, w, taps);
    let e_aa = filter_valid(&aa, h, w, taps);
    let e_bb = filter_valid(&bb, h, w, taps);
    let e_ab = filter_valid(&ab, h, w, taps);
    let n = mu_a.len();
    let mut total = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / n as f64
}

/// Mean local SSIM (Gaussian window 11, σ 1.5, dynamic range 1) over the
/// valid region of every H×W plane, averaged over planes.
pub fn ssim<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape(a, b, "ssim")?;
    let s = a.shape();
    if s.len() < 2 {
        return Err(invalid("ssim", format!("need at least 2 dims, got {s:?}")));
    }
    let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(invalid(
            "ssim",
            format!("image {h}×{w} smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let af = a.to_f64_vec();
    let bf = b.to_f64_vec();
    let planes = af.len() / (h * w);
    let total: f64 = (0..planes)
        .map(|p| {
            let r = p * h * w..(p + 1) * h * w;
            ssim_plane(&af[r.clone()], &bf[r], h, w, &taps)
        })
        .sum();
    Ok(total / planes as f64)
}
