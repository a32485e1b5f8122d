//! Image quality metrics and spectral artifact scores.

mod quality;
mod spectral;

use std::fmt::Write as _;

use advlab_tensor::{Real, Tensor};
use serde::{Deserialize, Serialize};

pub use quality::{gaussian_window, mse, psnr, ssim, PSNR_CAP, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use spectral::{
    channel_correlations, dft2_direct, fft2, high_frequency_energy, luminance, nyquist_peak, spectral_artifact_scores,
    total_energy, SpectralScores, HF_CUTOFF, LUMA,
};

use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub hf_energy_ratio: f64,
    pub grid_peak_score: f64,
    pub color_mixing_score: f64,
}

/// All metrics of one 3×H×W restoration against its reference.
pub fn evaluate_image<T: Real>(id: &str, restored: &Tensor<T>, reference: &Tensor<T>) -> Result<ImageMetrics> {
    let s = spectral_artifact_scores(restored, reference)?;
    Ok(ImageMetrics {
        id: id.to_string(),
        psnr: psnr(restored, reference, 1.0)?,
        ssim: ssim(restored, reference)?,
        hf_energy_ratio: s.hf_energy_ratio,
        grid_peak_score: s.grid_peak_score,
        color_mixing_score: s.color_mixing_score,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return Self::default();
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self { mean, std: var.sqrt() }
    }
}

pub const REPORT_HEADER: &str = "id,psnr,ssim,hf_energy_ratio,grid_peak_score,color_mixing_score";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Free-form description of what produced the rows.
    pub config: String,
    pub rows: Vec<ImageMetrics>,
}

impl MetricsReport {
    pub fn summary(&self, f: impl Fn(&ImageMetrics) -> f64) -> Summary {
        Summary::of(self.rows.iter().map(f))
    }

    pub fn psnr(&self) -> Summary {
        self.summary(|r| r.psnr)
    }

    pub fn ssim(&self) -> Summary {
        self.summary(|r| r.ssim)
    }

    pub fn hf_energy_ratio(&self) -> Summary {
        self.summary(|r| r.hf_energy_ratio)
    }

    pub fn grid_peak_score(&self) -> Summary {
        self.summary(|r| r.grid_peak_score)
    }

    pub fn color_mixing_score(&self) -> Summary {
        self.summary(|r| r.color_mixing_score)
    }

    /// One row per image under [`REPORT_HEADER`], then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if !self.config.is_empty() {
            for line in self.config.lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        out.push_str(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.id, r.psnr, r.ssim, r.hf_energy_ratio, r.grid_peak_score, r.color_mixing_score
            );
        }
        let stats = [
            self.psnr(),
            self.ssim(),
            self.hf_energy_ratio(),
            self.grid_peak_score(),
            self.color_mixing_score(),
        ];
        for (label, pick) in [("mean", 0usize), ("std", 1)] {
            out.push_str(label);
            for s in &stats {
                let v = if pick == 0 { s.mean } else { s.std };
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }
}
