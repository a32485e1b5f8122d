use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cell::CellKey;
use crate::error::{invalid, io_err, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub hf_energy_ratio: f64,
    pub grid_peak_score: f64,
    pub color_mixing_score: f64,
    pub n_images: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub key: CellKey,
    /// Means over the test split, or the failure message.
    pub outcome: std::result::Result<CellMetrics, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

pub const TABLE_COLUMNS: [&str; 11] = [
    "architecture",
    "defense",
    "attack",
    "epsilon",
    "iterations",
    "psnr",
    "ssim",
    "hf_energy_ratio",
    "grid_peak_score",
    "color_mixing_score",
    "n_images",
];

/// Placeholder for every numeric column of a failed cell.
pub const FAILED: &str = "ERR";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultRow {
    /// Rendered cells in [`TABLE_COLUMNS`] order. PSNR has 2 decimals, SSIM
    /// and the spectral scores 4.
    pub fn cells(&self) -> Vec<String> {
        let k = &self.key;
        let (attack, eps, iters) = match &k.attack {
            None => ("clean".to_string(), "0".to_string(), "0".to_string()),
            Some(a) => (a.kind.clone(), a.epsilon.to_string(), a.iterations.to_string()),
        };
        let mut out = vec![k.variant.clone(), k.defense.to_string(), attack, eps, iters];
        match &self.outcome {
            Ok(m) => out.extend([
                format!("{:.2}", m.psnr),
                format!("{:.4}", m.ssim),
                format!("{:.4}", m.hf_energy_ratio),
                format!("{:.4}", m.grid_peak_score),
                format!("{:.4}", m.color_mixing_score),
                m.n_images.to_string(),
            ]),
            Err(_) => out.extend(std::iter::repeat_n(FAILED.to_string(), 6)),
        }
        out
    }
}

impl ResultTable {
    pub fn get(&self, key: &CellKey) -> Option<&ResultRow> {
        self.rows.iter().find(|r| &r.key == key)
    }

    pub fn metrics(&self, key: &CellKey) -> Option<&CellMetrics> {
        self.get(key).and_then(|r| r.outcome.as_ref().ok())
    }

    pub fn failed(&self) -> usize {
        self.rows.iter().filter(|r| r.outcome.is_err()).count()
    }

    pub fn render(&self, format: TableFormat) -> String {
        let mut out = String::new();
        match format {
            TableFormat::Csv => {
                out.push_str(&TABLE_COLUMNS.join(","));
                out.push('\n');
                for r in &self.rows {
                    out.push_str(&r.cells().join(","));
                    out.push('\n');
                }
            }
            TableFormat::Markdown => {
                let _ = writeln!(out, "| {} |", TABLE_COLUMNS.join(" | "));
                let _ = writeln!(out, "|{}", "---|".repeat(TABLE_COLUMNS.len()));
                for r in &self.rows {
                    let _ = writeln!(out, "| {} |", r.cells().join(" | "));
                }
            }
        }
        out
    }

    pub fn emit(&self, format: TableFormat, path: &Path) -> Result<()> {
        if self.rows.is_empty() {
            return Err(invalid("result table", "no rows to write"));
        }
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        fs::write(path, self.render(format)).map_err(io_err(path))
    }
}
