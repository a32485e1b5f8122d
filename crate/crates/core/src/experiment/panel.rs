use std::path::Path;

use advlab_tensor::{Real, Tensor};

use crate::data::save_png;
use crate::error::{invalid, Result};

/// Column order of a reconstruction panel.
pub const PANEL_COLUMNS: [&str; 4] = ["ground_truth", "degraded", "restored_clean", "restored_attacked"];

/// Tiles `rows` (each four 3×H×W images) into a 3×(k·H)×(4·W) image.
pub fn panel_image<T: Real>(rows: &[[&Tensor<T>; 4]]) -> Result<Tensor<T>> {
    let first = rows.first().ok_or_else(|| invalid("panel", "no samples"))?[0];
    let [3, h, w] = *first.shape() else {
        return Err(invalid("panel", format!("tiles must be 3×H×W, got {:?}", first.shape())));
    };
    let (ph, pw) = (rows.len() * h, 4 * w);
    let mut out = Tensor::zeros(&[3, ph, pw]);
    let d = out.data_mut();
    for (r, row) in rows.iter().enumerate() {
        for (c, tile) in row.iter().enumerate() {
            if tile.shape() != first.shape() {
                return Err(invalid("panel", format!("tile shape {:?} differs from {:?}", tile.shape(), first.shape())));
            }
            let t = tile.data();
            for ch in 0..3 {
                for i in 0..h {
                    let dst = ch * ph * pw + (r * h + i) * pw + c * w;
                    let src = ch * h * w + i * w;
                    d[dst..dst + w].copy_from_slice(&t[src..src + w]);
                }
            }
        }
    }
    Ok(out)
}

/// Writes a panel of ground truth, degraded input, clean restoration and
/// attacked restoration for each sample.
pub fn save_reconstruction_panel<T: Real>(rows: &[[&Tensor<T>; 4]], path: &Path) -> Result<()> {
    save_png(&panel_image(rows)?, path)
}
