use std::f64::consts::PI;

use advlab_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

type Rgb = [f64; 3];

fn color(rng: &mut ChaCha8Rng) -> Rgb {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// A shape paints `alpha(y, x) ∈ [0, 1]` of some color over the canvas.
enum Shape {
    Rect { y0: f64, x0: f64, y1: f64, x1: f64, rot: f64 },
    Disk { cy: f64, cx: f64, r: f64 },
    Edge { cy: f64, cx: f64, nx: f64, ny: f64 },
}

impl Shape {
    fn covers(&self, y: f64, x: f64) -> bool {
        match *self {
            Shape::Rect { y0, x0, y1, x1, rot } => {
                let (cy, cx) = ((y0 + y1) / 2.0, (x0 + x1) / 2.0);
                let (s, c) = rot.sin_cos();
                let (dy, dx) = (y - cy, x - cx);
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                u.abs() <= (x1 - x0) / 2.0 && v.abs() <= (y1 - y0) / 2.0
            }
            Shape::Disk { cy, cx, r } => (y - cy).powi(2) + (x - cx).powi(2) <= r * r,
            Shape::Edge { cy, cx, nx, ny } => (x - cx) * nx + (y - cy) * ny >= 0.0,
        }
    }
}

struct Grating {
    freq: f64,
    theta: f64,
    phase: f64,
    lo: Rgb,
    hi: Rgb,
    region: Shape,
}

/// Deterministic 3×H×W scene of edges, rectangles, disks and sinusoidal
/// gratings in `[0, 1]`.
///
/// Every scene contains a full-contrast grating above a quarter cycle per
/// pixel and pure black and white elements, so it spans the intensity range
/// and carries energy near the Nyquist limit.
pub fn generate_synthetic_scene(seed: u64, height: usize, width: usize) -> Result<Tensor<f64>> {
    if height < 16 || width < 16 {
        return Err(invalid("scene", format!("size {height}×{width} below 16×16")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (hf, wf) = (height as f64, width as f64);
    let mut canvas = vec![[0.0f64; 3]; height * width];

    let (top, bottom) = (color(&mut rng), color(&mut rng));
    for i in 0..height {
        let t = i as f64 / (hf - 1.0);
        for j in 0..width {
            for ch in 0..3 {
                canvas[i * width + j][ch] = top[ch] * (1.0 - t) + bottom[ch] * t;
            }
        }
    }

    let random_shape = |rng: &mut ChaCha8Rng| -> Shape {
        match rng.gen_range(0..3) {
            0 => {
                let (y0, x0) = (rng.gen_range(-0.2..0.7) * hf, rng.gen_range(-0.2..0.7) * wf);
                let (sh, sw) = (rng.gen_range(0.15..0.6) * hf, rng.gen_range(0.15..0.6) * wf);
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + sh,
                    x1: x0 + sw,
                    rot: if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.0..PI) },
                }
            }
            1 => Shape::Disk {
                cy: rng.gen_range(0.0..hf),
                cx: rng.gen_range(0.0..wf),
                r: rng.gen_range(0.08..0.3) * hf.min(wf),
            },
            _ => {
                let th: f64 = rng.gen_range(0.0..2.0 * PI);
                Shape::Edge {
                    cy: rng.gen_range(0.2..0.8) * hf,
                    cx: rng.gen_range(0.2..0.8) * wf,
                    nx: th.cos(),
                    ny: th.sin(),
                }
            }
        }
    };

    let paint = |canvas: &mut Vec<Rgb>, shape: &Shape, rgb: Rgb| {
        for i in 0..height {
            for j in 0..width {
                if shape.covers(i as f64 + 0.5, j as f64 + 0.5) {
                    canvas[i * width + j] = rgb;
                }
            }
        }
    };

    let n_shapes = rng.gen_range(4..8);
    for k in 0..n_shapes {
        let shape = random_shape(&mut rng);
        let rgb = match k {
            0 => [0.0; 3],
            1 => [1.0; 3],
            _ => color(&mut rng),
        };
        paint(&mut canvas, &shape, rgb);
    }

    let n_gratings = rng.gen_range(1..3);
    for k in 0..n_gratings {
        let g = Grating {
            freq: if k == 0 {
                rng.gen_range(0.28..0.45)
            } else {
                rng.gen_range(0.05..0.3)
            },
            theta: rng.gen_range(0.0..PI),
            phase: rng.gen_range(0.0..2.0 * PI),
            lo: if k == 0 { [0.0; 3] } else { color(&mut rng) },
            hi: if k == 0 { [1.0; 3] } else { color(&mut rng) },
            region: {
                let (sh, sw) = (rng.gen_range(0.35..0.6) * hf, rng.gen_range(0.35..0.6) * wf);
                let (y0, x0) = (rng.gen_range(0.0..hf - sh), rng.gen_range(0.0..wf - sw));
                Shape::Rect {
                    y0,
                    x0,
                    y1: y0 + sh,
                    x1: x0 + sw,
                    rot: 0.0,
                }
            },
        };
        let (s, c) = g.theta.sin_cos();
        for i in 0..height {
            for j in 0..width {
                let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
                if !g.region.covers(y, x) {
                    continue;
                }
                let t = 0.5 + 0.5 * (2.0 * PI * g.freq * (x * c + y * s) + g.phase).sin();
                for ch in 0..3 {
                    canvas[i * width + j][ch] = g.lo[ch] * (1.0 - t) + g.hi[ch] * t;
                }
            }
        }
    }

    let hw = height * width;
    let mut data = vec![0.0; 3 * hw];
    for (p, rgb) in canvas.iter().enumerate() {
        for ch in 0..3 {
            data[ch * hw + p] = rgb[ch].clamp(0.0, 1.0);
        }
    }
    Ok(Tensor::new(vec![3, height, width], data)?)
}
