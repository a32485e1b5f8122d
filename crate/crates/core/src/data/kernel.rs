use advlab_tensor::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian { sigma: f64 },
    Box,
    /// Line segment through the center; `angle` in degrees.
    LinearMotion { angle: f64, length: f64 },
}

/// Normalized, odd-sized 2-D blur kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlurKernel {
    #[serde(flatten)]
    pub kind: KernelKind,
    pub size: usize,
    /// `size × size`, row-major.
    pub weights: Vec<f64>,
}

fn check_size(size: usize) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(invalid("blur kernel", format!("size must be odd, got {size}")));
    }
    Ok(())
}

fn normalized(kind: KernelKind, size: usize, mut w: Vec<f64>) -> Result<BlurKernel> {
    let s: f64 = w.iter().sum();
    if !(s > 0.0) {
        return Err(invalid("blur kernel", "weights sum to zero"));
    }
    w.iter_mut().for_each(|v| *v /= s);
    Ok(BlurKernel { kind, size, weights: w })
}

impl BlurKernel {
    pub fn gaussian(size: usize, sigma: f64) -> Result<Self> {
        check_size(size)?;
        if !(sigma > 0.0) {
            return Err(invalid("blur kernel", format!("sigma must be positive, got {sigma}")));
        }
        let r = (size / 2) as f64;
        let w = (0..size * size)
            .map(|i| {
                let (dy, dx) = ((i / size) as f64 - r, (i % size) as f64 - r);
                (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            })
            .collect();
        normalized(KernelKind::Gaussian { sigma }, size, w)
    }

    pub fn box_kernel(size: usize) -> Result<Self> {
        check_size(size)?;
        normalized(KernelKind::Box, size, vec![1.0; size * size])
    }

    /// The 1×1 box, i.e. the identity.
    pub fn identity() -> Self {
        Self::box_kernel(1).expect("valid size")
    }

    /// Bilinear rasterization of a centered segment of `length` pixels.
    pub fn linear_motion(size: usize, angle: f64, length: f64) -> Result<Self> {
        check_size(size)?;
        if !(length >= 0.0) || length > size as f64 {
            return Err(invalid(
                "blur kernel",
                format!("motion length {length} must lie in [0, {size}]"),
            ));
        }
        let r = (size / 2) as f64;
        let (sin, cos) = angle.to_radians().sin_cos();
        let samples = (length * 8.0).ceil().max(1.0) as usize;
        let mut w = vec![0.0; size * size];
        for s in 0..=samples {
            let t = if samples == 0 { 0.0 } else { s as f64 / samples as f64 - 0.5 } * length;
            let (x, y) = (r + t * cos, r - t * sin);
            let (x0, y0) = (x.floor(), y.floor());
            let (fx, fy) = (x - x0, y - y0);
            for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                    let (xi, yi) = (x0 + dx, y0 + dy);
                    if xi >= 0.0 && yi >= 0.0 && (xi as usize) < size && (yi as usize) < size {
                        w[yi as usize * size + xi as usize] += wx * wy;
                    }
                }
            }
        }
        normalized(KernelKind::LinearMotion { angle, length }, size, w)
    }

    pub fn validate(&self) -> Result<()> {
        check_size(self.size)?;
        if self.weights.len() != self.size * self.size {
            return Err(invalid(
                "blur kernel",
                format!("{} weights for size {}", self.weights.len(), self.size),
            ));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("blur kernel", "negative or non-finite weight"));
        }
        let s: f64 = self.weights.iter().sum();
        if (s - 1.0).abs() > 1e-9 {
            return Err(invalid("blur kernel", format!("weights sum to {s}, not 1")));
        }
        Ok(())
    }
}

/// Index into `0..n` under symmetric reflection without edge repetition.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Channelwise 2-D convolution of a C×H×W image with reflect padding.
/// The result is clamped to `[0, 1]` to absorb rounding.
pub fn apply_blur(x: &Tensor<f64>, kernel: &BlurKernel) -> Result<Tensor<f64>> {
    kernel.validate()?;
    let [c, h, w] = *x.shape() else {
        return Err(invalid("blur input", format!("expected C×H×W, got {:?}", x.shape())));
    };
    let k = kernel.size;
    let r = (k / 2) as isize;
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for ci in 0..c {
        let plane = &src[ci * h * w..(ci + 1) * h * w];
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for a in 0..k {
                    let yi = reflect(i as isize - (a as isize - r), h);
                    let row = &plane[yi * w..(yi + 1) * w];
                    for b in 0..k {
                        let xj = reflect(j as isize - (b as isize - r), w);
                        acc += kernel.weights[a * k + b] * row[xj];
                    }
                }
                out[ci * h * w + i * w + j] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Ok(Tensor::new(x.shape().to_vec(), out)?)
}
