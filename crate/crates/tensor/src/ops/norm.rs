//! Channel layer normalization and L2 normalization.

use crate::real::Real;

/// Cached statistics from the layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalizes each spatial location over the channel axis of an
/// N×C×(H·W) buffer, then applies the per-channel affine map.
pub fn layer_norm_forward<T: Real>(
    x: &[T],
    (n, c, hw): (usize, usize, usize),
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, LayerNormCache<T>) {
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = vec![T::zero(); n * hw];
    let inv_c = T::one() / T::lit(c as f64);
    let mut mean = vec![T::zero(); hw];
    let mut var = vec![T::zero(); hw];
    for ni in 0..n {
        let base = ni * c * hw;
        mean.fill(T::zero());
        var.fill(T::zero());
        for ci in 0..c {
            let xs = &x[base + ci * hw..][..hw];
            for (m, &v) in mean.iter_mut().zip(xs) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m *= inv_c);
        for ci in 0..c {
            let xs = &x[base + ci * hw..][..hw];
            for ((s, &m), &v) in var.iter_mut().zip(&mean).zip(xs) {
                let d = v - m;
                *s += d * d;
            }
        }
        let inv = &mut inv_std[ni * hw..][..hw];
        for (i, s) in inv.iter_mut().zip(&var) {
            *i = T::one() / (*s * inv_c + eps).sqrt();
        }
        for ci in 0..c {
            let off = base + ci * hw;
            let (g, b) = (gamma[ci], beta[ci]);
            for p in 0..hw {
                let h = (x[off + p] - mean[p]) * inv[p];
                xhat[off + p] = h;
                y[off + p] = g * h + b;
            }
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns (grad_x, grad_gamma, grad_beta).
pub fn layer_norm_backward<T: Real>(
    gy: &[T],
    cache: &LayerNormCache<T>,
    (n, c, hw): (usize, usize, usize),
    gamma: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let mut gx = vec![T::zero(); gy.len()];
    let mut gg = vec![T::zero(); c];
    let mut gb = vec![T::zero(); c];
    let inv_c = T::one() / T::lit(c as f64);
    let mut m1 = vec![T::zero(); hw];
    let mut m2 = vec![T::zero(); hw];
    for ni in 0..n {
        let base = ni * c * hw;
        m1.fill(T::zero());
        m2.fill(T::zero());
        for ci in 0..c {
            let off = base + ci * hw;
            let g = gamma[ci];
            let (mut sg, mut sb) = (T::zero(), T::zero());
            for p in 0..hw {
                let dy = gy[off + p];
                let h = cache.xhat[off + p];
                let dh = dy * g;
                m1[p] += dh;
                m2[p] += dh * h;
                sg += dy * h;
                sb += dy;
            }
            gg[ci] += sg;
            gb[ci] += sb;
        }
        let inv = &cache.inv_std[ni * hw..][..hw];
        for ci in 0..c {
            let off = base + ci * hw;
            let g = gamma[ci];
            for p in 0..hw {
                let dh = gy[off + p] * g;
                let h = cache.xhat[off + p];
                gx[off + p] = inv[p] * (dh - m1[p] * inv_c - h * m2[p] * inv_c);
            }
        }
    }
    (gx, gg, gb)
}

/// Divides each row of a (rows × len) buffer by `max(‖row‖₂, eps)`.
/// Returns the output and the per-row divisor.
pub fn l2_normalize_forward<T: Real>(x: &[T], len: usize, eps: T) -> (Vec<T>, Vec<T>) {
    let rows = x.len() / len.max(1);
    let mut out = vec![T::zero(); x.len()];
    let mut norms = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * len..][..len];
        let nrm = super::kernels::dot(row, row).sqrt().max(eps);
        norms[r] = nrm;
        for (o, &v) in out[r * len..][..len].iter_mut().zip(row) {
            *o = v / nrm;
        }
    }
    (out, norms)
}

pub fn l2_normalize_backward<T: Real>(gy: &[T], y: &[T], norms: &[T], len: usize, eps: T) -> Vec<T> {
    let mut gx = vec![T::zero(); gy.len()];
    for (r, &nrm) in norms.iter().enumerate() {
        let g = &gy[r * len..][..len];
        let yr = &y[r * len..][..len];
        let dst = &mut gx[r * len..][..len];
        if nrm <= eps {
            // clamped branch: y = x / eps
            for (d, &gi) in dst.iter_mut().zip(g) {
                *d = gi / eps;
            }
            continue;
        }
        let proj = super::kernels::dot(g, yr);
        for ((d, &gi), &yi) in dst.iter_mut().zip(g).zip(yr) {
            *d = (gi - yi * proj) / nrm;
        }
    }
    gx
}
