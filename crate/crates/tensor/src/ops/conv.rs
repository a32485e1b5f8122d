//! Direct 2-D cross-correlation with groups.
//!
//! Every kernel tap is applied as a row-wise axpy over the valid output
//! columns, so the inner loops are contiguous for stride 1 and vectorize.

use crate::error::{mismatch, Result, TensorError};
use crate::ops::kernels::{axpy, dot};
use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dOptions {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dOptions {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

impl Conv2dOptions {
    pub fn same(kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
            groups: 1,
        }
    }

    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self {
            stride: 1,
            padding: kernel / 2,
            groups: channels,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub oh: usize,
    pub ow: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: Option<&[usize]>,
        opts: Conv2dOptions,
    ) -> Result<Self> {
        const OP: &str = "conv2d";
        let (n, c_in, h, w) = crate::tensor::dims4(input, OP)?;
        let (c_out, cin_g, kh, kw) = crate::tensor::dims4(weight, OP)?;
        if opts.stride == 0 {
            return Err(TensorError::InvalidArgument {
                op: OP,
                msg: "stride must be positive".into(),
            });
        }
        if opts.groups == 0 || c_in % opts.groups != 0 {
            return Err(TensorError::Divisibility {
                op: OP,
                what: "input channels".into(),
                value: c_in,
                divisor: opts.groups,
            });
        }
        if c_out % opts.groups != 0 {
            return Err(TensorError::Divisibility {
                op: OP,
                what: "output channels".into(),
                value: c_out,
                divisor: opts.groups,
            });
        }
        if cin_g != c_in / opts.groups {
            return Err(mismatch(OP, "weight input channels (dim 1)", c_in / opts.groups, cin_g));
        }
        if let Some(b) = bias {
            if b.len() != 1 || b[0] != c_out {
                return Err(mismatch(OP, "bias length", c_out, b.iter().product()));
            }
        }
        let ph = h + 2 * opts.padding;
        let pw = w + 2 * opts.padding;
        if kh > ph {
            return Err(mismatch(OP, "kernel height vs padded input height", ph, kh));
        }
        if kw > pw {
            return Err(mismatch(OP, "kernel width vs padded input width", pw, kw));
        }
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh: (ph - kh) / opts.stride + 1,
            ow: (pw - kw) / opts.stride + 1,
            stride: opts.stride,
            padding: opts.padding,
            groups: opts.groups,
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.c_out, self.oh, self.ow]
    }

    fn cin_g(&self) -> usize {
        self.c_in / self.groups
    }

    fn cout_g(&self) -> usize {
        self.c_out / self.groups
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    /// Output index range `[lo, hi)` along one axis for which
    /// `o * stride + k - padding` lands inside `[0, size)`.
    fn valid_range(&self, k: usize, size: usize, out: usize) -> (usize, usize) {
        let p = self.padding as isize;
        let s = self.stride as isize;
        let k = k as isize;
        // o*s + k - p >= 0  =>  o >= ceil((p - k) / s)
        let lo = if p - k <= 0 { 0 } else { (p - k + s - 1) / s };
        // o*s + k - p <= size - 1  =>  o <= floor((size - 1 + p - k) / s)
        let top = size as isize - 1 + p - k;
        let hi = if top < 0 { 0 } else { top / s + 1 };
        let hi = hi.min(out as isize);
        (lo as usize, (hi.max(lo)) as usize)
    }
}

/// Visits every valid output row of one kernel tap as a span
/// `f(out_start, in_start, len, in_step)`: `len` consecutive output
/// columns read input columns `in_start, in_start + in_step, ...`.
#[inline]
fn for_each_tap_row(geom: &ConvGeom, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
    let (oy0, oy1) = geom.valid_range(ky, geom.h, geom.oh);
    let (ox0, ox1) = geom.valid_range(kx, geom.w, geom.ow);
    if ox0 >= ox1 {
        return;
    }
    for oy in oy0..oy1 {
        let iy = oy * geom.stride + ky - geom.padding;
        let ix0 = ox0 * geom.stride + kx - geom.padding;
        f(oy * geom.ow + ox0, iy * geom.w + ix0, ox1 - ox0, geom.stride);
    }
}

pub fn forward<T: Real>(geom: &ConvGeom, input: &[T], weight: &[T], bias: Option<&[T]>) -> Vec<T> {
    let g = geom;
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let ksize = g.kh * g.kw;
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let mut out = vec![T::zero(); g.n * g.c_out * out_plane];
    for ni in 0..g.n {
        for oc in 0..g.c_out {
            let grp = oc / cout_g;
            let o = &mut out[(ni * g.c_out + oc) * out_plane..][..out_plane];
            if let Some(b) = bias {
                o.fill(b[oc]);
            }
            for icg in 0..cin_g {
                let ic = grp * cin_g + icg;
                let x = &input[(ni * g.c_in + ic) * in_plane..][..in_plane];
                let wk = &weight[(oc * cin_g + icg) * ksize..][..ksize];
                if g.is_pointwise() {
                    axpy(o, wk[0], x);
                    continue;
                }
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wk[ky * g.kw + kx];
                        for_each_tap_row(
                            g,
                            ky,
                            kx,
                            |os, is, len, step| {
                                if step == 1 {
                                    axpy(&mut o[os..os + len], wv, &x[is..is + len]);
                                } else {
                                    for j in 0..len {
                                        o[os + j] += wv * x[is + j * step];
                                    }
                                }
                            },
                        );
                    }
                }
            }
        }
    }
    out
}

pub fn backward_input<T: Real>(geom: &ConvGeom, grad_out: &[T], weight: &[T]) -> Vec<T> {
    let g = geom;
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let ksize = g.kh * g.kw;
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let mut gin = vec![T::zero(); g.n * g.c_in * in_plane];
    for ni in 0..g.n {
        for oc in 0..g.c_out {
            let grp = oc / cout_g;
            let go = &grad_out[(ni * g.c_out + oc) * out_plane..][..out_plane];
            for icg in 0..cin_g {
                let ic = grp * cin_g + icg;
                let gi = &mut gin[(ni * g.c_in + ic) * in_plane..][..in_plane];
                let wk = &weight[(oc * cin_g + icg) * ksize..][..ksize];
                if g.is_pointwise() {
                    axpy(gi, wk[0], go);
                    continue;
                }
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wk[ky * g.kw + kx];
                        for_each_tap_row(
                            g,
                            ky,
                            kx,
                            |os, is, len, step| {
                                if step == 1 {
                                    axpy(&mut gi[is..is + len], wv, &go[os..os + len]);
                                } else {
                                    for j in 0..len {
                                        gi[is + j * step] += wv * go[os + j];
                                    }
                                }
                            },
                        );
                    }
                }
            }
        }
    }
    gin
}

pub fn backward_weight<T: Real>(geom: &ConvGeom, grad_out: &[T], input: &[T]) -> Vec<T> {
    let g = geom;
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let ksize = g.kh * g.kw;
    let (cin_g, cout_g) = (g.cin_g(), g.cout_g());
    let mut gw = vec![T::zero(); g.c_out * cin_g * ksize];
    for ni in 0..g.n {
        for oc in 0..g.c_out {
            let grp = oc / cout_g;
            let go = &grad_out[(ni * g.c_out + oc) * out_plane..][..out_plane];
            for icg in 0..cin_g {
                let ic = grp * cin_g + icg;
                let x = &input[(ni * g.c_in + ic) * in_plane..][..in_plane];
                let gk = &mut gw[(oc * cin_g + icg) * ksize..][..ksize];
                if g.is_pointwise() {
                    gk[0] += dot(go, x);
                    continue;
                }
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let mut acc = T::zero();
                        for_each_tap_row(
                            g,
                            ky,
                            kx,
                            |os, is, len, step| {
                                if step == 1 {
                                    acc += dot(&go[os..os + len], &x[is..is + len]);
                                } else {
                                    for j in 0..len {
                                        acc += go[os + j] * x[is + j * step];
                                    }
                                }
                            },
                        );
                        gk[ky * g.kw + kx] += acc;
                    }
                }
            }
        }
    }
    gw
}

pub fn backward_bias<T: Real>(geom: &ConvGeom, grad_out: &[T]) -> Vec<T> {
    let out_plane = geom.oh * geom.ow;
    let mut gb = vec![T::zero(); geom.c_out];
    for ni in 0..geom.n {
        for (oc, b) in gb.iter_mut().enumerate() {
            let go = &grad_out[(ni * geom.c_out + oc) * out_plane..][..out_plane];
            *b += crate::ops::kernels::sum(go);
        }
    }
    gb
}
