//! NumPy-style broadcasting over two operands.
//!
//! A [`BroadcastPlan`] drops unit output dims and coalesces adjacent dims
//! that are contiguous for both operands, so the iteration reduces to a few
//! long inner runs whose operand strides are either 0 (broadcast) or 1.

use crate::error::{Result, TensorError};
use crate::ops::kernels;
use crate::real::Real;

#[derive(Clone, Debug)]
pub struct BroadcastPlan {
    pub out_shape: Vec<usize>,
    /// (size, stride_a, stride_b), outermost first; the last entry is the inner run.
    dims: Vec<(usize, usize, usize)>,
}

fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for d in 0..rank {
        let da = if d + a.len() >= rank { a[d + a.len() - rank] } else { 1 };
        let db = if d + b.len() >= rank { b[d + b.len() - rank] } else { 1 };
        out[d] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(TensorError::Broadcast {
                op,
                a: a.to_vec(),
                b: b.to_vec(),
            });
        };
    }
    Ok(out)
}

impl BroadcastPlan {
    pub fn new(op: &'static str, a: &[usize], b: &[usize]) -> Result<Self> {
        let out_shape = broadcast_shape(op, a, b)?;
        let rank = out_shape.len();
        let pad = |s: &[usize]| {
            let mut p = vec![1; rank - s.len()];
            p.extend_from_slice(s);
            p
        };
        let (pa, pb) = (pad(a), pad(b));
        let (sa, sb) = (contiguous_strides(&pa), contiguous_strides(&pb));
        // innermost first while building, then reverse
        let mut dims: Vec<(usize, usize, usize)> = Vec::new();
        for d in (0..rank).rev() {
            let size = out_shape[d];
            if size == 1 {
                continue;
            }
            if let Some(last) = dims.last_mut() {
                let (isize_, ia, ib) = *last;
                if sa[d] == ia * isize_ && sb[d] == ib * isize_ {
                    last.0 = isize_ * size;
                    continue;
                }
            }
            dims.push((size, sa[d], sb[d]));
        }
        if dims.is_empty() {
            dims.push((1, 0, 0));
        }
        dims.reverse();
        Ok(Self { out_shape, dims })
    }

    pub fn out_len(&self) -> usize {
        self.out_shape.iter().product()
    }

    /// Calls `f(out_offset, a_offset, b_offset, len, a_step, b_step)` for each
    /// inner run, where steps are 0 or 1.
    pub fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        let (len, ia, ib) = *self.dims.last().expect("at least one dim");
        let outer = &self.dims[..self.dims.len() - 1];
        let runs: usize = outer.iter().map(|d| d.0).product();
        let mut idx = vec![0usize; outer.len()];
        let (mut oa, mut ob) = (0usize, 0usize);
        for run in 0..runs {
            f(run * len, oa, ob, len, ia, ib);
            for d in (0..outer.len()).rev() {
                idx[d] += 1;
                oa += outer[d].1;
                ob += outer[d].2;
                if idx[d] < outer[d].0 {
                    break;
                }
                oa -= outer[d].1 * outer[d].0;
                ob -= outer[d].2 * outer[d].0;
                idx[d] = 0;
            }
        }
    }
}

/// `out = f(a, b)` with broadcasting.
pub fn apply<T: Real>(plan: &BroadcastPlan, a: &[T], b: &[T], f: impl Fn(T, T) -> T) -> Vec<T> {
    let mut out = vec![T::zero(); plan.out_len()];
    plan.for_each_run(|o, oa, ob, len, sa, sb| {
        let dst = &mut out[o..o + len];
        match (sa, sb) {
            (1, 1) => {
                for ((d, &x), &y) in dst.iter_mut().zip(&a[oa..oa + len]).zip(&b[ob..ob + len]) {
                    *d = f(x, y);
                }
            }
            (1, _) => {
                let y = b[ob];
                for (d, &x) in dst.iter_mut().zip(&a[oa..oa + len]) {
                    *d = f(x, y);
                }
            }
            (_, 1) => {
                let x = a[oa];
                for (d, &y) in dst.iter_mut().zip(&b[ob..ob + len]) {
                    *d = f(x, y);
                }
            }
            _ => dst.fill(f(a[oa], b[ob])),
        }
    });
    out
}

/// Gradient of a broadcast operand: sums `grad * scale` back onto the
/// operand's shape. `which_a` selects operand a (else b). When `factor` is
/// given it is the other operand (same plan roles swapped) multiplied in.
pub fn reduce_grad<T: Real>(
    plan: &BroadcastPlan,
    grad: &[T],
    target_len: usize,
    which_a: bool,
    factor: Option<&[T]>,
    negate: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); target_len];
    plan.for_each_run(|o, oa, ob, len, sa, sb| {
        let (t_off, t_step, f_off, f_step) = if which_a { (oa, sa, ob, sb) } else { (ob, sb, oa, sa) };
        let g = &grad[o..o + len];
        let val = |i: usize| -> T {
            let v = match factor {
                Some(fv) => g[i] * fv[f_off + i * f_step],
                None => g[i],
            };
            if negate {
                -v
            } else {
                v
            }
        };
        if t_step == 1 {
            let dst = &mut out[t_off..t_off + len];
            match (factor, f_step, negate) {
                (None, _, false) => kernels::add_assign(dst, g),
                (Some(fv), 1, false) => {
                    for ((d, &gi), &fi) in dst.iter_mut().zip(g).zip(&fv[f_off..f_off + len]) {
                        *d += gi * fi;
                    }
                }
                _ => {
                    for (i, d) in dst.iter_mut().enumerate() {
                        *d += val(i);
                    }
                }
            }
        } else {
            let s = match (factor, f_step, negate) {
                (None, _, false) => kernels::sum(g),
                (Some(fv), 1, false) => kernels::dot(g, &fv[f_off..f_off + len]),
                _ => (0..len).map(val).fold(T::zero(), |acc, v| acc + v),
            };
            out[t_off] += s;
        }
    });
    out
}

/// Broadcasts `src` (shape `small`) up to `big`.
pub fn expand<T: Real>(src: &[T], small: &[usize], big: &[usize]) -> Result<Vec<T>> {
    let plan = BroadcastPlan::new("expand", big, small)?;
    if plan.out_shape != big {
        return Err(TensorError::Broadcast {
            op: "expand",
            a: small.to_vec(),
            b: big.to_vec(),
        });
    }
    let mut out = vec![T::zero(); plan.out_len()];
    plan.for_each_run(|o, _, ob, len, _, sb| {
        let dst = &mut out[o..o + len];
        if sb == 1 {
            dst.copy_from_slice(&src[ob..ob + len]);
        } else {
            dst.fill(src[ob]);
        }
    });
    Ok(out)
}

/// Sums `src` (shape `big`) down onto the broadcast-compatible shape `small`.
pub fn reduce_to<T: Real>(src: &[T], big: &[usize], small: &[usize]) -> Result<Vec<T>> {
    let plan = BroadcastPlan::new("reduce", big, small)?;
    if plan.out_shape != big {
        return Err(TensorError::Broadcast {
            op: "reduce",
            a: big.to_vec(),
            b: small.to_vec(),
        });
    }
    Ok(reduce_grad(&plan, src, small.iter().product(), false, None, false))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_broadcast_from_the_right() {
        assert_eq!(broadcast_shape("t", &[2, 3, 4], &[3, 1]).unwrap(), vec![2, 3, 4]);
        assert_eq!(broadcast_shape("t", &[1], &[5]).unwrap(), vec![5]);
        assert!(broadcast_shape("t", &[2, 3], &[4]).is_err());
    }

    #[test]
    fn channel_gate_broadcast() {
        // 1x2x1x3 times 1x2x1x1
        let a: Vec<f64> = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = vec![10.0, 100.0];
        let plan = BroadcastPlan::new("mul", &[1, 2, 1, 3], &[1, 2, 1, 1]).unwrap();
        let out = apply(&plan, &a, &b, |x, y| x * y);
        assert_eq!(out, vec![10.0, 20.0, 30.0, 400.0, 500.0, 600.0]);
        let g = vec![1.0; 6];
        let gb = reduce_grad(&plan, &g, 2, false, Some(&a), false);
        assert_eq!(gb, vec![6.0, 15.0]);
    }

    #[test]
    fn expand_then_reduce_multiplies_by_fanout() {
        let src = vec![1.0f64, 2.0, 3.0];
        let big = expand(&src, &[3, 1], &[3, 4]).unwrap();
        assert_eq!(big, vec![1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 3.0, 3.0, 3.0, 3.0]);
        assert_eq!(reduce_to(&big, &[3, 4], &[3, 1]).unwrap(), vec![4.0, 8.0, 12.0]);
        assert_eq!(reduce_to(&big, &[3, 4], &[1, 4]).unwrap(), vec![6.0; 4]);
        assert_eq!(reduce_to(&big, &[3, 4], &[]).unwrap(), vec![24.0]);
    }

    #[test]
    fn middle_axis_broadcast_uses_outer_strides() {
        // a: 2x1x2, b: 1x3x1 -> 2x3x2
        let a = vec![1.0f64, 2.0, 3.0, 4.0];
        let b = vec![10.0, 20.0, 30.0];
        let plan = BroadcastPlan::new("add", &[2, 1, 2], &[1, 3, 1]).unwrap();
        let out = apply(&plan, &a, &b, |x, y| x + y);
        assert_eq!(
            out,
            vec![11.0, 12.0, 21.0, 22.0, 31.0, 32.0, 13.0, 14.0, 23.0, 24.0, 33.0, 34.0]
        );
    }
}
