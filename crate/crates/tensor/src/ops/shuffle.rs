//! Space-to-depth (`down`) and depth-to-space (`up`) rearrangements.
//!
//! Channel `c·r² + i·r + j` of the downsampled tensor holds the pixels at
//! offset `(i, j)` of each r×r cell of input channel `c`.

use std::fmt;

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShuffleDirection {
    Down,
    Up,
}

impl fmt::Display for ShuffleDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShuffleDirection::Down => "down",
            ShuffleDirection::Up => "up",
        })
    }
}

/// `(n, c, h, w)` are the dims of the full-resolution side.
pub fn space_to_depth<T: Real>(x: &[T], (n, c, h, w): (usize, usize, usize, usize), r: usize) -> Vec<T> {
    let (oh, ow) = (h / r, w / r);
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let src = &x[(ni * c + ci) * h * w..][..h * w];
            for i in 0..r {
                for j in 0..r {
                    let oc = ci * r * r + i * r + j;
                    let dst = &mut out[(ni * c * r * r + oc) * oh * ow..][..oh * ow];
                    for y in 0..oh {
                        let row = &src[(y * r + i) * w..][..w];
                        for (xo, d) in dst[y * ow..][..ow].iter_mut().enumerate() {
                            *d = row[xo * r + j];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`space_to_depth`]; `(n, c, h, w)` are the dims of the
/// full-resolution output.
pub fn depth_to_space<T: Real>(x: &[T], (n, c, h, w): (usize, usize, usize, usize), r: usize) -> Vec<T> {
    let (ih, iw) = (h / r, w / r);
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let dst = &mut out[(ni * c + ci) * h * w..][..h * w];
            for i in 0..r {
                for j in 0..r {
                    let ic = ci * r * r + i * r + j;
                    let src = &x[(ni * c * r * r + ic) * ih * iw..][..ih * iw];
                    for y in 0..ih {
                        let row = &mut dst[(y * r + i) * w..][..w];
                        for (xi, &s) in src[y * iw..][..iw].iter().enumerate() {
                            row[xi * r + j] = s;
                        }
                    }
                }
            }
        }
    }
    out
}
