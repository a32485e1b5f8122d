use crate::real::Real;

/// Softmax along the middle axis of an (outer × len × inner) buffer.
pub fn forward<T: Real>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let mut m = T::neg_infinity();
            for k in 0..len {
                m = m.max(x[at(k)]);
            }
            let mut s = T::zero();
            for k in 0..len {
                let e = (x[at(k)] - m).exp();
                y[at(k)] = e;
                s += e;
            }
            let inv = T::one() / s;
            for k in 0..len {
                y[at(k)] *= inv;
            }
        }
    }
    y
}

pub fn backward<T: Real>(gy: &[T], y: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let mut gx = vec![T::zero(); y.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * len * inner + k * inner + i;
            let mut s = T::zero();
            for k in 0..len {
                s += gy[at(k)] * y[at(k)];
            }
            for k in 0..len {
                gx[at(k)] = y[at(k)] * (gy[at(k)] - s);
            }
        }
    }
    gx
}
