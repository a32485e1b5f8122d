//! Single-matrix products used by the batched matmul operator.

use super::kernels::{axpy, dot};
use crate::real::Real;

/// `c += a·b` with a: m×k, b: k×n.
pub fn gemm_nn<T: Real>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    for i in 0..m {
        let crow = &mut c[i * n..][..n];
        for p in 0..k {
            axpy(crow, a[i * k + p], &b[p * n..][..n]);
        }
    }
}

/// `c += a·btᵀ` with a: m×k, bt: n×k.
pub fn gemm_nt<T: Real>(m: usize, k: usize, n: usize, a: &[T], bt: &[T], c: &mut [T]) {
    for i in 0..m {
        let arow = &a[i * k..][..k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &bt[j * k..][..k]);
        }
    }
}

/// `c += atᵀ·b` with at: k×m, b: k×n.
pub fn gemm_tn<T: Real>(m: usize, k: usize, n: usize, at: &[T], b: &[T], c: &mut [T]) {
    for p in 0..k {
        let brow = &b[p * n..][..n];
        for i in 0..m {
            axpy(&mut c[i * n..][..n], at[p * m + i], brow);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_layouts_agree() {
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [7.0f64, 8.0, 9.0, 10.0, 11.0, 12.0]; // 3x2
        let mut c = [0.0; 4];
        gemm_nn(2, 3, 2, &a, &b, &mut c);
        assert_eq!(c, [58.0, 64.0, 139.0, 154.0]);
        let bt = [7.0, 9.0, 11.0, 8.0, 10.0, 12.0];
        let mut c2 = [0.0; 4];
        gemm_nt(2, 3, 2, &a, &bt, &mut c2);
        assert_eq!(c2, c);
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0];
        let mut c3 = [0.0; 4];
        gemm_tn(2, 3, 2, &at, &b, &mut c3);
        assert_eq!(c3, c);
    }
}
