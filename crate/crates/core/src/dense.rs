//! Allocation-free kernels for the small row-major matrices that appear inside
//! the Runge–Kutta stages. Matrices are plain slices; shapes are passed explicitly.

use crate::scalar::Scalar;

/// `out (r×c) += alpha · a (r×k) · b (k×c)`.
#[inline]
pub fn gemm_acc<T: Scalar>(
    out: &mut [T],
    a: &[T],
    b: &[T],
    r: usize,
    k: usize,
    c: usize,
    alpha: T,
) {
    for i in 0..r {
        for l in 0..k {
            let ail = alpha * a[i * k + l];
            if ail == T::zero() {
                continue;
            }
            let brow = &b[l * c..l * c + c];
            let orow = &mut out[i * c..i * c + c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    }
}

/// `out (r×c) += alpha · aᵀ · b` where `a` is stored as (k×r) and `b` as (k×c).
#[inline]
pub fn gemm_tn_acc<T: Scalar>(
    out: &mut [T],
    a: &[T],
    b: &[T],
    r: usize,
    k: usize,
    c: usize,
    alpha: T,
) {
    for l in 0..k {
        for i in 0..r {
            let ali = alpha * a[l * r + i];
            if ali == T::zero() {
                continue;
            }
            let brow = &b[l * c..l * c + c];
            let orow = &mut out[i * c..i * c + c];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += ali * bv;
            }
        }
    }
}

/// `out (r×c) = a (r×k) · b (k×c)`.
#[inline]
pub fn gemm<T: Scalar>(out: &mut [T], a: &[T], b: &[T], r: usize, k: usize, c: usize) {
    out[..r * c].iter_mut().for_each(|x| *x = T::zero());
    gemm_acc(out, a, b, r, k, c, T::one());
}

#[inline]
pub fn axpy<T: Scalar>(y: &mut [T], alpha: T, x: &[T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = x + alpha · y`.
#[inline]
pub fn add_scaled<T: Scalar>(out: &mut [T], x: &[T], alpha: T, y: &[T]) {
    for ((o, &xi), &yi) in out.iter_mut().zip(x).zip(y) {
        *o = xi + alpha * yi;
    }
}

#[inline]
pub fn scale<T: Scalar>(x: &mut [T], alpha: T) {
    x.iter_mut().for_each(|v| *v *= alpha);
}

/// Replaces a square row-major matrix by its symmetric part.
pub fn symmetrize<T: Scalar>(a: &mut [T], n: usize) {
    let half = T::lit(0.5);
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (a[i * n + j] + a[j * n + i]) * half;
            a[i * n + j] = s;
            a[j * n + i] = s;
        }
    }
}

pub fn max_abs<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
}

pub fn max_abs_diff<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

pub fn frobenius<T: Scalar>(a: &[T]) -> T {
    a.iter().fold(T::zero(), |s, &v| s + v * v).sqrt()
}

pub fn all_finite<T: Scalar>(a: &[T]) -> bool {
    a.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_hand_product() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, 0.0, 1.0, 1.0, 1.0]; // 3x2
        let mut out = [0.0; 4];
        gemm(&mut out, &a, &b, 2, 3, 2);
        assert_eq!(out, [4.0, 5.0, 10.0, 11.0]);
    }

    #[test]
    fn transposed_product() {
        // a is 3x2, aᵀ·b with b 3x1
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0, 1.0, 1.0];
        let mut out = [0.0; 2];
        gemm_tn_acc(&mut out, &a, &b, 2, 3, 1, 1.0);
        assert_eq!(out, [9.0, 12.0]);
    }

    #[test]
    fn symmetrize_is_idempotent() {
        let mut a = [1.0, 2.0, 4.0, 3.0];
        symmetrize(&mut a, 2);
        let once = a;
        symmetrize(&mut a, 2);
        assert_eq!(a, once);
        assert_eq!(a, [1.0, 3.0, 3.0, 3.0]);
    }
}
