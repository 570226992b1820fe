//! Tail integrals `∫_{s_j}^T f` on a uniform grid.

use crate::scalar::Scalar;

/// `out[j] = ∫_{s_j}^{s_N} f` from samples `f[0..=N]`, fourth-order accurate.
///
/// Pairs of intervals are closed with Simpson's rule from `T` backwards; when an odd
/// interval is left over it takes the three-point rule `h/12 (5 f_j + 8 f_{j+1} − f_{j+2})`,
/// mirrored at the last interval.
pub fn tail_integrals<T: Scalar>(f: &[T], h: T) -> Vec<T> {
    let n = f.len() - 1;
    let mut out = vec![T::zero(); n + 1];
    let third = h / T::lit(3.0);
    let twelfth = h / T::lit(12.0);
    let four = T::lit(4.0);
    // even offsets from N: exact composite Simpson
    let mut j = n;
    while j >= 2 {
        out[j - 2] = out[j] + third * (f[j - 2] + four * f[j - 1] + f[j]);
        j -= 2;
    }
    // odd offsets: one three-point interval on top of the Simpson tail
    let mut j = n as isize - 1;
    while j >= 0 {
        let ju = j as usize;
        let single = if ju + 2 <= n {
            twelfth * (T::lit(5.0) * f[ju] + T::lit(8.0) * f[ju + 1] - f[ju + 2])
        } else if ju >= 1 {
            twelfth * (T::lit(5.0) * f[ju + 1] + T::lit(8.0) * f[ju] - f[ju - 1])
        } else {
            // N = 1
            h * T::lit(0.5) * (f[ju] + f[ju + 1])
        };
        out[ju] = out[ju + 1] + single;
        j -= 2;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact() {
        let n = 7;
        let h = 1.0 / n as f64;
        let f: Vec<f64> = (0..=n).map(|i| (i as f64 * h).powi(2)).collect();
        let tail = tail_integrals(&f, h);
        for (j, v) in tail.iter().enumerate() {
            let s = j as f64 * h;
            let exact = (1.0 - s.powi(3)) / 3.0;
            assert!((v - exact).abs() < 1e-14, "{j}: {v} vs {exact}");
        }
    }

    #[test]
    fn fourth_order_on_exponential() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let f: Vec<f64> = (0..=n).map(|i| (i as f64 * h).exp()).collect();
            let tail = tail_integrals(&f, h);
            (0..=n)
                .map(|j| (tail[j] - (1f64.exp() - (j as f64 * h).exp())).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(33) / err(66);
        assert!(ratio > 12.0, "ratio {ratio}");
    }
}
