//! Dense kernels on column-major storage.
//!
//! Written as plain multiply-add loops in a fixed order (no fused
//! multiply-add, no runtime-dispatched BLAS) so results are bit-reproducible.

use nalgebra::{DMatrix, DVector};

/// `out = m · x`, accumulating columns left to right.
pub fn matvec(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.ncols(), x.len());
    debug_assert_eq!(m.nrows(), out.len());
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { matvec_avx512(m.as_slice(), x, out) };
        }
        if is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { matvec_avx2(m.as_slice(), x, out) };
        }
    }
    matvec_body(m.as_slice(), x, out)
}

// Each output entry sees the same additions in the same order on every path,
// so the wider kernels are bit-identical to the baseline one.
#[inline(always)]
fn matvec_body(m: &[f64], x: &[f64], out: &mut [f64]) {
    out.fill(0.0);
    for (col, &xj) in m.chunks_exact(out.len()).zip(x) {
        for (o, &mij) in out.iter_mut().zip(col) {
            *o += mij * xj;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn matvec_avx2(m: &[f64], x: &[f64], out: &mut [f64]) {
    matvec_body(m, x, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn matvec_avx512(m: &[f64], x: &[f64], out: &mut [f64]) {
    matvec_body(m, x, out)
}

/// `out = mᵀ · x`.
#[inline]
pub fn matvec_t(m: &DMatrix<f64>, x: &[f64], out: &mut [f64]) {
    let rows = m.nrows();
    debug_assert_eq!(rows, x.len());
    debug_assert_eq!(m.ncols(), out.len());
    for (o, col) in out.iter_mut().zip(m.as_slice().chunks_exact(rows)) {
        *o = dot(col, x);
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

pub fn mul(m: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    matvec(m, x.as_slice(), out.as_mut_slice());
    out
}

pub fn mul_t(m: &DMatrix<f64>, x: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.ncols());
    matvec_t(m, x.as_slice(), out.as_mut_slice());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_matches_triple_loop() {
        let m = DMatrix::from_fn(3, 4, |i, j| (i as f64 + 1.0) * 0.5 - j as f64);
        let x = [1.0, -2.0, 0.25, 3.0];
        let mut out = [0.0; 3];
        matvec(&m, &x, &mut out);
        for i in 0..3 {
            let expected: f64 = (0..4).map(|j| m[(i, j)] * x[j]).sum();
            assert!((out[i] - expected).abs() < 1e-14);
        }
        let y = [0.5, 1.0, -1.0];
        let mut out_t = [0.0; 4];
        matvec_t(&m, &y, &mut out_t);
        for j in 0..4 {
            let expected: f64 = (0..3).map(|i| m[(i, j)] * y[i]).sum();
            assert!((out_t[j] - expected).abs() < 1e-14);
        }
    }
}
