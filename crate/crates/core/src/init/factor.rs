//! Covariance factorization, the process-wide factor cache, and the
//! lower-triangular correlation kernel shared by the GP and fGn samplers.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::rng::Stream;
use crate::{Error, Result};

/// Relative size of the one-shot diagonal jitter, in units of `trace / n`.
pub const JITTER_SCALE: f64 = 1e-12;

/// Entries correlated together by [`correlated_entries`]; also the inner loop width.
const BLOCK: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub(crate) enum FactorKey {
    Gp {
        n: usize,
        step: u64,
        lengthscale: u64,
        variance: u64,
    },
    Fgn {
        n: usize,
        hurst: u64,
    },
}

type FactorCache = Mutex<HashMap<FactorKey, Arc<DMatrix<f64>>>>;

fn cache() -> &'static FactorCache {
    static CACHE: OnceLock<FactorCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Returns the cached factor for `key`, building it on first use.
///
/// The lock is not held while factorizing; two racing builders compute the
/// same deterministic matrix and the first insert wins.
pub(crate) fn cached_factor(
    key: FactorKey,
    build: impl FnOnce() -> Result<DMatrix<f64>>,
) -> Result<Arc<DMatrix<f64>>> {
    if let Some(f) = cache().lock().expect("factor cache poisoned").get(&key) {
        return Ok(Arc::clone(f));
    }
    let built = Arc::new(build()?);
    let mut guard = cache().lock().expect("factor cache poisoned");
    Ok(Arc::clone(guard.entry(key).or_insert(built)))
}

/// Lower-triangular `F` with `F Fᵀ = cov`.
///
/// Cholesky first; on failure the diagonal is bumped once by
/// `JITTER_SCALE · trace / n` and Cholesky retried. An all-zero covariance
/// yields the zero factor.
pub fn symmetric_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = cov.nrows();
    if cov.ncols() != n {
        return Err(Error::ShapeMismatch {
            context: "covariance",
            expected: n,
            actual: cov.ncols(),
        });
    }
    if cov.iter().all(|&c| c == 0.0) {
        return Ok(DMatrix::zeros(n, n));
    }
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.unpack());
    }
    let jitter = JITTER_SCALE * cov.trace() / n as f64;
    let mut bumped = cov.clone();
    for i in 0..n {
        bumped[(i, i)] += jitter;
    }
    bumped
        .cholesky()
        .map(|c| c.unpack())
        .ok_or(Error::Factorization { size: n })
}

/// `out[r·width + e] += Σ_{j ≤ r} factor[r, j] · z[j·width + e]`.
///
/// `z` and `out` hold `width` independent columns stored row-major. The sum
/// over `j` runs in ascending order for every column, so the result for a
/// column does not depend on which block it was processed in.
pub(crate) fn correlate_block(factor: &DMatrix<f64>, z: &[f64], width: usize, out: &mut [f64]) {
    let n = factor.nrows();
    debug_assert_eq!(z.len(), n * width);
    debug_assert_eq!(out.len(), n * width);
    let data = factor.as_slice();
    for j in 0..n {
        let zj = &z[j * width..(j + 1) * width];
        let col = &data[j * n..(j + 1) * n];
        for r in j..n {
            let l = col[r];
            if l == 0.0 {
                continue;
            }
            let row = &mut out[r * width..(r + 1) * width];
            for (o, &zv) in row.iter_mut().zip(zj) {
                *o += l * zv;
            }
        }
    }
}

/// Correlates one Gaussian vector: `factor · z`.
pub(crate) fn correlate(factor: &DMatrix<f64>, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; z.len()];
    correlate_block(factor, z, 1, &mut out);
    out
}

/// Draws `entries` independent correlated sequences of length `factor.nrows()`.
///
/// Sequence `e` is `factor · z_e` where `z_e` comes from the stream derived
/// from `(seed, [kind, e])`. The result is time-major: `out[t·entries + e]`.
pub(crate) fn correlated_entries(
    factor: &DMatrix<f64>,
    entries: usize,
    seed: u64,
    kind: u64,
) -> Vec<f64> {
    let n = factor.nrows();
    let mut out = vec![0.0; n * entries];
    let mut z = vec![0.0; n * BLOCK];
    let mut block_out = vec![0.0; n * BLOCK];
    for start in (0..entries).step_by(BLOCK) {
        let width = BLOCK.min(entries - start);
        let z = &mut z[..n * width];
        for e in 0..width {
            let mut stream = Stream::derived(seed, &[kind, (start + e) as u64]);
            for t in 0..n {
                z[t * width + e] = stream.gaussian();
            }
        }
        let block_out = &mut block_out[..n * width];
        block_out.fill(0.0);
        correlate_block(factor, z, width, block_out);
        for t in 0..n {
            out[t * entries + start..t * entries + start + width]
                .copy_from_slice(&block_out[t * width..(t + 1) * width]);
        }
    }
    out
}
