//! Bulk i.i.d. fills from a [`LaneStream`].
//!
//! Entry `e` of the output comes from lane `e % LANES`, so each lane fills a
//! strided slice in order. Per lane, Gaussian entries follow `Stream::gaussian`
//! and Rademacher entries follow `Stream::sign`. Uniform entries are built
//! from the top 52 bits of a draw by exponent masking, which vectorizes.

use super::{Distribution, DistributionSpec};
use crate::rng::{box_muller, LaneStream, LANES};

/// `[-1, 1)` from the top 52 bits of `x`.
#[inline(always)]
fn symmetric_unit(x: u64) -> f64 {
    f64::from_bits((x >> 12) | 0x4000_0000_0000_0000) - 3.0
}

#[inline(always)]
fn sign_of(x: u64, scale: f64) -> f64 {
    f64::from_bits(((x >> 63) << 63) ^ scale.to_bits())
}

/// Fills `out` in chunks of `BLOCKS · LANES` entries, each written by `write`
/// from one block per lane; the last chunk may be short.
#[inline(always)]
fn for_chunks<const BLOCKS: usize>(
    lanes: &mut LaneStream,
    out: &mut [f64],
    mut write: impl FnMut(&[[u64; LANES]; BLOCKS], &mut [f64]),
) {
    let step = BLOCKS * LANES;
    let mut chunks = out.chunks_exact_mut(step);
    for chunk in &mut chunks {
        let draws: [[u64; LANES]; BLOCKS] = std::array::from_fn(|_| lanes.next_block());
        write(&draws, chunk);
    }
    let rest = chunks.into_remainder();
    if !rest.is_empty() {
        let mut buf = [0.0; LANES * 2];
        let draws: [[u64; LANES]; BLOCKS] = std::array::from_fn(|_| lanes.next_block());
        write(&draws, &mut buf[..step]);
        rest.copy_from_slice(&buf[..rest.len()]);
    }
}

#[inline(always)]
fn fill_body(dist: &DistributionSpec, lanes: &mut LaneStream, out: &mut [f64]) {
    let scale = dist.scale;
    match dist.kind {
        Distribution::UniformScaled => for_chunks::<1>(lanes, out, |[r], buf| {
            for (b, &x) in buf.iter_mut().zip(r) {
                *b = symmetric_unit(x) * scale;
            }
        }),
        Distribution::Rademacher => for_chunks::<1>(lanes, out, |[r], buf| {
            for (b, &x) in buf.iter_mut().zip(r) {
                *b = sign_of(x, scale);
            }
        }),
        Distribution::GaussianScaled => for_chunks::<2>(lanes, out, |[a, b], buf| {
            for i in 0..LANES {
                let (z0, z1) = box_muller(a[i], b[i]);
                buf[i] = z0 * scale;
                buf[LANES + i] = z1 * scale;
            }
        }),
    }
}

fn fill_generic(dist: &DistributionSpec, lanes: &mut LaneStream, out: &mut [f64]) {
    fill_body(dist, lanes, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn fill_avx2(dist: &DistributionSpec, lanes: &mut LaneStream, out: &mut [f64]) {
    fill_body(dist, lanes, out)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn fill_avx512(dist: &DistributionSpec, lanes: &mut LaneStream, out: &mut [f64]) {
    fill_body(dist, lanes, out)
}

/// Same numbers on every code path; only integer ops and exact float
/// operations differ in width.
pub(super) fn fill(dist: &DistributionSpec, lanes: &mut LaneStream, out: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { fill_avx512(dist, lanes, out) };
        }
        if is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            return unsafe { fill_avx2(dist, lanes, out) };
        }
    }
    fill_generic(dist, lanes, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn specs() -> Vec<DistributionSpec> {
        [Distribution::UniformScaled, Distribution::GaussianScaled, Distribution::Rademacher]
            .into_iter()
            .map(|k| DistributionSpec::new(k, 7).unwrap())
            .collect()
    }

    #[test]
    fn dispatch_matches_generic() {
        for dist in specs() {
            for len in [0, 1, 15, 16, 17, 49, 100, 1000] {
                let mut a = vec![0.0; len];
                let mut b = vec![0.0; len];
                fill(&dist, &mut LaneStream::derived(3, &[len as u64]), &mut a);
                fill_generic(&dist, &mut LaneStream::derived(3, &[len as u64]), &mut b);
                assert_eq!(a, b, "{:?} len {len}", dist.kind);
            }
        }
    }

    #[test]
    fn lanes_follow_scalar_streams() {
        let len = 5 * LANES + 3;
        for dist in specs() {
            let mut out = vec![0.0; len];
            fill(&dist, &mut LaneStream::derived(11, &[2]), &mut out);
            for lane in 0..LANES {
                let mut s = Stream::derived(11, &[2, lane as u64]);
                for e in (lane..len).step_by(LANES) {
                    let want = match dist.kind {
                        Distribution::UniformScaled => symmetric_unit(s.next_u64()) * dist.scale,
                        Distribution::GaussianScaled => s.gaussian() * dist.scale,
                        Distribution::Rademacher => s.sign() * dist.scale,
                    };
                    assert_eq!(out[e], want, "{:?} entry {e}", dist.kind);
                }
            }
        }
    }

    #[test]
    fn uniform_range_and_symmetry() {
        assert_eq!(symmetric_unit(0), -1.0);
        assert_eq!(symmetric_unit(u64::MAX), 1.0 - 2.0 * f64::EPSILON);
        assert_eq!(symmetric_unit(1 << 63), 0.0);
        assert_eq!(sign_of(0, 0.5), 0.5);
        assert_eq!(sign_of(1 << 63, 0.5), -0.5);
    }
}
