//! Weight-initialization families.
//!
//! Three families are supported:
//!
//! - i.i.d. entries with variance `1/d` (scaled uniform, scaled Gaussian,
//!   Rademacher),
//! - smooth paths: each entry is an independent zero-mean Gaussian process in
//!   the layer-fraction `t ∈ [0, 1]` with squared-exponential covariance,
//! - fractional Gaussian noise: each entry is a sequence of normalized
//!   increments of an independent fractional Brownian motion.
//!
//! Correlated families are sampled exactly by a lower-triangular factor of the
//! covariance, cached per shape and shared read-only between threads.

mod factor;
mod lanes;
mod tape;

use serde::{Deserialize, Serialize};

use crate::rng::{LaneStream, Stream};
use crate::{Error, Result};

pub use factor::{symmetric_factor, JITTER_SCALE};
pub use tape::{
    build_weight_tape, weight_source, ConstantWeights, IidLayers, LayerParams, LayerSource,
    PathLayers, SmoothPath, SmoothWeights, WeightSource, WeightTape,
};

use factor::{cached_factor, correlate, FactorKey};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distribution {
    /// Uniform on `[-√(3/d), √(3/d)]`.
    UniformScaled,
    /// `N(0, 1/d)`.
    GaussianScaled,
    /// `±1/√d` with equal probability.
    Rademacher,
}

/// An i.i.d. entry law bound to a width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistributionSpec {
    kind: Distribution,
    width: usize,
    scale: f64,
}

impl DistributionSpec {
    pub fn new(kind: Distribution, width: usize) -> Result<Self> {
        if width == 0 {
            return Err(Error::invalid("width", "must be at least 1"));
        }
        let d = width as f64;
        let scale = match kind {
            Distribution::UniformScaled => (3.0 / d).sqrt(),
            Distribution::GaussianScaled | Distribution::Rademacher => 1.0 / d.sqrt(),
        };
        Ok(Self { kind, width, scale })
    }

    pub fn kind(&self) -> Distribution {
        self.kind
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Exactly `1/d` for every kind.
    pub fn variance(&self) -> f64 {
        1.0 / self.width as f64
    }

    /// Largest attainable `|entry|`, if bounded.
    pub fn bound(&self) -> Option<f64> {
        match self.kind {
            Distribution::UniformScaled | Distribution::Rademacher => Some(self.scale),
            Distribution::GaussianScaled => None,
        }
    }

    /// Sub-Gaussian constant `s` of `√d · entry`.
    ///
    /// All three laws are 1-sub-Gaussian after rescaling to unit variance
    /// (`sinh(λ√3)/(λ√3) ≤ e^{λ²/2}`, `cosh λ ≤ e^{λ²/2}`).
    pub fn sub_gaussian_constant(&self) -> f64 {
        1.0
    }

    #[inline]
    pub fn sample(&self, stream: &mut Stream) -> f64 {
        match self.kind {
            Distribution::UniformScaled => (2.0 * stream.uniform() - 1.0) * self.scale,
            Distribution::GaussianScaled => stream.gaussian() * self.scale,
            Distribution::Rademacher => stream.sign() * self.scale,
        }
    }

    pub fn fill(&self, stream: &mut Stream, out: &mut [f64]) {
        for x in out {
            *x = self.sample(stream);
        }
    }

    /// Bulk fill; entry `e` comes from lane `e % LANES`.
    pub fn fill_lanes(&self, lanes: &mut LaneStream, out: &mut [f64]) {
        lanes::fill(self, lanes, out)
    }
}

/// A `d × d` matrix of i.i.d. entries, drawn column by column.
pub fn sample_iid_matrix(dist: &DistributionSpec, stream: &mut Stream) -> nalgebra::DMatrix<f64> {
    let d = dist.width();
    let mut m = nalgebra::DMatrix::zeros(d, d);
    dist.fill(stream, m.as_mut_slice());
    m
}

/// Squared-exponential Gaussian process on the layer fraction.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GpSpec {
    pub lengthscale: f64,
    pub variance: f64,
    /// Number of intervals of the grid on which smooth weight paths are
    /// sampled; paths are linearly interpolated in between.
    #[serde(default = "GpSpec::default_knots")]
    pub knots: usize,
}

impl Default for GpSpec {
    fn default() -> Self {
        Self {
            lengthscale: 0.1,
            variance: 1e-2,
            knots: Self::default_knots(),
        }
    }
}

impl GpSpec {
    fn default_knots() -> usize {
        256
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::invalid("lengthscale", "must be positive"));
        }
        if !(self.variance >= 0.0 && self.variance.is_finite()) {
            return Err(Error::invalid("variance", "must be non-negative"));
        }
        if self.knots == 0 {
            return Err(Error::invalid("knots", "must be at least 1"));
        }
        Ok(())
    }

    pub fn kernel(&self, s: f64, t: f64) -> f64 {
        let r = s - t;
        self.variance * (-r * r / (2.0 * self.lengthscale * self.lengthscale)).exp()
    }

    /// Covariance on the grid `{k · step : 0 ≤ k < n}`.
    pub fn covariance(&self, n: usize, step: f64) -> nalgebra::DMatrix<f64> {
        nalgebra::DMatrix::from_fn(n, n, |i, j| self.kernel(i as f64 * step, j as f64 * step))
    }

    pub(crate) fn factor(&self, n: usize, step: f64) -> Result<std::sync::Arc<nalgebra::DMatrix<f64>>> {
        self.validate()?;
        let key = FactorKey::Gp {
            n,
            step: step.to_bits(),
            lengthscale: self.lengthscale.to_bits(),
            variance: self.variance.to_bits(),
        };
        cached_factor(key, || symmetric_factor(&self.covariance(n, step)))
    }
}

/// One GP path at the points `k/len`, `k = 0..len`.
pub fn sample_gp_path(len: usize, spec: &GpSpec, stream: &mut Stream) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::invalid("depth", "must be at least 1"));
    }
    let factor = spec.factor(len, 1.0 / len as f64)?;
    let z = stream.gaussian_vec(len);
    Ok(correlate(&factor, &z))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FbmNormalization {
    /// Increments rescaled by `L^H` to unit variance (then `1/√d` in tapes),
    /// so `H = 1/2` coincides with i.i.d. `N(0, 1/d)` weights.
    #[default]
    UnitVariance,
    /// Raw increments `B^H_{(k+1)/L} − B^H_{k/L}`, variance `L^{−2H}`.
    Raw,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FbmSpec {
    pub hurst: f64,
    #[serde(default)]
    pub normalization: FbmNormalization,
}

impl FbmSpec {
    pub fn new(hurst: f64) -> Self {
        Self {
            hurst,
            normalization: FbmNormalization::UnitVariance,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return Err(Error::invalid("hurst", format!("{} is outside (0, 1)", self.hurst)));
        }
        Ok(())
    }

    /// Multiplier applied to unit-variance fGn for a sequence of length `len`.
    pub fn scale(&self, len: usize) -> f64 {
        match self.normalization {
            FbmNormalization::UnitVariance => 1.0,
            FbmNormalization::Raw => (len as f64).powf(-self.hurst),
        }
    }

    pub(crate) fn factor(&self, len: usize) -> Result<std::sync::Arc<nalgebra::DMatrix<f64>>> {
        self.validate()?;
        let key = FactorKey::Fgn {
            n: len,
            hurst: self.hurst.to_bits(),
        };
        let hurst = self.hurst;
        cached_factor(key, || {
            let cov = nalgebra::DMatrix::from_fn(len, len, |i, j| {
                fgn_autocovariance(hurst, i.abs_diff(j))
            });
            symmetric_factor(&cov)
        })
    }
}

/// Autocovariance of unit-variance fractional Gaussian noise at lag `k`:
/// `½(|k+1|^{2H} + |k−1|^{2H} − 2|k|^{2H})`.
pub fn fgn_autocovariance(hurst: f64, lag: usize) -> f64 {
    let k = lag as f64;
    let e = 2.0 * hurst;
    0.5 * ((k + 1.0).powf(e) + (k - 1.0).abs().powf(e) - 2.0 * k.powf(e))
}

/// One fGn sequence of length `len`.
pub fn sample_fgn(len: usize, spec: &FbmSpec, stream: &mut Stream) -> Result<Vec<f64>> {
    if len == 0 {
        return Err(Error::invalid("depth", "must be at least 1"));
    }
    let factor = spec.factor(len)?;
    let z = stream.gaussian_vec(len);
    let scale = spec.scale(len);
    let mut out = correlate(&factor, &z);
    if scale != 1.0 {
        out.iter_mut().for_each(|x| *x *= scale);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitScheme {
    Iid { distribution: Distribution },
    SmoothGp(GpSpec),
    Fbm(FbmSpec),
}

impl InitScheme {
    pub fn iid(distribution: Distribution) -> Self {
        InitScheme::Iid { distribution }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            InitScheme::Iid { .. } => Ok(()),
            InitScheme::SmoothGp(gp) => gp.validate(),
            InitScheme::Fbm(fbm) => fbm.validate(),
        }
    }
}
