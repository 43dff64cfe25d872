//! Realized per-layer weights and the sources that produce them.

use nalgebra::DMatrix;

use super::factor::correlated_entries;
use super::{DistributionSpec, FbmSpec, GpSpec, InitScheme};
use crate::model::ModelSpec;
use crate::rng::LaneStream;
use crate::{Error, Result};

pub(crate) const STREAM_V: u64 = 0;
pub(crate) const STREAM_W: u64 = 1;

/// Weights of one residual block, `V_k` and (for res-2/res-3) `W_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub v: DMatrix<f64>,
    pub w: Option<DMatrix<f64>>,
}

impl LayerParams {
    pub fn zeros(width: usize, with_w: bool) -> Self {
        Self {
            v: DMatrix::zeros(width, width),
            w: with_w.then(|| DMatrix::zeros(width, width)),
        }
    }
}

/// Anything that can hand out the weights of layer `k ∈ 1..=depth`.
pub trait LayerSource: Sync {
    fn depth(&self) -> usize;
    fn width(&self) -> usize;
    fn has_w(&self) -> bool;
    /// Writes layer `k` (1-based) into `out`, which has the right shapes.
    fn load(&self, k: usize, out: &mut LayerParams);

    fn scratch(&self) -> LayerParams {
        LayerParams::zeros(self.width(), self.has_w())
    }
}

/// i.i.d. layers regenerated on demand from per-layer streams.
///
/// Layer `k` fills `V_k` column-major from the lane streams `(seed, [0, k, i])`
/// and `W_k` from `(seed, [1, k, i])`, so any layer can be produced without
/// the ones before it.
#[derive(Clone, Debug)]
pub struct IidLayers {
    dist: DistributionSpec,
    depth: usize,
    with_w: bool,
    seed: u64,
}

impl IidLayers {
    pub fn new(dist: DistributionSpec, depth: usize, with_w: bool, seed: u64) -> Self {
        Self {
            dist,
            depth,
            with_w,
            seed,
        }
    }
}

impl LayerSource for IidLayers {
    fn depth(&self) -> usize {
        self.depth
    }
    fn width(&self) -> usize {
        self.dist.width()
    }
    fn has_w(&self) -> bool {
        self.with_w
    }
    fn load(&self, k: usize, out: &mut LayerParams) {
        let mut s = LaneStream::derived(self.seed, &[STREAM_V, k as u64]);
        self.dist.fill_lanes(&mut s, out.v.as_mut_slice());
        if let Some(w) = out.w.as_mut() {
            let mut s = LaneStream::derived(self.seed, &[STREAM_W, k as u64]);
            self.dist.fill_lanes(&mut s, w.as_mut_slice());
        }
    }
}

/// Matrix-valued functions of the layer fraction `t ∈ [0, 1]`.
pub trait SmoothWeights: Sync {
    fn width(&self) -> usize;
    fn has_w(&self) -> bool;
    fn eval(&self, t: f64, out: &mut LayerParams);
}

/// Piecewise-linear interpolation of per-entry paths sampled on `knots + 1`
/// equispaced points of `[0, 1]`, plus an optional `μ I` shift of `V`.
#[derive(Clone, Debug)]
pub struct SmoothPath {
    width: usize,
    knots: usize,
    v: Vec<f64>,
    w: Option<Vec<f64>>,
    shift: f64,
}

impl SmoothPath {
    /// Independent GP paths for every entry of `V` (and `W`).
    pub fn sample(width: usize, with_w: bool, spec: &GpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let n = spec.knots + 1;
        let factor = spec.factor(n, 1.0 / spec.knots as f64)?;
        let entries = width * width;
        let v = correlated_entries(&factor, entries, seed, STREAM_V);
        let w = with_w.then(|| correlated_entries(&factor, entries, seed, STREAM_W));
        Ok(Self {
            width,
            knots: spec.knots,
            v,
            w,
            shift: 0.0,
        })
    }

    /// Builds a path from explicit knot values, laid out `[knot][entry]` with
    /// entries column-major.
    pub fn from_knots(width: usize, knots: usize, v: Vec<f64>, w: Option<Vec<f64>>) -> Result<Self> {
        let expected = (knots + 1) * width * width;
        if knots == 0 {
            return Err(Error::invalid("knots", "must be at least 1"));
        }
        for len in std::iter::once(v.len()).chain(w.as_ref().map(Vec::len)) {
            if len != expected {
                return Err(Error::ShapeMismatch {
                    context: "smooth path knots",
                    expected,
                    actual: len,
                });
            }
        }
        Ok(Self {
            width,
            knots,
            v,
            w,
            shift: 0.0,
        })
    }

    /// Adds `μ I` to every `V_t`.
    pub fn with_diagonal_shift(mut self, mu: f64) -> Self {
        self.shift = mu;
        self
    }

    pub fn knots(&self) -> usize {
        self.knots
    }

    fn interpolate(&self, data: &[f64], t: f64, out: &mut [f64]) {
        let entries = self.width * self.width;
        let x = t.clamp(0.0, 1.0) * self.knots as f64;
        let i = (x.floor() as usize).min(self.knots - 1);
        let f = x - i as f64;
        let a = &data[i * entries..(i + 1) * entries];
        let b = &data[(i + 1) * entries..(i + 2) * entries];
        for ((o, &a), &b) in out.iter_mut().zip(a).zip(b) {
            *o = a + f * (b - a);
        }
    }
}

impl SmoothWeights for SmoothPath {
    fn width(&self) -> usize {
        self.width
    }
    fn has_w(&self) -> bool {
        self.w.is_some()
    }
    fn eval(&self, t: f64, out: &mut LayerParams) {
        self.interpolate(&self.v, t, out.v.as_mut_slice());
        if self.shift != 0.0 {
            for i in 0..self.width {
                out.v[(i, i)] += self.shift;
            }
        }
        if let (Some(w), Some(out_w)) = (&self.w, out.w.as_mut()) {
            self.interpolate(w, t, out_w.as_mut_slice());
        }
    }
}

/// The same weights at every `t`.
#[derive(Clone, Debug)]
pub struct ConstantWeights(pub LayerParams);

impl SmoothWeights for ConstantWeights {
    fn width(&self) -> usize {
        self.0.v.nrows()
    }
    fn has_w(&self) -> bool {
        self.0.w.is_some()
    }
    fn eval(&self, _t: f64, out: &mut LayerParams) {
        out.v.copy_from(&self.0.v);
        if let (Some(w), Some(out_w)) = (&self.0.w, out.w.as_mut()) {
            out_w.copy_from(w);
        }
    }
}

/// Discretizes smooth weights at depth `L`: layer `k` uses `t = (k − 1)/L`.
#[derive(Clone, Debug)]
pub struct PathLayers<S> {
    pub weights: S,
    pub depth: usize,
}

impl<S: SmoothWeights> LayerSource for PathLayers<S> {
    fn depth(&self) -> usize {
        self.depth
    }
    fn width(&self) -> usize {
        self.weights.width()
    }
    fn has_w(&self) -> bool {
        self.weights.has_w()
    }
    fn load(&self, k: usize, out: &mut LayerParams) {
        self.weights.eval((k - 1) as f64 / self.depth as f64, out);
    }
}

/// Fully materialized weights `V_1..V_L` (and `W_1..W_L`).
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTape {
    pub v: Vec<DMatrix<f64>>,
    pub w: Option<Vec<DMatrix<f64>>>,
    pub scheme: InitScheme,
    pub seed: u64,
}

impl WeightTape {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    fn from_time_major(
        width: usize,
        depth: usize,
        v: Vec<f64>,
        w: Option<Vec<f64>>,
        scheme: InitScheme,
        seed: u64,
    ) -> Self {
        let entries = width * width;
        let split = |data: Vec<f64>| -> Vec<DMatrix<f64>> {
            data.chunks_exact(entries)
                .take(depth)
                .map(|c| DMatrix::from_column_slice(width, width, c))
                .collect()
        };
        Self {
            v: split(v),
            w: w.map(split),
            scheme,
            seed,
        }
    }
}

impl LayerSource for WeightTape {
    fn depth(&self) -> usize {
        self.v.len()
    }
    fn width(&self) -> usize {
        self.v.first().map_or(0, DMatrix::nrows)
    }
    fn has_w(&self) -> bool {
        self.w.is_some()
    }
    fn load(&self, k: usize, out: &mut LayerParams) {
        out.v.copy_from(&self.v[k - 1]);
        if let (Some(w), Some(out_w)) = (&self.w, out.w.as_mut()) {
            out_w.copy_from(&w[k - 1]);
        }
    }
}

/// The cheapest faithful source for a scheme: lazy for i.i.d., knot
/// interpolation for smooth paths, a dense tape for fGn.
#[derive(Clone, Debug)]
pub enum WeightSource {
    Iid(IidLayers),
    Smooth(PathLayers<SmoothPath>),
    Tape(WeightTape),
}

impl LayerSource for WeightSource {
    fn depth(&self) -> usize {
        match self {
            WeightSource::Iid(s) => s.depth(),
            WeightSource::Smooth(s) => s.depth(),
            WeightSource::Tape(s) => s.depth(),
        }
    }
    fn width(&self) -> usize {
        match self {
            WeightSource::Iid(s) => s.width(),
            WeightSource::Smooth(s) => s.width(),
            WeightSource::Tape(s) => s.width(),
        }
    }
    fn has_w(&self) -> bool {
        match self {
            WeightSource::Iid(s) => s.has_w(),
            WeightSource::Smooth(s) => s.has_w(),
            WeightSource::Tape(s) => s.has_w(),
        }
    }
    fn load(&self, k: usize, out: &mut LayerParams) {
        match self {
            WeightSource::Iid(s) => s.load(k, out),
            WeightSource::Smooth(s) => s.load(k, out),
            WeightSource::Tape(s) => s.load(k, out),
        }
    }
}

fn fbm_tape(model: &ModelSpec, spec: &FbmSpec, scheme: InitScheme, seed: u64) -> Result<WeightTape> {
    let (d, depth) = (model.width, model.depth);
    let factor = spec.factor(depth)?;
    let scale = spec.scale(depth) / (d as f64).sqrt();
    let sample = |kind| {
        let mut data = correlated_entries(&factor, d * d, seed, kind);
        data.iter_mut().for_each(|x| *x *= scale);
        data
    };
    let v = sample(STREAM_V);
    let w = model.arch.has_w().then(|| sample(STREAM_W));
    Ok(WeightTape::from_time_major(d, depth, v, w, scheme, seed))
}

pub fn weight_source(model: &ModelSpec, scheme: &InitScheme, seed: u64) -> Result<WeightSource> {
    model.validate()?;
    scheme.validate()?;
    let with_w = model.arch.has_w();
    Ok(match *scheme {
        InitScheme::Iid { distribution } => WeightSource::Iid(IidLayers::new(
            DistributionSpec::new(distribution, model.width)?,
            model.depth,
            with_w,
            seed,
        )),
        InitScheme::SmoothGp(gp) => WeightSource::Smooth(PathLayers {
            weights: SmoothPath::sample(model.width, with_w, &gp, seed)?,
            depth: model.depth,
        }),
        InitScheme::Fbm(fbm) => WeightSource::Tape(fbm_tape(model, &fbm, *scheme, seed)?),
    })
}

/// Materializes every layer; bit-identical to what [`weight_source`] serves.
pub fn build_weight_tape(model: &ModelSpec, scheme: &InitScheme, seed: u64) -> Result<WeightTape> {
    match weight_source(model, scheme, seed)? {
        WeightSource::Tape(t) => Ok(t),
        source => {
            let mut scratch = source.scratch();
            let mut v = Vec::with_capacity(model.depth);
            let mut w = source.has_w().then(|| Vec::with_capacity(model.depth));
            for k in 1..=model.depth {
                source.load(k, &mut scratch);
                v.push(scratch.v.clone());
                if let (Some(w), Some(sw)) = (w.as_mut(), scratch.w.as_ref()) {
                    w.push(sw.clone());
                }
            }
            Ok(WeightTape {
                v,
                w,
                scheme: *scheme,
                seed,
            })
        }
    }
}
