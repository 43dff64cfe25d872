//! Residual architectures and the forward pass.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::init::{LayerParams, LayerSource};
use crate::linalg::{all_finite, distance, matvec, norm};
use crate::rng::Stream;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Arch {
    /// `g = σ(h)`
    #[serde(rename = "res-1")]
    Res1,
    /// `g = σ(W h)`
    #[serde(rename = "res-2")]
    Res2,
    /// `g = ReLU(W h)`
    #[serde(rename = "res-3")]
    Res3,
}

impl Arch {
    pub fn has_w(self) -> bool {
        !matches!(self, Arch::Res1)
    }

    pub fn name(self) -> &'static str {
        match self {
            Arch::Res1 => "res-1",
            Arch::Res2 => "res-2",
            Arch::Res3 => "res-3",
        }
    }
}

impl std::str::FromStr for Arch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "res-1" | "res1" => Ok(Arch::Res1),
            "res-2" | "res2" => Ok(Arch::Res2),
            "res-3" | "res3" => Ok(Arch::Res3),
            other => Err(Error::invalid("arch", format!("unknown architecture {other:?}"))),
        }
    }
}

/// Element-wise nonlinearity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    /// `x` for `x ≥ 0`, `slope · x` otherwise.
    LeakyRelu { slope: f64 },
    Relu,
    Identity,
    Zero,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x >= 0.0 {
                    x
                } else {
                    slope * x
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
            Activation::Identity => x,
            Activation::Zero => 0.0,
        }
    }

    /// Derivative, with `ReLU′(0) = 0` and the leaky derivative at 0 equal to
    /// the negative-side slope.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::LeakyRelu { slope } => {
                if x > 0.0 {
                    1.0
                } else {
                    slope
                }
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
            Activation::Zero => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub arch: Arch,
    pub width: usize,
    pub depth: usize,
    /// Negative-side slope of the parametric ReLU used by res-1 and res-2.
    pub slope: f64,
    pub n_in: usize,
    pub n_out: usize,
}

impl ModelSpec {
    pub const MIN_SLOPE: f64 = std::f64::consts::FRAC_1_SQRT_2;

    /// `n_in = n_out = width`, slope `1/√2`.
    pub fn new(arch: Arch, width: usize, depth: usize) -> Self {
        Self {
            arch,
            width,
            depth,
            slope: Self::MIN_SLOPE,
            n_in: width,
            n_out: width,
        }
    }

    pub fn with_slope(mut self, slope: f64) -> Self {
        self.slope = slope;
        self
    }

    pub fn with_io(mut self, n_in: usize, n_out: usize) -> Self {
        self.n_in = n_in;
        self.n_out = n_out;
        self
    }

    pub fn with_depth(mut self, depth: usize) -> Self {
        self.depth = depth;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("width", self.width),
            ("depth", self.depth),
            ("n_in", self.n_in),
            ("n_out", self.n_out),
        ] {
            if value == 0 {
                return Err(Error::invalid(field, "must be at least 1"));
            }
        }
        // Small tolerance so that the literal 1/√2 from user input is accepted.
        if !(self.slope >= Self::MIN_SLOPE - 1e-12 && self.slope <= 1.0) {
            return Err(Error::invalid(
                "slope",
                format!("{} is outside [1/√2, 1]", self.slope),
            ));
        }
        Ok(())
    }

    pub fn activation(&self) -> Activation {
        match self.arch {
            Arch::Res3 => Activation::Relu,
            _ if self.slope == 1.0 => Activation::Identity,
            _ => Activation::LeakyRelu { slope: self.slope },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingRule {
    /// `α_L = L^{−β}`, `β > 0`.
    Beta(f64),
    /// A fixed `α ≥ 0`, independent of depth.
    Alpha(f64),
}

impl ScalingRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ScalingRule::Beta(b) if !(b > 0.0 && b.is_finite()) => {
                Err(Error::invalid("beta", format!("{b} is not positive")))
            }
            ScalingRule::Alpha(a) if !(a >= 0.0 && a.is_finite()) => {
                Err(Error::invalid("alpha", format!("{a} is negative")))
            }
            _ => Ok(()),
        }
    }

    pub fn alpha(&self, depth: usize) -> f64 {
        match *self {
            ScalingRule::Beta(b) => (depth as f64).powf(-b),
            ScalingRule::Alpha(a) => a,
        }
    }
}

/// Input embedding `A` (`d × n_in`) and readout `B` (`n_out × d`).
#[derive(Clone, Debug, PartialEq)]
pub struct Projections {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Projections {
    pub fn new(model: &ModelSpec, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        check_shape("A rows", model.width, a.nrows())?;
        check_shape("A columns", model.n_in, a.ncols())?;
        check_shape("B rows", model.n_out, b.nrows())?;
        check_shape("B columns", model.width, b.ncols())?;
        Ok(Self { a, b })
    }

    /// Gaussian entries with variance `1/n_in` for `A` and `1/d` for `B`.
    pub fn sample(model: &ModelSpec, stream: &mut Stream) -> Self {
        let sa = 1.0 / (model.n_in as f64).sqrt();
        let sb = 1.0 / (model.width as f64).sqrt();
        let a = DMatrix::from_fn(model.width, model.n_in, |_, _| stream.gaussian() * sa);
        let b = DMatrix::from_fn(model.n_out, model.width, |_, _| stream.gaussian() * sb);
        Self { a, b }
    }

    pub fn embed_input(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_shape("input", self.a.ncols(), x.len())?;
        let mut h = vec![0.0; self.a.nrows()];
        matvec(&self.a, x, &mut h);
        Ok(h)
    }

    pub fn readout(&self, h: &[f64]) -> Result<Vec<f64>> {
        check_shape("hidden state", self.b.ncols(), h.len())?;
        let mut y = vec![0.0; self.b.nrows()];
        matvec(&self.b, h, &mut y);
        Ok(y)
    }
}

pub(crate) fn check_shape(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::ShapeMismatch {
            context,
            expected,
            actual,
        })
    }
}

/// Hidden states `h_0..h_L`, stored contiguously.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    width: usize,
    states: Vec<f64>,
    pub alpha: f64,
}

impl Trajectory {
    pub fn from_states(width: usize, states: Vec<f64>, alpha: f64) -> Self {
        debug_assert_eq!(states.len() % width, 0);
        Self {
            width,
            states,
            alpha,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.states.len() / self.width - 1
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.width..(k + 1) * self.width]
    }

    pub fn initial(&self) -> &[f64] {
        self.state(0)
    }

    pub fn last(&self) -> &[f64] {
        self.state(self.depth())
    }

    /// `‖h_L − h_0‖ / ‖h_0‖`.
    pub fn output_ratio(&self) -> Result<f64> {
        self.ratio_at(self.depth())
    }

    /// `‖h_k − h_0‖ / ‖h_0‖`.
    pub fn ratio_at(&self, k: usize) -> Result<f64> {
        let n0 = norm(self.initial());
        if n0 == 0.0 {
            return Err(Error::ZeroNorm("h_0"));
        }
        Ok(distance(self.state(k), self.initial()) / n0)
    }

    /// `‖h_L‖ / ‖h_0‖`.
    pub fn norm_ratio(&self) -> Result<f64> {
        let n0 = norm(self.initial());
        if n0 == 0.0 {
            return Err(Error::ZeroNorm("h_0"));
        }
        Ok(norm(self.last()) / n0)
    }

    /// `max_k ‖h_k − h_0‖ / ‖h_0‖`.
    pub fn max_ratio(&self) -> Result<f64> {
        (0..=self.depth()).try_fold(0.0_f64, |m, k| Ok(m.max(self.ratio_at(k)?)))
    }
}

/// `‖h_L − h_0‖ / ‖h_0‖`.
pub fn norm_ratio_output(traj: &Trajectory) -> Result<f64> {
    traj.output_ratio()
}

/// Scratch buffers for one residual block.
pub(crate) struct BlockScratch {
    pub pre: Vec<f64>,
    pub g: Vec<f64>,
}

impl BlockScratch {
    pub fn new(width: usize) -> Self {
        Self {
            pre: vec![0.0; width],
            g: vec![0.0; width],
        }
    }
}

/// `g(h, θ)` into `scratch.g`; pre-activations (`h` or `W h`) into `scratch.pre`.
#[inline]
pub(crate) fn g_into(act: Activation, params: &LayerParams, h: &[f64], scratch: &mut BlockScratch) {
    match &params.w {
        Some(w) => matvec(w, h, &mut scratch.pre),
        None => scratch.pre.copy_from_slice(h),
    }
    for (g, &u) in scratch.g.iter_mut().zip(&scratch.pre) {
        *g = act.apply(u);
    }
}

fn check_params(model: &ModelSpec, params: &LayerParams, h: &[f64]) -> Result<()> {
    check_shape("hidden state", model.width, h.len())?;
    check_shape("V rows", model.width, params.v.nrows())?;
    check_shape("V columns", model.width, params.v.ncols())?;
    match (&params.w, model.arch.has_w()) {
        (Some(w), true) => {
            check_shape("W rows", model.width, w.nrows())?;
            check_shape("W columns", model.width, w.ncols())
        }
        (None, false) => Ok(()),
        (None, true) => Err(Error::invalid("layer params", "architecture requires W")),
        (Some(_), false) => Err(Error::invalid("layer params", "res-1 takes no W")),
    }
}

/// `g(h, θ)` for the model's architecture.
pub fn g_apply(model: &ModelSpec, params: &LayerParams, h: &[f64]) -> Result<Vec<f64>> {
    check_params(model, params, h)?;
    let mut scratch = BlockScratch::new(model.width);
    g_into(model.activation(), params, h, &mut scratch);
    Ok(scratch.g)
}

/// The residual branch `V g(h, θ)` without the `α` factor.
pub fn residual(model: &ModelSpec, params: &LayerParams, h: &[f64]) -> Result<Vec<f64>> {
    let g = g_apply(model, params, h)?;
    let mut out = vec![0.0; model.width];
    matvec(&params.v, &g, &mut out);
    Ok(out)
}

fn check_source(model: &ModelSpec, source: &impl LayerSource) -> Result<()> {
    check_shape("weight depth", model.depth, source.depth())?;
    check_shape("weight width", model.width, source.width())?;
    if source.has_w() != model.arch.has_w() {
        return Err(Error::invalid(
            "weights",
            format!("{} does not match the supplied W tapes", model.arch.name()),
        ));
    }
    Ok(())
}

/// Runs the recurrence from a given `h_0`.
pub fn forward_from(
    model: &ModelSpec,
    source: &impl LayerSource,
    h0: &[f64],
    rule: &ScalingRule,
) -> Result<Trajectory> {
    model.validate()?;
    rule.validate()?;
    check_source(model, source)?;
    check_shape("h_0", model.width, h0.len())?;
    if !all_finite(h0) {
        return Err(Error::Overflow { layer: 0 });
    }
    let d = model.width;
    let alpha = rule.alpha(model.depth);
    let act = model.activation();
    let mut states = Vec::with_capacity((model.depth + 1) * d);
    states.extend_from_slice(h0);
    let mut params = source.scratch();
    let mut scratch = BlockScratch::new(d);
    let mut step = vec![0.0; d];
    for k in 1..=model.depth {
        source.load(k, &mut params);
        let h = &states[(k - 1) * d..k * d];
        g_into(act, &params, h, &mut scratch);
        matvec(&params.v, &scratch.g, &mut step);
        let base = (k - 1) * d;
        let mut finite = true;
        for i in 0..d {
            let next = states[base + i] + alpha * step[i];
            finite &= next.is_finite();
            states.push(next);
        }
        if !finite {
            return Err(Error::Overflow { layer: k });
        }
    }
    Ok(Trajectory::from_states(d, states, alpha))
}

/// `h_0 = A x`, then the recurrence over all `L` layers.
pub fn forward(
    model: &ModelSpec,
    source: &impl LayerSource,
    proj: &Projections,
    x: &[f64],
    rule: &ScalingRule,
) -> Result<Trajectory> {
    check_shape("A rows", model.width, proj.a.nrows())?;
    if !all_finite(x) {
        return Err(Error::invalid("x", "input is not finite"));
    }
    let h0 = proj.embed_input(x)?;
    forward_from(model, source, &h0, rule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{build_weight_tape, Distribution, InitScheme, WeightTape};

    fn single_layer(v: DMatrix<f64>, w: Option<DMatrix<f64>>) -> WeightTape {
        WeightTape {
            v: vec![v],
            w: w.map(|w| vec![w]),
            scheme: InitScheme::iid(Distribution::GaussianScaled),
            seed: 0,
        }
    }

    #[test]
    fn res3_with_identity_w_is_relu() {
        let model = ModelSpec::new(Arch::Res3, 2, 1);
        let params = LayerParams {
            v: DMatrix::identity(2, 2),
            w: Some(DMatrix::identity(2, 2)),
        };
        assert_eq!(g_apply(&model, &params, &[1.0, -1.0]).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn res1_slope_one_is_identity() {
        let model = ModelSpec::new(Arch::Res1, 3, 1).with_slope(1.0);
        let params = LayerParams::zeros(3, false);
        let h = [0.3, -2.5, 7.0];
        assert_eq!(g_apply(&model, &params, &h).unwrap(), h.to_vec());
    }

    #[test]
    fn res2_leaky_hand_value() {
        let model = ModelSpec::new(Arch::Res2, 1, 1).with_slope(ModelSpec::MIN_SLOPE);
        let params = LayerParams {
            v: DMatrix::identity(1, 1),
            w: Some(DMatrix::identity(1, 1)),
        };
        let g = g_apply(&model, &params, &[-2.0]).unwrap();
        assert!((g[0] + 2.0_f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wrong_shapes_are_rejected() {
        let model = ModelSpec::new(Arch::Res3, 2, 1);
        let params = LayerParams::zeros(2, false);
        assert!(g_apply(&model, &params, &[1.0, 2.0]).is_err());
        let params = LayerParams::zeros(2, true);
        assert!(matches!(
            g_apply(&model, &params, &[1.0]),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn alpha_zero_keeps_state() {
        let model = ModelSpec::new(Arch::Res3, 5, 20);
        let scheme = InitScheme::iid(Distribution::UniformScaled);
        let tape = build_weight_tape(&model, &scheme, 3).unwrap();
        let h0 = [1.0, -2.0, 0.5, 0.0, 3.0];
        let traj = forward_from(&model, &tape, &h0, &ScalingRule::Alpha(0.0)).unwrap();
        for k in 0..=20 {
            assert_eq!(traj.state(k), &h0);
        }
        assert_eq!(traj.output_ratio().unwrap(), 0.0);
    }

    #[test]
    fn one_linear_step_by_hand() {
        let model = ModelSpec::new(Arch::Res1, 2, 1).with_slope(1.0);
        let v = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let tape = single_layer(v, None);
        let traj = forward_from(&model, &tape, &[1.0, 1.0], &ScalingRule::Alpha(0.5)).unwrap();
        assert_eq!(traj.last(), &[1.0 + 0.5 * 3.0, 1.0 + 0.5 * 7.0]);
    }

    #[test]
    fn output_ratio_formula() {
        let traj = Trajectory::from_states(2, vec![1.0, 0.0, 2.0, 0.0], 1.0);
        assert_eq!(traj.output_ratio().unwrap(), 1.0);
        assert_eq!(traj.norm_ratio().unwrap(), 2.0);
        let same = Trajectory::from_states(2, vec![1.0, 0.0, 1.0, 0.0], 1.0);
        assert_eq!(norm_ratio_output(&same).unwrap(), 0.0);
        let zero = Trajectory::from_states(1, vec![0.0, 1.0], 1.0);
        assert_eq!(zero.output_ratio(), Err(Error::ZeroNorm("h_0")));
    }

    #[test]
    fn overflow_reports_first_layer() {
        let model = ModelSpec::new(Arch::Res1, 1, 5).with_slope(1.0);
        let tape = WeightTape {
            v: vec![DMatrix::from_element(1, 1, 1e300); 5],
            w: None,
            scheme: InitScheme::iid(Distribution::GaussianScaled),
            seed: 0,
        };
        let err = forward_from(&model, &tape, &[1e300], &ScalingRule::Alpha(1.0)).unwrap_err();
        assert_eq!(err, Error::Overflow { layer: 1 });
    }

    #[test]
    fn projections_and_readout() {
        let model = ModelSpec::new(Arch::Res1, 3, 1).with_io(3, 2);
        let proj = Projections::new(&model, DMatrix::identity(3, 3), DMatrix::zeros(2, 3)).unwrap();
        let x = [1.0, 2.0, 3.0];
        assert_eq!(proj.embed_input(&x).unwrap(), x.to_vec());
        assert_eq!(proj.readout(&x).unwrap(), vec![0.0, 0.0]);
        assert!(Projections::new(&model, DMatrix::zeros(3, 2), DMatrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn slope_envelope_is_enforced() {
        assert!(ModelSpec::new(Arch::Res1, 2, 2).with_slope(0.5).validate().is_err());
        assert!(ModelSpec::new(Arch::Res1, 2, 2).with_slope(1.1).validate().is_err());
        assert!(ModelSpec::new(Arch::Res1, 2, 2).with_slope(0.9).validate().is_ok());
    }
}
