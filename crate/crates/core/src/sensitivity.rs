//! Forward-mode (`q_k`) and reverse-mode (`p_k`) sensitivity recursions.
//!
//! ```text
//! q_{k+1} = q_k + α V_{k+1} ∂g(h_k, θ_{k+1})/∂h q_k,         q_0 = z
//! p_k     = p_{k+1} + α ∂g(h_k, θ_{k+1})/∂hᵀ V_{k+1}ᵀ p_{k+1}
//! ```

use crate::init::{LayerParams, LayerSource};
use crate::linalg::{all_finite, distance, dot, matvec, matvec_t, norm};
use crate::model::{check_shape, forward, Activation, ModelSpec, Projections, ScalingRule, Trajectory};
use crate::rng::Stream;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SensitivityMode {
    Forward,
    Backward,
}

/// `q_0..q_L` (forward) or `p_0..p_L` (backward), indexed by layer.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivityTape {
    pub mode: SensitivityMode,
    width: usize,
    seq: Vec<f64>,
}

impl SensitivityTape {
    pub fn depth(&self) -> usize {
        self.seq.len() / self.width - 1
    }

    pub fn state(&self, k: usize) -> &[f64] {
        &self.seq[k * self.width..(k + 1) * self.width]
    }

    /// `q_0 = z` or `p_0`.
    pub fn first(&self) -> &[f64] {
        self.state(0)
    }

    /// `q_L` or the terminal gradient `p_L`.
    pub fn last(&self) -> &[f64] {
        self.state(self.depth())
    }
}

struct JacScratch {
    pre: Vec<f64>,
    tmp: Vec<f64>,
}

impl JacScratch {
    fn new(d: usize) -> Self {
        Self {
            pre: vec![0.0; d],
            tmp: vec![0.0; d],
        }
    }

    fn preactivate(&mut self, params: &LayerParams, h: &[f64]) {
        match &params.w {
            Some(w) => matvec(w, h, &mut self.pre),
            None => self.pre.copy_from_slice(h),
        }
    }
}

/// `(∂g/∂h) v` into `out`; `scratch.pre` must hold the pre-activations.
fn jvp_into(act: Activation, params: &LayerParams, v: &[f64], s: &mut JacScratch, out: &mut [f64]) {
    match &params.w {
        Some(w) => matvec(w, v, &mut s.tmp),
        None => s.tmp.copy_from_slice(v),
    }
    for ((o, &t), &u) in out.iter_mut().zip(&s.tmp).zip(&s.pre) {
        *o = act.derivative(u) * t;
    }
}

/// `(∂g/∂h)ᵀ u` into `out`; `scratch.pre` must hold the pre-activations.
fn vjp_into(act: Activation, params: &LayerParams, u: &[f64], s: &mut JacScratch, out: &mut [f64]) {
    for ((t, &ui), &p) in s.tmp.iter_mut().zip(u).zip(&s.pre) {
        *t = act.derivative(p) * ui;
    }
    match &params.w {
        Some(w) => matvec_t(w, &s.tmp, out),
        None => out.copy_from_slice(&s.tmp),
    }
}

fn check_vectors(model: &ModelSpec, params: &LayerParams, a: &[f64], b: &[f64]) -> Result<()> {
    check_shape("h", model.width, a.len())?;
    check_shape("direction", model.width, b.len())?;
    if params.w.is_some() != model.arch.has_w() {
        return Err(Error::invalid("layer params", "W presence does not match architecture"));
    }
    if let Some(w) = &params.w {
        check_shape("W rows", model.width, w.nrows())?;
        check_shape("W columns", model.width, w.ncols())?;
    }
    Ok(())
}

/// `(∂g/∂h)(h) · v`.
pub fn jacobian_vector(model: &ModelSpec, params: &LayerParams, h: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_vectors(model, params, h, v)?;
    let mut s = JacScratch::new(model.width);
    s.preactivate(params, h);
    let mut out = vec![0.0; model.width];
    jvp_into(model.activation(), params, v, &mut s, &mut out);
    Ok(out)
}

/// `(∂g/∂h)(h)ᵀ · u`.
pub fn jacobian_transpose_vector(
    model: &ModelSpec,
    params: &LayerParams,
    h: &[f64],
    u: &[f64],
) -> Result<Vec<f64>> {
    check_vectors(model, params, h, u)?;
    let mut s = JacScratch::new(model.width);
    s.preactivate(params, h);
    let mut out = vec![0.0; model.width];
    vjp_into(model.activation(), params, u, &mut s, &mut out);
    Ok(out)
}

fn check_traj(model: &ModelSpec, source: &impl LayerSource, traj: &Trajectory) -> Result<()> {
    check_shape("trajectory depth", model.depth, traj.depth())?;
    check_shape("trajectory width", model.width, traj.width())?;
    check_shape("weight depth", model.depth, source.depth())?;
    check_shape("weight width", model.width, source.width())
}

/// `q_k(z) = (∂h_k/∂h_0) z` for `k = 0..L`.
pub fn forward_sensitivity(
    model: &ModelSpec,
    source: &impl LayerSource,
    traj: &Trajectory,
    z: &[f64],
    rule: &ScalingRule,
) -> Result<SensitivityTape> {
    check_traj(model, source, traj)?;
    check_shape("probe", model.width, z.len())?;
    let d = model.width;
    let alpha = rule.alpha(model.depth);
    let act = model.activation();
    let mut seq = Vec::with_capacity((model.depth + 1) * d);
    seq.extend_from_slice(z);
    let mut params = source.scratch();
    let mut s = JacScratch::new(d);
    let mut jq = vec![0.0; d];
    let mut step = vec![0.0; d];
    for k in 1..=model.depth {
        source.load(k, &mut params);
        s.preactivate(&params, traj.state(k - 1));
        let q = &seq[(k - 1) * d..k * d];
        jvp_into(act, &params, q, &mut s, &mut jq);
        matvec(&params.v, &jq, &mut step);
        let base = (k - 1) * d;
        for i in 0..d {
            let next = seq[base + i] + alpha * step[i];
            seq.push(next);
        }
        if !all_finite(&seq[k * d..]) {
            return Err(Error::Overflow { layer: k });
        }
    }
    Ok(SensitivityTape {
        mode: SensitivityMode::Forward,
        width: d,
        seq,
    })
}

/// `p_k = ∂𝓛/∂h_k` for `k = L..0`, starting from `p_L`.
pub fn backward_gradient(
    model: &ModelSpec,
    source: &impl LayerSource,
    traj: &Trajectory,
    p_last: &[f64],
    rule: &ScalingRule,
) -> Result<SensitivityTape> {
    check_traj(model, source, traj)?;
    check_shape("terminal gradient", model.width, p_last.len())?;
    let d = model.width;
    let depth = model.depth;
    let alpha = rule.alpha(depth);
    let act = model.activation();
    let mut seq = vec![0.0; (depth + 1) * d];
    seq[depth * d..].copy_from_slice(p_last);
    let mut params = source.scratch();
    let mut s = JacScratch::new(d);
    let mut vp = vec![0.0; d];
    let mut step = vec![0.0; d];
    for k in (0..depth).rev() {
        source.load(k + 1, &mut params);
        s.preactivate(&params, traj.state(k));
        let (head, tail) = seq.split_at_mut((k + 1) * d);
        let next = &tail[..d];
        matvec_t(&params.v, next, &mut vp);
        vjp_into(act, &params, &vp, &mut s, &mut step);
        let cur = &mut head[k * d..];
        for i in 0..d {
            cur[i] = next[i] + alpha * step[i];
        }
        if !all_finite(cur) {
            return Err(Error::Overflow { layer: k });
        }
    }
    Ok(SensitivityTape {
        mode: SensitivityMode::Backward,
        width: d,
        seq,
    })
}

/// Gradient of `‖B h − y‖²` with respect to `h`: `2 Bᵀ(B h − y)`.
pub fn squared_loss_gradient(proj: &Projections, h: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let mut r = proj.readout(h)?;
    check_shape("target", r.len(), y.len())?;
    for (ri, yi) in r.iter_mut().zip(y) {
        *ri = 2.0 * (*ri - yi);
    }
    let mut g = vec![0.0; h.len()];
    matvec_t(&proj.b, &r, &mut g);
    Ok(g)
}

/// Everything measured by one forward + backward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PassSummary {
    /// `‖h_L − h_0‖ / ‖h_0‖`
    pub output_ratio: f64,
    /// `‖h_L‖ / ‖h_0‖`
    pub norm_ratio: f64,
    /// `‖p_0 − p_L‖ / ‖p_L‖`
    pub gradient_ratio: f64,
}

/// Forward pass, squared-loss terminal gradient, backward pass.
pub fn forward_backward(
    model: &ModelSpec,
    source: &impl LayerSource,
    proj: &Projections,
    x: &[f64],
    y: &[f64],
    rule: &ScalingRule,
) -> Result<PassSummary> {
    let traj = forward(model, source, proj, x, rule)?;
    let p_last = squared_loss_gradient(proj, traj.last(), y)?;
    let pn = norm(&p_last);
    if pn == 0.0 {
        return Err(Error::ZeroNorm("p_L"));
    }
    let back = backward_gradient(model, source, &traj, &p_last, rule)?;
    Ok(PassSummary {
        output_ratio: traj.output_ratio()?,
        norm_ratio: traj.norm_ratio()?,
        gradient_ratio: distance(back.first(), &p_last) / pn,
    })
}

/// `‖p_0 − p_L‖ / ‖p_L‖` under the squared loss.
pub fn gradient_ratio(
    model: &ModelSpec,
    source: &impl LayerSource,
    proj: &Projections,
    x: &[f64],
    y: &[f64],
    rule: &ScalingRule,
) -> Result<f64> {
    Ok(forward_backward(model, source, proj, x, y, rule)?.gradient_ratio)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeEstimate {
    pub value: f64,
    pub std_error: f64,
    pub probes: usize,
}

/// Estimates `‖p_0‖² / ‖p_L‖²` from forward sensitivities only.
///
/// With `b = p_L/‖p_L‖` and Gaussian probes `z_i`, returns the ratio estimator
/// `Σ (bᵀ q_L(z_i))² / Σ ‖z_i‖²/d`. Both sums have the same expectation up
/// to the target factor, and for `d = 1` the ratio is exact after one probe.
#[allow(clippy::too_many_arguments)]
pub fn estimate_ratio_forward(
    model: &ModelSpec,
    source: &impl LayerSource,
    proj: &Projections,
    x: &[f64],
    y: &[f64],
    rule: &ScalingRule,
    n_probes: usize,
    stream: &mut Stream,
) -> Result<ProbeEstimate> {
    if n_probes == 0 {
        return Err(Error::invalid("n_probes", "must be at least 1"));
    }
    let traj = forward(model, source, proj, x, rule)?;
    let p_last = squared_loss_gradient(proj, traj.last(), y)?;
    let pn = norm(&p_last);
    if pn == 0.0 {
        return Err(Error::ZeroNorm("p_L"));
    }
    let b: Vec<f64> = p_last.iter().map(|p| p / pn).collect();
    let d = model.width as f64;
    let mut num = Vec::with_capacity(n_probes);
    let mut den = Vec::with_capacity(n_probes);
    for _ in 0..n_probes {
        let z = stream.gaussian_vec(model.width);
        let q = forward_sensitivity(model, source, &traj, &z, rule)?;
        num.push(dot(&b, q.last()).powi(2));
        den.push(dot(&z, &z) / d);
    }
    let n = n_probes as f64;
    let xbar = den.iter().sum::<f64>() / n;
    let value = num.iter().sum::<f64>() / n / xbar;
    let std_error = if n_probes > 1 {
        let ss: f64 = num
            .iter()
            .zip(&den)
            .map(|(y, x)| (y - value * x).powi(2))
            .sum();
        (ss / (n * (n - 1.0))).sqrt() / xbar
    } else {
        0.0
    };
    Ok(ProbeEstimate {
        value,
        std_error,
        probes: n_probes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::{build_weight_tape, Distribution, InitScheme};
    use crate::model::{forward_from, Arch};
    use nalgebra::DMatrix;

    #[test]
    fn slope_one_jacobian_is_identity() {
        let model = ModelSpec::new(Arch::Res1, 3, 1).with_slope(1.0);
        let params = LayerParams::zeros(3, false);
        let v = [1.0, -2.0, 3.0];
        assert_eq!(jacobian_vector(&model, &params, &[-1.0, 0.5, 2.0], &v).unwrap(), v);
        assert_eq!(
            jacobian_transpose_vector(&model, &params, &[-1.0, 0.5, 2.0], &v).unwrap(),
            v
        );
    }

    #[test]
    fn relu_mask() {
        let model = ModelSpec::new(Arch::Res3, 2, 1);
        let params = LayerParams {
            v: DMatrix::identity(2, 2),
            w: Some(DMatrix::identity(2, 2)),
        };
        let out = jacobian_vector(&model, &params, &[1.0, -1.0], &[3.0, 5.0]).unwrap();
        assert_eq!(out, vec![3.0, 0.0]);
    }

    #[test]
    fn alpha_zero_sensitivities_are_constant() {
        let model = ModelSpec::new(Arch::Res2, 4, 6);
        let tape = build_weight_tape(&model, &InitScheme::iid(Distribution::GaussianScaled), 9).unwrap();
        let rule = ScalingRule::Alpha(0.0);
        let h0 = [0.1, 0.2, -0.3, 0.4];
        let traj = forward_from(&model, &tape, &h0, &rule).unwrap();
        let z = [1.0, 0.0, -1.0, 2.0];
        let q = forward_sensitivity(&model, &tape, &traj, &z, &rule).unwrap();
        let p = backward_gradient(&model, &tape, &traj, &z, &rule).unwrap();
        for k in 0..=6 {
            assert_eq!(q.state(k), &z);
            assert_eq!(p.state(k), &z);
        }
        assert_eq!(q.mode, SensitivityMode::Forward);
        assert_eq!(p.mode, SensitivityMode::Backward);
    }

    #[test]
    fn one_step_forward_sensitivity() {
        let model = ModelSpec::new(Arch::Res1, 2, 1).with_slope(1.0);
        let tape = build_weight_tape(&model, &InitScheme::iid(Distribution::GaussianScaled), 1).unwrap();
        let rule = ScalingRule::Alpha(0.3);
        let traj = forward_from(&model, &tape, &[1.0, 2.0], &rule).unwrap();
        let z = [0.5, -1.5];
        let q = forward_sensitivity(&model, &tape, &traj, &z, &rule).unwrap();
        let v = &tape.v[0];
        for i in 0..2 {
            let expected = z[i] + 0.3 * (v[(i, 0)] * z[0] + v[(i, 1)] * z[1]);
            assert!((q.last()[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn d1_probe_estimate_is_exact() {
        let model = ModelSpec::new(Arch::Res2, 1, 30).with_io(1, 1).with_slope(0.8);
        let tape = build_weight_tape(&model, &InitScheme::iid(Distribution::GaussianScaled), 5).unwrap();
        let mut s = Stream::new(1);
        let proj = Projections::sample(&model, &mut s);
        let rule = ScalingRule::Beta(0.5);
        let (x, y) = ([0.7], [0.2]);
        let est = estimate_ratio_forward(&model, &tape, &proj, &x, &y, &rule, 1, &mut s).unwrap();
        let traj = forward(&model, &tape, &proj, &x, &rule).unwrap();
        let pl = squared_loss_gradient(&proj, traj.last(), &y).unwrap();
        let p = backward_gradient(&model, &tape, &traj, &pl, &rule).unwrap();
        let exact = (p.first()[0] / pl[0]).powi(2);
        assert!((est.value - exact).abs() <= 1e-12 * exact);
    }
}
