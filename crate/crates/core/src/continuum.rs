//! Continuous-depth limits: Euler–Maruyama for the diffusion limit of
//! res-1 with i.i.d. weights, Euler for the neural ODE limit of smooth
//! weights, and log-log convergence fits.

use rayon::prelude::*;

use crate::init::{GpSpec, LayerParams, PathLayers, SmoothPath, SmoothWeights};
use crate::linalg::{distance, matvec_t, norm};
use crate::model::{forward_from, Activation, Arch, ModelSpec, ScalingRule, Trajectory};
use crate::rng::Stream;
use crate::{Error, Result};

/// Matrix Brownian increments on a fine grid of `L · m` steps over `[0, 1]`,
/// with the `L` coarse increments obtained by summing blocks of `m`.
///
/// Every entry is an independent Brownian motion built by dyadic bridge
/// refinement: `L` coarse `N(0, 1/L)` draws, then each level splits every
/// interval in two. The fine grid for refinement `m` is therefore a prefix of
/// the construction for `2m`.
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianGrid {
    width: usize,
    coarse_steps: usize,
    refinement: usize,
    fine: Vec<f64>,
    coarse: Vec<f64>,
}

impl BrownianGrid {
    pub fn sample(width: usize, coarse_steps: usize, refinement: usize, seed: u64) -> Result<Self> {
        if width == 0 || coarse_steps == 0 {
            return Err(Error::invalid("brownian grid", "width and steps must be positive"));
        }
        if !refinement.is_power_of_two() {
            return Err(Error::invalid("refinement", format!("{refinement} is not a power of two")));
        }
        let entries = width * width;
        let fine_steps = coarse_steps * refinement;
        let mut fine = vec![0.0; fine_steps * entries];
        let mut path = Vec::with_capacity(fine_steps);
        let mut next = Vec::with_capacity(fine_steps);
        for e in 0..entries {
            let mut s = Stream::derived(seed, &[e as u64]);
            let mut dt = 1.0 / coarse_steps as f64;
            path.clear();
            path.extend((0..coarse_steps).map(|_| s.gaussian() * dt.sqrt()));
            while path.len() < fine_steps {
                let sd = (dt / 4.0).sqrt();
                next.clear();
                for &inc in &path {
                    let first = 0.5 * inc + sd * s.gaussian();
                    next.push(first);
                    next.push(inc - first);
                }
                std::mem::swap(&mut path, &mut next);
                dt /= 2.0;
            }
            for (k, &inc) in path.iter().enumerate() {
                fine[k * entries + e] = inc;
            }
        }
        Self::from_fine(width, coarse_steps, refinement, fine)
    }

    /// Wraps explicit fine increments (time-major, column-major matrices).
    pub fn from_fine(width: usize, coarse_steps: usize, refinement: usize, fine: Vec<f64>) -> Result<Self> {
        let entries = width * width;
        let expected = coarse_steps * refinement * entries;
        if fine.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "fine increments",
                expected,
                actual: fine.len(),
            });
        }
        let mut coarse = vec![0.0; coarse_steps * entries];
        for k in 0..coarse_steps {
            let out = &mut coarse[k * entries..(k + 1) * entries];
            for j in 0..refinement {
                let src = &fine[(k * refinement + j) * entries..(k * refinement + j + 1) * entries];
                for (o, &f) in out.iter_mut().zip(src) {
                    *o += f;
                }
            }
        }
        Ok(Self {
            width,
            coarse_steps,
            refinement,
            fine,
            coarse,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn coarse_steps(&self) -> usize {
        self.coarse_steps
    }

    pub fn fine_steps(&self) -> usize {
        self.coarse_steps * self.refinement
    }

    pub fn refinement(&self) -> usize {
        self.refinement
    }

    pub fn fine(&self) -> &[f64] {
        &self.fine
    }

    pub fn coarse(&self) -> &[f64] {
        &self.coarse
    }
}

/// Euler–Maruyama for `dHᵀ = √(2/d) σ(Hᵀ) dB`:
/// `h_{k+1} = h_k + √(2/d) ΔB_kᵀ σ(h_k)`.
///
/// `increments` holds the `ΔB_k` time-major, each `d × d` column-major.
pub fn euler_maruyama_res1(
    width: usize,
    activation: Activation,
    increments: &[f64],
    h0: &[f64],
) -> Result<Trajectory> {
    let entries = width * width;
    if width == 0 || !increments.len().is_multiple_of(entries) {
        return Err(Error::ShapeMismatch {
            context: "brownian increments",
            expected: entries,
            actual: increments.len() % entries.max(1),
        });
    }
    if h0.len() != width {
        return Err(Error::ShapeMismatch {
            context: "h_0",
            expected: width,
            actual: h0.len(),
        });
    }
    let steps = increments.len() / entries;
    let c = (2.0 / width as f64).sqrt();
    let mut states = Vec::with_capacity((steps + 1) * width);
    states.extend_from_slice(h0);
    let mut sig = vec![0.0; width];
    let mut db = nalgebra::DMatrix::zeros(width, width);
    let mut step = vec![0.0; width];
    for k in 0..steps {
        let h = &states[k * width..(k + 1) * width];
        for (s, &x) in sig.iter_mut().zip(h) {
            *s = activation.apply(x);
        }
        db.as_mut_slice()
            .copy_from_slice(&increments[k * entries..(k + 1) * entries]);
        matvec_t(&db, &sig, &mut step);
        let mut finite = true;
        for i in 0..width {
            let next = states[k * width + i] + c * step[i];
            finite &= next.is_finite();
            states.push(next);
        }
        if !finite {
            return Err(Error::Overflow { layer: k + 1 });
        }
    }
    Ok(Trajectory::from_states(width, states, c))
}

/// Least-squares line through `(log L_i, log e_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RateFit {
    pub depths: Vec<usize>,
    pub errors: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `None` when some error is exactly zero.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
}

impl RateFit {
    pub const MIN_DEPTHS: usize = 4;

    pub fn fit(depths: Vec<usize>, errors: Vec<f64>, std_errors: Vec<f64>) -> Result<Self> {
        if depths.len() < Self::MIN_DEPTHS {
            return Err(Error::InsufficientDepths {
                required: Self::MIN_DEPTHS,
                actual: depths.len(),
            });
        }
        let (slope, intercept) = if errors.iter().all(|&e| e > 0.0 && e.is_finite()) {
            let xs: Vec<f64> = depths.iter().map(|&l| (l as f64).ln()).collect();
            let ys: Vec<f64> = errors.iter().map(|e| e.ln()).collect();
            let (s, i) = least_squares(&xs, &ys);
            (Some(s), Some(i))
        } else {
            (None, None)
        };
        Ok(Self {
            depths,
            errors,
            std_errors,
            slope,
            intercept,
        })
    }

    /// All errors are zero or the fit is otherwise undefined.
    pub fn is_degenerate(&self) -> bool {
        self.slope.is_none()
    }
}

/// Returns `(slope, intercept)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

fn check_depths(depths: &[usize]) -> Result<()> {
    if depths.len() < RateFit::MIN_DEPTHS {
        return Err(Error::InsufficientDepths {
            required: RateFit::MIN_DEPTHS,
            actual: depths.len(),
        });
    }
    if depths[0] == 0 || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("depths", "must be positive and strictly increasing"));
    }
    Ok(())
}

fn mean_and_se(rows: &[Vec<f64>], j: usize) -> (f64, f64) {
    let n = rows.len() as f64;
    let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
    let var = if rows.len() > 1 {
        rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, (var / n).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdeConfig {
    pub width: usize,
    pub depths: Vec<usize>,
    pub refinement: usize,
    pub trials: usize,
    pub seed: u64,
    pub activation: Activation,
}

impl SdeConfig {
    pub const MIN_REFINEMENT: usize = 16;
}

/// Mean terminal strong error of Euler–Maruyama at each depth against a
/// reference `m` times finer driven by the same Brownian path.
pub fn strong_error_sde(cfg: &SdeConfig) -> Result<RateFit> {
    check_depths(&cfg.depths)?;
    if cfg.refinement < SdeConfig::MIN_REFINEMENT || !cfg.refinement.is_power_of_two() {
        return Err(Error::invalid("refinement", "must be a power of two ≥ 16"));
    }
    if cfg.trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let d = cfg.width;
    let rows: Vec<Vec<f64>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut s = Stream::derived(cfg.seed, &[trial as u64, 0]);
            let h0: Vec<f64> = s.gaussian_vec(d);
            cfg.depths
                .iter()
                .map(|&l| {
                    let grid_seed = crate::rng::derive_seed(cfg.seed, &[trial as u64, 1, l as u64]);
                    let grid = BrownianGrid::sample(d, l, cfg.refinement, grid_seed)?;
                    let fine = euler_maruyama_res1(d, cfg.activation, grid.fine(), &h0)?;
                    let coarse = euler_maruyama_res1(d, cfg.activation, grid.coarse(), &h0)?;
                    Ok(distance(fine.last(), coarse.last()) / norm(&h0))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    let (errors, ses) = (0..cfg.depths.len()).map(|j| mean_and_se(&rows, j)).unzip();
    RateFit::fit(cfg.depths.clone(), errors, ses)
}

/// Explicit Euler with step `1/N` for `dH = 𝒱_t g(H, Θ_t) dt`.
///
/// Step `n` evaluates the weights at `t = n/N`, so for `N = L` this is the
/// residual recurrence with `α = 1/L` on the same path.
pub fn ode_integrate(
    model: &ModelSpec,
    weights: &impl SmoothWeights,
    h0: &[f64],
    steps: usize,
) -> Result<Trajectory> {
    let model = model.with_depth(steps);
    let layers = PathLayers {
        weights: RefWeights(weights),
        depth: steps,
    };
    forward_from(&model, &layers, h0, &ScalingRule::Alpha(1.0 / steps as f64))
}

struct RefWeights<'a, S>(&'a S);

impl<S: SmoothWeights> SmoothWeights for RefWeights<'_, S> {
    fn width(&self) -> usize {
        self.0.width()
    }
    fn has_w(&self) -> bool {
        self.0.has_w()
    }
    fn eval(&self, t: f64, out: &mut LayerParams) {
        self.0.eval(t, out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OdeConfig {
    /// Architecture, width and slope; depth is ignored.
    pub model: ModelSpec,
    pub gp: GpSpec,
    pub depths: Vec<usize>,
    /// Reference resolution; `None` means 64 × the largest depth.
    pub reference_steps: Option<usize>,
    pub trials: usize,
    pub seed: u64,
}

impl OdeConfig {
    pub const REFERENCE_FACTOR: usize = 64;
}

/// Terminal error of the depth-`L` network with `α = 1/L` against a
/// high-resolution Euler reference on the same sampled smooth path.
pub fn ode_error_vs_depth(cfg: &OdeConfig) -> Result<RateFit> {
    check_depths(&cfg.depths)?;
    let max_depth = *cfg.depths.last().expect("checked non-empty");
    let n_ref = cfg
        .reference_steps
        .unwrap_or(OdeConfig::REFERENCE_FACTOR * max_depth);
    if n_ref < OdeConfig::REFERENCE_FACTOR * max_depth {
        return Err(Error::invalid("reference_steps", "must be at least 64 × the largest depth"));
    }
    if cfg.trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let d = cfg.model.width;
    let rows: Vec<Vec<f64>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let path = SmoothPath::sample(
                d,
                cfg.model.arch.has_w(),
                &cfg.gp,
                crate::rng::derive_seed(cfg.seed, &[trial as u64, 0]),
            )?;
            let mut s = Stream::derived(cfg.seed, &[trial as u64, 1]);
            let h0 = s.gaussian_vec(d);
            ode_errors(&cfg.model, &path, &h0, &cfg.depths, n_ref)
        })
        .collect::<Result<_>>()?;
    let (errors, ses) = (0..cfg.depths.len()).map(|j| mean_and_se(&rows, j)).unzip();
    RateFit::fit(cfg.depths.clone(), errors, ses)
}

/// `‖H_ref(1) − h_L‖ / ‖h_0‖` for each depth on one fixed path.
pub fn ode_errors(
    model: &ModelSpec,
    weights: &impl SmoothWeights,
    h0: &[f64],
    depths: &[usize],
    reference_steps: usize,
) -> Result<Vec<f64>> {
    let reference = ode_integrate(model, weights, h0, reference_steps)?;
    let n0 = norm(h0);
    if n0 == 0.0 {
        return Err(Error::ZeroNorm("h_0"));
    }
    depths
        .iter()
        .map(|&l| {
            let coarse = ode_integrate(model, weights, h0, l)?;
            Ok(distance(reference.last(), coarse.last()) / n0)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeConfig {
    pub model: ModelSpec,
    pub gp: GpSpec,
    pub beta: f64,
    pub depths: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// When set, `V_t = μ I + GP path` (explosion probe).
    pub shift: Option<f64>,
}

impl ProbeConfig {
    /// Linear res-1 with `𝒱_t = μ I + GP path`.
    pub fn explosion(width: usize, mu: f64, beta: f64, depths: Vec<usize>, trials: usize, seed: u64) -> Self {
        Self {
            model: ModelSpec::new(Arch::Res1, width, 1).with_slope(1.0),
            gp: GpSpec::default(),
            beta,
            depths,
            trials,
            seed,
            shift: Some(mu),
        }
    }
}

/// Per-trial ratios at each depth on a shared smooth path.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub depths: Vec<usize>,
    /// `[trial][depth]` values of `‖h_L − h_0‖/‖h_0‖`, `+∞` on overflow.
    pub output: Vec<Vec<f64>>,
    /// `[trial][depth]` values of `max_k ‖h_k − h_0‖/‖h_0‖`, `+∞` on overflow.
    pub max: Vec<Vec<f64>>,
}

impl ProbeResult {
    fn column_median(rows: &[Vec<f64>], j: usize) -> f64 {
        let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
        crate::stats::median(&col)
    }

    pub fn median_output(&self) -> Vec<f64> {
        (0..self.depths.len())
            .map(|j| Self::column_median(&self.output, j))
            .collect()
    }

    pub fn median_max(&self) -> Vec<f64> {
        (0..self.depths.len())
            .map(|j| Self::column_median(&self.max, j))
            .collect()
    }
}

/// Output ratios across depths with `α = L^{−β}` for smooth GP weights.
pub fn smooth_regime_probe(cfg: &ProbeConfig) -> Result<ProbeResult> {
    if cfg.depths.is_empty() || cfg.trials == 0 {
        return Err(Error::invalid("probe", "needs depths and trials"));
    }
    let d = cfg.model.width;
    let rule = ScalingRule::Beta(cfg.beta);
    rule.validate()?;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut path = SmoothPath::sample(
                d,
                cfg.model.arch.has_w(),
                &cfg.gp,
                crate::rng::derive_seed(cfg.seed, &[trial as u64, 0]),
            )?;
            if let Some(mu) = cfg.shift {
                path = path.with_diagonal_shift(mu);
            }
            let mut s = Stream::derived(cfg.seed, &[trial as u64, 1]);
            let h0 = s.gaussian_vec(d);
            let mut out = Vec::with_capacity(cfg.depths.len());
            let mut max = Vec::with_capacity(cfg.depths.len());
            for &l in &cfg.depths {
                let model = cfg.model.with_depth(l);
                let layers = PathLayers {
                    weights: RefWeights(&path),
                    depth: l,
                };
                match forward_from(&model, &layers, &h0, &rule) {
                    Ok(traj) => {
                        out.push(traj.output_ratio()?);
                        max.push(traj.max_ratio()?);
                    }
                    Err(Error::Overflow { .. }) => {
                        out.push(f64::INFINITY);
                        max.push(f64::INFINITY);
                    }
                    Err(e) => return Err(e),
                }
            }
            Ok((out, max))
        })
        .collect::<Result<_>>()?;
    let (output, max) = rows.into_iter().unzip();
    Ok(ProbeResult {
        depths: cfg.depths.clone(),
        output,
        max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coarse_is_sum_of_fine() {
        let g = BrownianGrid::sample(3, 5, 16, 11).unwrap();
        let e = 9;
        for k in 0..5 {
            for i in 0..e {
                let mut acc = 0.0;
                for j in 0..16 {
                    acc += g.fine()[(k * 16 + j) * e + i];
                }
                assert_eq!(acc, g.coarse()[k * e + i]);
            }
        }
    }

    #[test]
    fn finer_grid_extends_coarser_one() {
        let a = BrownianGrid::sample(2, 4, 16, 3).unwrap();
        let b = BrownianGrid::sample(2, 4, 32, 3).unwrap();
        for k in 0..64 {
            for e in 0..4 {
                let pair = b.fine()[2 * k * 4 + e] + b.fine()[(2 * k + 1) * 4 + e];
                assert!((pair - a.fine()[k * 4 + e]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_diffusion_is_constant() {
        let g = BrownianGrid::sample(4, 8, 16, 1).unwrap();
        let h0 = [1.0, 2.0, 3.0, 4.0];
        let t = euler_maruyama_res1(4, Activation::Zero, g.fine(), &h0).unwrap();
        assert_eq!(t.last(), &h0);
    }

    #[test]
    fn one_scalar_step() {
        let b = 0.37;
        let t = euler_maruyama_res1(1, Activation::Identity, &[b], &[1.0]).unwrap();
        assert!((t.last()[0] - (1.0 + 2.0_f64.sqrt() * b)).abs() < 1e-15);
    }

    #[test]
    fn fit_recovers_exact_power_law() {
        let depths = vec![8, 16, 32, 64];
        let errors: Vec<f64> = depths.iter().map(|&l| 3.0 * (l as f64).powf(-0.5)).collect();
        let fit = RateFit::fit(depths, errors, vec![0.0; 4]).unwrap();
        assert!((fit.slope.unwrap() + 0.5).abs() < 1e-12);
        assert!((fit.intercept.unwrap() - 3.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn too_few_depths() {
        assert_eq!(
            RateFit::fit(vec![1, 2, 3], vec![1.0; 3], vec![0.0; 3]).unwrap_err(),
            Error::InsufficientDepths { required: 4, actual: 3 }
        );
    }

    #[test]
    fn zero_errors_are_degenerate() {
        let fit = RateFit::fit(vec![1, 2, 3, 4], vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert!(fit.is_degenerate());
    }
}
