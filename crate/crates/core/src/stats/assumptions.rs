use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bounds::{coverage_report, expectation_report, BoundKind, BoundReport, BoundStatus, SLACK};
use crate::init::{
    fgn_autocovariance, sample_fgn, sample_iid_matrix, Distribution, DistributionSpec, FbmSpec, LayerParams,
};
use crate::linalg::{dot, matvec, norm};
use crate::model::{g_apply, Activation, Arch, ModelSpec};
use crate::rng::{derive_seed, Stream};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConfig {
    pub arch: Arch,
    pub distribution: Distribution,
    pub width: usize,
    /// Negative-side slope for res-1/res-2.
    pub slope: f64,
    pub trials: usize,
    pub seed: u64,
    pub tail_points: Vec<f64>,
}

impl AssumptionConfig {
    pub fn new(arch: Arch, distribution: Distribution, width: usize, trials: usize, seed: u64) -> Self {
        Self {
            arch,
            distribution,
            width,
            slope: ModelSpec::MIN_SLOPE,
            trials,
            seed,
            tail_points: vec![0.1, 0.2, 0.5],
        }
    }
}

struct Draw {
    envelope: f64,
    halving: f64,
    second_moment: f64,
    linear_form: f64,
}

fn draw(cfg: &AssumptionConfig, dist: &DistributionSpec, trial: usize) -> Result<Draw> {
    let d = cfg.width;
    let mut s = Stream::derived(cfg.seed, &[trial as u64]);
    let h = s.gaussian_vec(d);
    let w = sample_iid_matrix(dist, &mut s);
    let v = sample_iid_matrix(dist, &mut s);
    let y = s.gaussian_vec(d);
    let hn2 = dot(&h, &h);

    let model = ModelSpec::new(cfg.arch, d, 1).with_slope(cfg.slope);
    let params = LayerParams {
        v: v.clone(),
        w: cfg.arch.has_w().then(|| w.clone()),
    };
    let g = g_apply(&model, &params, &h)?;

    let mut wh = vec![0.0; d];
    matvec(&w, &h, &mut wh);
    let relu: f64 = wh.iter().map(|&u| Activation::Relu.apply(u).powi(2)).sum();

    let mut vh = vec![0.0; d];
    matvec(&v, &h, &mut vh);
    Ok(Draw {
        envelope: dot(&g, &g) / hn2,
        halving: relu / hn2,
        second_moment: dot(&wh, &wh) / (dist.variance() * d as f64 * hn2),
        linear_form: dot(&vh, &y) / (hn2.sqrt() * norm(&y)),
    })
}

/// Monte Carlo checks of the per-layer moment and tail statements the depth
/// results rest on.
pub fn check_assumption_suite(cfg: &AssumptionConfig) -> Result<Vec<BoundReport>> {
    if cfg.trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    let dist = DistributionSpec::new(cfg.distribution, cfg.width)?;
    let draws: Vec<Draw> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| draw(cfg, &dist, t))
        .collect::<Result<_>>()?;
    let col = |f: fn(&Draw) -> f64| draws.iter().map(f).collect::<Vec<f64>>();
    let mut out = vec![
        expectation_report("g_norm_envelope", 0.5, 1.0, &col(|d| d.envelope)),
        expectation_report("relu_halving", 0.5, 0.5, &col(|d| d.halving)),
        expectation_report("matrix_second_moment", 1.0, 1.0, &col(|d| d.second_moment)),
    ];
    let forms = col(|d| d.linear_form);
    let s = dist.sub_gaussian_constant();
    for &t in &cfg.tail_points {
        let bound = (2.0 * (-(cfg.width as f64) * t * t / (4.0 * s * s)).exp()).min(1.0);
        let covered = forms.iter().filter(|&&x| x < t).count();
        let mut r = coverage_report(
            &format!("linear_form_tail_t{t}"),
            f64::NEG_INFINITY,
            t,
            covered,
            forms.len(),
            1.0 - bound,
        );
        r.note = Some(format!("tail bound {bound:.6e}"));
        out.push(r);
    }
    Ok(out)
}

/// Mean per-sequence lag-1 autocorrelation of `sequences` fGn draws against
/// `γ(1)`, with tolerance `3/√N`.
pub fn check_fgn_autocorrelation(hurst: f64, len: usize, sequences: usize, seed: u64) -> Result<BoundReport> {
    if len < 2 || sequences == 0 {
        return Err(Error::invalid("fgn check", "needs len ≥ 2 and at least one sequence"));
    }
    let spec = FbmSpec::new(hurst);
    let rs: Vec<f64> = (0..sequences)
        .into_par_iter()
        .map(|i| {
            let x = sample_fgn(len, &spec, &mut Stream::new(derive_seed(seed, &[i as u64])))?;
            Ok(dot(&x[..len - 1], &x[1..]) / dot(&x, &x))
        })
        .collect::<Result<_>>()?;
    let m = rs.iter().sum::<f64>() / sequences as f64;
    let target = fgn_autocovariance(hurst, 1);
    let tol = 1.0 / (sequences as f64).sqrt();
    Ok(BoundReport {
        id: format!("fgn_lag1_h{hurst}"),
        kind: BoundKind::Expectation,
        lower: target,
        upper: target,
        statistic: m,
        std_error: tol,
        n: sequences,
        status: if (m - target).abs() <= SLACK * tol {
            BoundStatus::Pass
        } else {
            BoundStatus::Fail
        },
        note: None,
    })
}
