use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::descriptive::median;
use super::montecarlo::{trial_inputs, STREAM_WEIGHTS};
use super::regime::{Regime, RegimeThresholds};
use crate::init::{weight_source, FbmSpec, InitScheme};
use crate::model::{ModelSpec, ScalingRule};
use crate::rng::derive_seed;
use crate::sensitivity::forward_backward;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapConfig {
    pub model: ModelSpec,
    pub fbm: FbmSpec,
    pub hursts: Vec<f64>,
    pub betas: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub thresholds: RegimeThresholds,
}

/// Median `log10` ratios per `(H, β)` cell, `[h][β]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub hursts: Vec<f64>,
    pub betas: Vec<f64>,
    pub output: Vec<Vec<f64>>,
    pub gradient: Vec<Vec<f64>>,
    pub overflow: Vec<Vec<usize>>,
    pub trials: usize,
    pub thresholds: RegimeThresholds,
}

impl HeatmapGrid {
    pub fn output_label(&self, h: usize, b: usize) -> Regime {
        self.thresholds.label(self.output[h][b])
    }

    pub fn gradient_label(&self, h: usize, b: usize) -> Regime {
        self.thresholds.label(self.gradient[h][b])
    }

    /// Fraction of cells where both panels give the same label.
    pub fn label_agreement(&self) -> f64 {
        let mut same = 0;
        let mut total = 0;
        for h in 0..self.hursts.len() {
            for b in 0..self.betas.len() {
                total += 1;
                same += usize::from(self.output_label(h, b) == self.gradient_label(h, b));
            }
        }
        same as f64 / total as f64
    }

    /// β at which the median output `log10` ratio for Hurst row `h` first
    /// drops below zero.
    pub fn output_crossing(&self, h: usize) -> Option<f64> {
        zero_crossing(&self.betas, &self.output[h])
    }
}

/// First downward zero crossing of `ys` along ascending `xs`, linearly
/// interpolated. Non-finite neighbours snap the crossing to the finite side.
pub fn zero_crossing(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if ys.first().is_some_and(|&y| y < 0.0) {
        return xs.first().copied();
    }
    for i in 0..ys.len().saturating_sub(1) {
        let (y0, y1) = (ys[i], ys[i + 1]);
        if y0 >= 0.0 && y1 < 0.0 {
            if !y0.is_finite() {
                return Some(xs[i + 1]);
            }
            if !y1.is_finite() {
                return Some(xs[i]);
            }
            return Some(xs[i] + (xs[i + 1] - xs[i]) * y0 / (y0 - y1));
        }
    }
    None
}

/// Per trial and Hurst index, one fGn weight tape is reused across every β,
/// and trial `t` shares its data, projections and Gaussian draws across all H.
pub fn heatmap_sweep(cfg: &HeatmapConfig) -> Result<HeatmapGrid> {
    if cfg.hursts.is_empty() || cfg.betas.is_empty() {
        return Err(Error::invalid("grid", "Hurst and β grids must be non-empty"));
    }
    if cfg.trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    for &b in &cfg.betas {
        ScalingRule::Beta(b).validate()?;
    }
    let model = &cfg.model;
    let jobs: Vec<(usize, usize)> = (0..cfg.hursts.len())
        .flat_map(|h| (0..cfg.trials).map(move |t| (h, t)))
        .collect();
    let cells: Vec<Vec<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(h, trial)| {
            let trial_seed = derive_seed(cfg.seed, &[trial as u64]);
            let (x, proj, y) = trial_inputs(model, trial_seed);
            let scheme = InitScheme::Fbm(FbmSpec {
                hurst: cfg.hursts[h],
                ..cfg.fbm
            });
            let source = weight_source(model, &scheme, derive_seed(trial_seed, &[STREAM_WEIGHTS]))?;
            cfg.betas
                .iter()
                .map(|&b| match forward_backward(model, &source, &proj, &x, &y, &ScalingRule::Beta(b)) {
                    Ok(s) => Ok((s.output_ratio, s.gradient_ratio)),
                    Err(Error::Overflow { .. }) => Ok((f64::INFINITY, f64::INFINITY)),
                    Err(e) => Err(e),
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let nb = cfg.betas.len();
    let mut output = vec![vec![0.0; nb]; cfg.hursts.len()];
    let mut gradient = output.clone();
    let mut overflow = vec![vec![0; nb]; cfg.hursts.len()];
    for h in 0..cfg.hursts.len() {
        let rows = &cells[h * cfg.trials..(h + 1) * cfg.trials];
        for b in 0..nb {
            let out: Vec<f64> = rows.iter().map(|r| r[b].0.log10()).collect();
            let grad: Vec<f64> = rows.iter().map(|r| r[b].1.log10()).collect();
            output[h][b] = median(&out);
            gradient[h][b] = median(&grad);
            overflow[h][b] = rows.iter().filter(|r| r[b].0.is_infinite()).count();
        }
    }
    Ok(HeatmapGrid {
        hursts: cfg.hursts.clone(),
        betas: cfg.betas.clone(),
        output,
        gradient,
        overflow,
        trials: cfg.trials,
        thresholds: cfg.thresholds,
    })
}
