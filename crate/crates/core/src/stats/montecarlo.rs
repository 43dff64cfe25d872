use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::init::{weight_source, InitScheme};
use crate::model::{forward, ModelSpec, Projections, ScalingRule};
use crate::rng::{derive_seed, Stream};
use crate::sensitivity::forward_backward;
use crate::{Error, Result};

/// Everything that defines one Monte Carlo trial apart from its seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub model: ModelSpec,
    pub scheme: InitScheme,
    pub rule: ScalingRule,
    /// Also run the backward pass.
    pub gradients: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quantity {
    /// `‖h_L − h_0‖ / ‖h_0‖`
    OutputRatio,
    /// `‖h_L‖ / ‖h_0‖`
    OutputNormRatio,
    /// `‖p_0 − p_L‖ / ‖p_L‖`
    GradientRatio,
}

impl Quantity {
    pub fn name(self) -> &'static str {
        match self {
            Quantity::OutputRatio => "output_ratio",
            Quantity::OutputNormRatio => "output_norm_ratio",
            Quantity::GradientRatio => "gradient_ratio",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrialOutcome {
    Finished {
        output_ratio: f64,
        norm_ratio: f64,
        gradient_ratio: Option<f64>,
    },
    Overflow {
        layer: usize,
    },
}

impl TrialOutcome {
    /// `+∞` for overflowed trials, `None` if the quantity was not computed.
    pub fn get(&self, q: Quantity) -> Option<f64> {
        match *self {
            TrialOutcome::Finished {
                output_ratio,
                norm_ratio,
                gradient_ratio,
            } => match q {
                Quantity::OutputRatio => Some(output_ratio),
                Quantity::OutputNormRatio => Some(norm_ratio),
                Quantity::GradientRatio => gradient_ratio,
            },
            TrialOutcome::Overflow { .. } => Some(f64::INFINITY),
        }
    }
}

/// Sub-stream indices under a trial seed.
pub(crate) const STREAM_DATA: u64 = 0;
pub(crate) const STREAM_PROJ: u64 = 1;
pub(crate) const STREAM_WEIGHTS: u64 = 2;
pub(crate) const STREAM_TARGET: u64 = 3;

/// Input `x ~ N(0, I)`, projections, and target `y ~ N(0, I)` of a trial.
pub(crate) fn trial_inputs(model: &ModelSpec, trial_seed: u64) -> (Vec<f64>, Projections, Vec<f64>) {
    let x = Stream::derived(trial_seed, &[STREAM_DATA]).gaussian_vec(model.n_in);
    let proj = Projections::sample(model, &mut Stream::derived(trial_seed, &[STREAM_PROJ]));
    let y = Stream::derived(trial_seed, &[STREAM_TARGET]).gaussian_vec(model.n_out);
    (x, proj, y)
}

/// One independent draw of data, projections and weights.
pub fn run_trial(cfg: &TrialConfig, master_seed: u64, trial: usize) -> Result<TrialOutcome> {
    let trial_seed = derive_seed(master_seed, &[trial as u64]);
    let (x, proj, y) = trial_inputs(&cfg.model, trial_seed);
    let source = weight_source(
        &cfg.model,
        &cfg.scheme,
        derive_seed(trial_seed, &[STREAM_WEIGHTS]),
    )?;
    let outcome = if cfg.gradients {
        forward_backward(&cfg.model, &source, &proj, &x, &y, &cfg.rule).map(|s| {
            TrialOutcome::Finished {
                output_ratio: s.output_ratio,
                norm_ratio: s.norm_ratio,
                gradient_ratio: Some(s.gradient_ratio),
            }
        })
    } else {
        forward(&cfg.model, &source, &proj, &x, &cfg.rule).and_then(|t| {
            Ok(TrialOutcome::Finished {
                output_ratio: t.output_ratio()?,
                norm_ratio: t.norm_ratio()?,
                gradient_ratio: None,
            })
        })
    };
    match outcome {
        Err(Error::Overflow { layer }) => Ok(TrialOutcome::Overflow { layer }),
        other => other,
    }
}

/// Per-trial outcomes in trial order.
#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloRun {
    pub config: TrialConfig,
    pub master_seed: u64,
    pub outcomes: Vec<TrialOutcome>,
}

impl MonteCarloRun {
    pub fn overflow_count(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, TrialOutcome::Overflow { .. }))
            .count()
    }

    pub fn sample(&self, quantity: Quantity) -> Result<RatioSample> {
        let values = self
            .outcomes
            .iter()
            .map(|o| {
                o.get(quantity)
                    .ok_or_else(|| Error::invalid("quantity", format!("{} was not computed", quantity.name())))
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(RatioSample {
            quantity,
            trials: values.len(),
            overflow: self.overflow_count(),
            fingerprint: config_fingerprint(&self.config),
            values,
        })
    }
}

/// Runs `trials` independent trials on the current rayon pool. The result does
/// not depend on the number of worker threads.
pub fn monte_carlo(cfg: &TrialConfig, trials: usize, master_seed: u64) -> Result<MonteCarloRun> {
    if trials == 0 {
        return Err(Error::invalid("trials", "must be at least 1"));
    }
    cfg.rule.validate()?;
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, master_seed, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloRun {
        config: cfg.clone(),
        master_seed,
        outcomes,
    })
}

pub fn monte_carlo_ratios(
    cfg: &TrialConfig,
    quantity: Quantity,
    trials: usize,
    master_seed: u64,
) -> Result<RatioSample> {
    let mut cfg = cfg.clone();
    cfg.gradients |= quantity == Quantity::GradientRatio;
    monte_carlo(&cfg, trials, master_seed)?.sample(quantity)
}

/// One ratio per trial; overflowed trials hold `+∞`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioSample {
    pub quantity: Quantity,
    pub values: Vec<f64>,
    pub overflow: usize,
    pub fingerprint: String,
    pub trials: usize,
}

impl RatioSample {
    pub fn finite(&self) -> Vec<f64> {
        self.values.iter().copied().filter(|v| v.is_finite()).collect()
    }

    pub fn squares(&self) -> Vec<f64> {
        self.values
            .iter()
            .filter(|v| v.is_finite())
            .map(|v| v * v)
            .collect()
    }
}

/// First 16 hex digits of the SHA-256 of the JSON encoding.
pub fn config_fingerprint<T: Serialize>(config: &T) -> String {
    let json = serde_json::to_vec(config).expect("config serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::Distribution;
    use crate::model::Arch;

    fn cfg(rule: ScalingRule) -> TrialConfig {
        TrialConfig {
            model: ModelSpec::new(Arch::Res3, 8, 20).with_io(5, 1),
            scheme: InitScheme::iid(Distribution::UniformScaled),
            rule,
            gradients: true,
        }
    }

    #[test]
    fn alpha_zero_gives_zero_ratios() {
        let s = monte_carlo_ratios(&cfg(ScalingRule::Alpha(0.0)), Quantity::OutputRatio, 10, 1).unwrap();
        assert!(s.values.iter().all(|&v| v == 0.0));
        assert_eq!(s.trials, 10);
    }

    #[test]
    fn single_trial_is_reproducible() {
        let c = cfg(ScalingRule::Beta(0.5));
        let a = monte_carlo_ratios(&c, Quantity::GradientRatio, 1, 42).unwrap();
        let b = monte_carlo_ratios(&c, Quantity::GradientRatio, 1, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.values[0] > 0.0);
    }

    #[test]
    fn fingerprint_tracks_config() {
        let a = config_fingerprint(&cfg(ScalingRule::Beta(0.5)));
        assert_eq!(a.len(), 16);
        assert_eq!(a, config_fingerprint(&cfg(ScalingRule::Beta(0.5))));
        assert_ne!(a, config_fingerprint(&cfg(ScalingRule::Beta(1.0))));
    }

    #[test]
    fn overflow_is_counted_not_fatal() {
        let c = TrialConfig {
            model: ModelSpec::new(Arch::Res1, 4, 400).with_slope(1.0),
            scheme: InitScheme::iid(Distribution::GaussianScaled),
            rule: ScalingRule::Alpha(200.0),
            gradients: false,
        };
        let s = monte_carlo_ratios(&c, Quantity::OutputRatio, 3, 0).unwrap();
        assert_eq!(s.overflow, 3);
        assert!(s.values.iter().all(|v| v.is_infinite()));
        assert!(s.finite().is_empty());
    }
}
