use serde::{Deserialize, Serialize};

use super::descriptive::median;
use super::montecarlo::RatioSample;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    Identity,
    Critical,
    Explosion,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Identity => "identity",
            Regime::Critical => "critical",
            Regime::Explosion => "explosion",
        }
    }
}

/// Bounds on the median `log10` ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeThresholds {
    pub identity_below: f64,
    pub explosion_above: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self {
            identity_below: -1.0,
            explosion_above: 1.0,
        }
    }
}

impl RegimeThresholds {
    pub fn label(&self, median_log10: f64) -> Regime {
        if median_log10 < self.identity_below {
            Regime::Identity
        } else if median_log10 > self.explosion_above {
            Regime::Explosion
        } else {
            Regime::Critical
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub regime: Regime,
    pub median_log10: f64,
    pub thresholds: RegimeThresholds,
}

/// Labels raw per-trial ratios; `+∞` (overflow) counts toward the median.
pub fn classify_values(values: &[f64], thresholds: RegimeThresholds) -> Result<RegimeLabel> {
    const MIN: usize = 30;
    if values.len() < MIN {
        return Err(Error::InsufficientSamples {
            required: MIN,
            actual: values.len(),
        });
    }
    let logs: Vec<f64> = values.iter().map(|v| v.log10()).collect();
    let m = median(&logs);
    Ok(RegimeLabel {
        regime: thresholds.label(m),
        median_log10: m,
        thresholds,
    })
}

pub fn classify_regime(sample: &RatioSample, thresholds: RegimeThresholds) -> Result<RegimeLabel> {
    classify_values(&sample.values, thresholds)
}
