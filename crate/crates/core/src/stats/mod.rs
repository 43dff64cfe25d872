//! Monte Carlo estimation, bound verification, distribution tests, regime
//! labels and the (Hurst, β) sweep.

mod assumptions;
mod bounds;
mod descriptive;
mod heatmap;
mod montecarlo;
mod normality;
mod rank;
mod regime;

pub use assumptions::{check_assumption_suite, check_fgn_autocorrelation, AssumptionConfig};
pub use bounds::{
    binomial_std_error, check_critical_bounds, check_expectation_bracket, check_gradient_bracket,
    check_highprob_bounds, check_identity_bound, coverage_report, expectation_bracket,
    expectation_report,
    BoundKind, BoundReport, BoundStatus, SLACK,
};
pub use descriptive::{mean, mean_and_std_error, median, quantile, variance};
pub use heatmap::{heatmap_sweep, zero_crossing, HeatmapConfig, HeatmapGrid};
pub use montecarlo::{
    config_fingerprint, monte_carlo, monte_carlo_ratios, run_trial, MonteCarloRun, Quantity,
    RatioSample, TrialConfig, TrialOutcome,
};
pub use normality::{dagostino_k2, lognormality_test, NormalityTest};
pub use rank::{ranks, spearman, spearman_trend, TrendTest};
pub use regime::{classify_regime, classify_values, Regime, RegimeLabel, RegimeThresholds};
