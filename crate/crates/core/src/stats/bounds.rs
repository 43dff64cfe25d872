use serde::{Deserialize, Serialize};

use super::descriptive::mean_and_std_error;
use super::montecarlo::{monte_carlo, Quantity, RatioSample, TrialConfig};
use crate::model::{ModelSpec, ScalingRule};
use crate::Result;

/// Number of standard errors of Monte Carlo slack.
pub const SLACK: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum BoundKind {
    /// The statistic is a sample mean compared with `[lower, upper]`.
    Expectation,
    /// The statistic is the fraction of trials inside `[lower, upper]`.
    Coverage { nominal: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Pass,
    Fail,
    NotApplicable,
}

impl BoundStatus {
    pub fn name(self) -> &'static str {
        match self {
            BoundStatus::Pass => "PASS",
            BoundStatus::Fail => "FAIL",
            BoundStatus::NotApplicable => "N/A",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub id: String,
    pub kind: BoundKind,
    pub lower: f64,
    pub upper: f64,
    pub statistic: f64,
    pub std_error: f64,
    pub n: usize,
    pub status: BoundStatus,
    pub note: Option<String>,
}

impl BoundReport {
    pub fn passed(&self) -> bool {
        self.status == BoundStatus::Pass
    }

    fn not_applicable(id: &str, kind: BoundKind, note: impl Into<String>) -> Self {
        Self {
            id: id.to_string(),
            kind,
            lower: f64::NAN,
            upper: f64::NAN,
            statistic: f64::NAN,
            std_error: f64::NAN,
            n: 0,
            status: BoundStatus::NotApplicable,
            note: Some(note.into()),
        }
    }
}

pub fn binomial_std_error(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Pass iff the sample mean lies in `[lower − 3 SE, upper + 3 SE]`.
pub fn expectation_report(id: &str, lower: f64, upper: f64, samples: &[f64]) -> BoundReport {
    let (m, se) = mean_and_std_error(samples);
    let ok = m >= lower - SLACK * se && m <= upper + SLACK * se;
    BoundReport {
        id: id.to_string(),
        kind: BoundKind::Expectation,
        lower,
        upper,
        statistic: m,
        std_error: se,
        n: samples.len(),
        status: if ok { BoundStatus::Pass } else { BoundStatus::Fail },
        note: None,
    }
}

/// Pass iff `covered / n ≥ nominal − 3 · binomial SE(nominal)`.
pub fn coverage_report(id: &str, lower: f64, upper: f64, covered: usize, n: usize, nominal: f64) -> BoundReport {
    let frac = covered as f64 / n as f64;
    let se = binomial_std_error(nominal, n);
    BoundReport {
        id: id.to_string(),
        kind: BoundKind::Coverage { nominal },
        lower,
        upper,
        statistic: frac,
        std_error: se,
        n,
        status: if frac >= nominal - SLACK * se {
            BoundStatus::Pass
        } else {
            BoundStatus::Fail
        },
        note: None,
    }
}

/// `[(1 + α²/2)^L − 1, (1 + α²)^L − 1]`.
pub fn expectation_bracket(depth: usize, alpha: f64) -> (f64, f64) {
    let l = depth as f64;
    let a2 = alpha * alpha;
    (
        ((0.5 * a2).ln_1p() * l).exp_m1(),
        (a2.ln_1p() * l).exp_m1(),
    )
}

fn with_overflow_note(mut r: BoundReport, overflow: usize) -> BoundReport {
    if overflow > 0 {
        r.note = Some(format!("{overflow} overflowed trials excluded"));
    }
    r
}

/// Mean of `‖h_L − h_0‖²/‖h_0‖²` against the expectation bracket.
pub fn check_expectation_bracket(cfg: &TrialConfig, trials: usize, seed: u64) -> Result<BoundReport> {
    let run = monte_carlo(cfg, trials, seed)?;
    let sample = run.sample(Quantity::OutputRatio)?;
    let (lo, hi) = expectation_bracket(cfg.model.depth, cfg.rule.alpha(cfg.model.depth));
    Ok(with_overflow_note(
        expectation_report("output_expectation_bracket", lo, hi, &sample.squares()),
        sample.overflow,
    ))
}

/// Mean of `‖p_0 − p_L‖²/‖p_L‖²` against the expectation bracket and, when
/// `L α² = 1`, against `[e^{1/2} − 1, e⁴ − 1]`.
pub fn check_gradient_bracket(cfg: &TrialConfig, trials: usize, seed: u64) -> Result<Vec<BoundReport>> {
    let mut cfg = cfg.clone();
    cfg.gradients = true;
    let sample = monte_carlo(&cfg, trials, seed)?.sample(Quantity::GradientRatio)?;
    let depth = cfg.model.depth;
    let alpha = cfg.rule.alpha(depth);
    let squares = sample.squares();
    let (lo, hi) = expectation_bracket(depth, alpha);
    let mut out = vec![with_overflow_note(
        expectation_report("gradient_expectation_bracket", lo, hi, &squares),
        sample.overflow,
    )];
    if is_critical(depth, alpha) {
        out.push(with_overflow_note(
            expectation_report(
                "gradient_critical_bracket",
                0.5_f64.exp_m1(),
                4.0_f64.exp_m1(),
                &squares,
            ),
            sample.overflow,
        ));
    }
    Ok(out)
}

fn is_critical(depth: usize, alpha: f64) -> bool {
    (depth as f64 * alpha * alpha - 1.0).abs() < 1e-9
}

/// `P(ratio² ≤ 2Lα²/δ) ≥ 1 − δ` whenever `L α² ≤ 1`. `+∞` never counts as covered.
pub fn check_identity_bound(id: &str, values: &[f64], depth: usize, alpha: f64, delta: f64) -> BoundReport {
    let kind = BoundKind::Coverage { nominal: 1.0 - delta };
    if !(delta > 0.0 && delta < 1.0) {
        return BoundReport::not_applicable(id, kind, "vacuous unless 0 < δ < 1");
    }
    let la2 = depth as f64 * alpha * alpha;
    if la2 > 1.0 {
        return BoundReport::not_applicable(id, kind, "requires L α² ≤ 1");
    }
    let upper = 2.0 * la2 / delta;
    let covered = values.iter().filter(|&&v| v * v <= upper).count();
    coverage_report(id, 0.0, upper, covered, values.len(), 1.0 - delta)
}

/// Two-sided bound at `β = 1/2`:
/// `exp(3/8 − √(22/(dδ))) − 1 < ratio² < exp(1 + √(10/(dδ))) + 1`.
pub fn check_critical_bounds(values: &[f64], width: usize, depth: usize, delta: f64) -> BoundReport {
    const ID: &str = "output_critical_two_sided";
    const S: f64 = 1.0;
    let kind = BoundKind::Coverage { nominal: 1.0 - delta };
    if !(delta > 0.0 && delta < 1.0) {
        return BoundReport::not_applicable(ID, kind, "vacuous unless 0 < δ < 1");
    }
    if width < 64 {
        return BoundReport::not_applicable(ID, kind, "requires d ≥ 64");
    }
    let (l, d) = (depth as f64, width as f64);
    if 2.0 * l * (-l * d / (64.0 * S * S)).exp() > delta / 11.0 {
        return BoundReport::not_applicable(ID, kind, "requires 2L exp(−Ld/(64s²)) ≤ δ/11");
    }
    let lower = (0.375 - (22.0 / (d * delta)).sqrt()).exp() - 1.0;
    let upper = (1.0 + (10.0 / (d * delta)).sqrt()).exp() + 1.0;
    let covered = values
        .iter()
        .filter(|&&v| {
            let r2 = v * v;
            lower < r2 && r2 < upper
        })
        .count();
    let mut r = coverage_report(ID, lower, upper, covered, values.len(), 1.0 - delta);
    r.note = Some("depth condition involving the moment constant C not checked".into());
    r
}

/// All high-probability statements applicable to an output-ratio sample.
pub fn check_highprob_bounds(
    sample: &RatioSample,
    model: &ModelSpec,
    rule: &ScalingRule,
    delta: f64,
) -> Vec<BoundReport> {
    let depth = model.depth;
    let alpha = rule.alpha(depth);
    let mut out = vec![check_identity_bound(
        "output_identity_bound",
        &sample.values,
        depth,
        alpha,
        delta,
    )];
    if is_critical(depth, alpha) {
        out.push(check_critical_bounds(&sample.values, model.width, depth, delta));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_values() {
        let (lo, hi) = expectation_bracket(100, 0.05);
        assert!((lo - (1.00125_f64.powi(100) - 1.0)).abs() < 1e-12);
        assert!((hi - (1.0025_f64.powi(100) - 1.0)).abs() < 1e-12);
        assert_eq!(expectation_bracket(10, 0.0), (0.0, 0.0));
    }

    #[test]
    fn coverage_slack() {
        // nominal 0.9, n = 100: SE = 0.03, threshold 0.81.
        assert!(coverage_report("x", 0.0, 1.0, 81, 100, 0.9).passed());
        assert!(!coverage_report("x", 0.0, 1.0, 80, 100, 0.9).passed());
    }

    #[test]
    fn delta_one_is_not_applicable() {
        let r = check_identity_bound("x", &[0.1; 10], 100, 0.01, 1.0);
        assert_eq!(r.status, BoundStatus::NotApplicable);
        let r = check_critical_bounds(&[1.0; 10], 100, 1000, 1.0);
        assert_eq!(r.status, BoundStatus::NotApplicable);
        let r = check_critical_bounds(&[1.0; 10], 40, 1000, 0.1);
        assert_eq!(r.status, BoundStatus::NotApplicable);
    }
}
