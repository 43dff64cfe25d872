//! Dispatch from an [`ExperimentConfig`] to the core library.

use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use reslab_core::continuum::{
    ode_error_vs_depth, smooth_regime_probe, strong_error_sde, OdeConfig, ProbeConfig, RateFit, SdeConfig,
};
use reslab_core::init::Distribution;
use reslab_core::stats::{
    check_assumption_suite, check_expectation_bracket, check_fgn_autocorrelation, check_gradient_bracket,
    check_highprob_bounds, config_fingerprint, heatmap_sweep, lognormality_test, mean_and_std_error, median,
    monte_carlo, quantile, spearman_trend, AssumptionConfig, BoundKind, BoundReport, BoundStatus, HeatmapConfig,
    MonteCarloRun, Quantity, RegimeThresholds, TrialConfig,
};
use reslab_core::{derive_seed, Arch, ModelSpec, ScalingRule};

use crate::config::{Experiment, ExperimentConfig, InitKind};
use crate::output::{to_csv, write_outputs, Manifest, Record};

pub struct RunOutcome {
    pub records: Vec<Record>,
    pub fingerprint: String,
    pub csv: String,
    /// Number of failed checks (only `validate` produces any).
    pub failures: usize,
}

/// Computes all records on a pool of `workers` threads.
pub fn execute(cfg: &ExperimentConfig, workers: usize) -> Result<RunOutcome> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .context("cannot start worker pool")?;
    let records = pool.install(|| dispatch(cfg))?;
    let fingerprint = config_fingerprint(cfg);
    let failures = records.iter().filter(|r| r.status == "FAIL").count();
    let csv = to_csv(&fingerprint, cfg.experiment.name(), &records);
    Ok(RunOutcome {
        records,
        fingerprint,
        csv,
        failures,
    })
}

/// [`execute`], then writes `results.csv` and `manifest.json` under `out`.
pub fn run(cfg: &ExperimentConfig, workers: usize, out: &Path) -> Result<RunOutcome> {
    let start = Instant::now();
    let outcome = execute(cfg, workers)?;
    let manifest = Manifest {
        config: cfg.clone(),
        fingerprint: outcome.fingerprint.clone(),
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        core_version: reslab_core::VERSION.to_string(),
        platform: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
        workers,
        rows: outcome.records.len(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
        results: "results.csv".to_string(),
    };
    write_outputs(out, &outcome.csv, &manifest)?;
    Ok(outcome)
}

fn dispatch(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    match cfg.experiment {
        Experiment::Norms => sweep(cfg, false),
        Experiment::Gradients => sweep(cfg, true),
        Experiment::Distribution => distribution(cfg),
        Experiment::Heatmap => heatmap(cfg),
        Experiment::SdeConvergence => sde(cfg),
        Experiment::OdeConvergence => ode(cfg),
        Experiment::Regimes => regimes(cfg),
        Experiment::Validate => validate(cfg),
    }
}

fn trial_config(cfg: &ExperimentConfig, depth: usize, beta: f64, gradients: bool) -> TrialConfig {
    TrialConfig {
        model: cfg.model(depth),
        scheme: cfg.scheme(),
        rule: ScalingRule::Beta(beta),
        gradients,
    }
}

/// Trials at one depth share their seed across β.
fn depth_seed(cfg: &ExperimentConfig, depth: usize) -> u64 {
    derive_seed(cfg.seed, &[depth as u64])
}

fn summary_rows(q: Quantity, values: &[f64], overflow: usize, base: &Record) -> Vec<Record> {
    let mut out = Vec::new();
    let n = values.len();
    for (stat, p) in [("q1", 0.25), ("median", 0.5), ("q3", 0.75)] {
        out.push(Record {
            quantity: q.name().into(),
            statistic: stat.into(),
            ..base.clone()
        }
        .trials(n)
        .overflow(overflow)
        .value(quantile(values, p)));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if !finite.is_empty() {
        let (m, se) = mean_and_std_error(&finite);
        out.push(
            Record {
                quantity: q.name().into(),
                statistic: "mean".into(),
                ..base.clone()
            }
            .trials(finite.len())
            .overflow(overflow)
            .std_error(se)
            .value(m),
        );
    }
    out
}

fn trial_rows(run: &MonteCarloRun, q: Quantity, base: &Record) -> Result<(Vec<Record>, Vec<f64>)> {
    let sample = run.sample(q)?;
    let mut rows: Vec<Record> = sample
        .values
        .iter()
        .enumerate()
        .map(|(t, &v)| {
            Record {
                quantity: q.name().into(),
                statistic: "value".into(),
                ..base.clone()
            }
            .trial(t)
            .value(v)
        })
        .collect();
    rows.extend(summary_rows(q, &sample.values, sample.overflow, base));
    Ok((rows, sample.values))
}

fn sweep(cfg: &ExperimentConfig, gradients: bool) -> Result<Vec<Record>> {
    let quantities: &[Quantity] = if gradients {
        &[Quantity::GradientRatio, Quantity::OutputRatio]
    } else {
        &[Quantity::OutputRatio, Quantity::OutputNormRatio]
    };
    let mut rows = Vec::new();
    for &beta in &cfg.betas {
        for &depth in &cfg.depths {
            let run = monte_carlo(&trial_config(cfg, depth, beta, gradients), cfg.trials, depth_seed(cfg, depth))?;
            let base = Record::default().depth(depth).beta(beta);
            for &q in quantities {
                rows.extend(trial_rows(&run, q, &base)?.0);
            }
        }
    }
    Ok(rows)
}

fn distribution(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let (depth, beta) = (cfg.depths[0], cfg.betas[0]);
    let tc = trial_config(cfg, depth, beta, true);
    let run = monte_carlo(&tc, cfg.trials, cfg.seed)?;
    let base = Record::default().depth(depth).beta(beta);
    let mut rows = Vec::new();
    for q in [Quantity::OutputNormRatio, Quantity::OutputRatio, Quantity::GradientRatio] {
        let (r, values) = trial_rows(&run, q, &base)?;
        rows.extend(r);
        if q != Quantity::OutputRatio {
            match lognormality_test(&values) {
                Ok(t) => {
                    let mk = |stat: &str| Record {
                        quantity: q.name().into(),
                        statistic: stat.into(),
                        ..base.clone()
                    }
                    .trials(t.n);
                    rows.push(mk("lognormality_k2").value(t.statistic));
                    rows.push(mk("lognormality_p_value").value(t.p_value));
                }
                Err(e) => rows.push(
                    Record {
                        quantity: q.name().into(),
                        statistic: "lognormality_p_value".into(),
                        ..base.clone()
                    }
                    .status(&format!("skipped: {e}")),
                ),
            }
        }
    }
    let sample = run.sample(Quantity::OutputRatio)?;
    for report in check_highprob_bounds(&sample, &tc.model, &tc.rule, cfg.delta) {
        rows.push(report_row(&report, &base));
    }
    Ok(rows)
}

fn report_row(r: &BoundReport, base: &Record) -> Record {
    let statistic = match r.kind {
        BoundKind::Expectation => "mean",
        BoundKind::Coverage { .. } => "coverage",
    };
    let mut row = Record {
        quantity: r.id.clone(),
        statistic: statistic.into(),
        ..base.clone()
    }
    .trials(r.n)
    .status(r.status.name());
    if r.status != BoundStatus::NotApplicable {
        row = row.value(r.statistic).std_error(r.std_error).bounds(r.lower, r.upper);
    }
    if let Some(note) = &r.note {
        if r.status == BoundStatus::NotApplicable {
            row.status = format!("N/A: {note}");
        }
    }
    row
}

fn heatmap(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let depth = cfg.depths[0];
    let hc = HeatmapConfig {
        model: cfg.model(depth),
        fbm: cfg.fbm(0.5),
        hursts: cfg.hursts.clone(),
        betas: cfg.betas.clone(),
        trials: cfg.trials,
        seed: cfg.seed,
        thresholds: RegimeThresholds::default(),
    };
    let grid = heatmap_sweep(&hc)?;
    let mut rows = Vec::new();
    for (h, &hurst) in grid.hursts.iter().enumerate() {
        for (b, &beta) in grid.betas.iter().enumerate() {
            let base = Record::default()
                .depth(depth)
                .hurst(hurst)
                .beta(beta)
                .trials(grid.trials)
                .overflow(grid.overflow[h][b]);
            rows.push(
                Record {
                    quantity: Quantity::OutputRatio.name().into(),
                    statistic: "median_log10".into(),
                    ..base.clone()
                }
                .status(grid.output_label(h, b).name())
                .value(grid.output[h][b]),
            );
            rows.push(
                Record {
                    quantity: Quantity::GradientRatio.name().into(),
                    statistic: "median_log10".into(),
                    ..base
                }
                .status(grid.gradient_label(h, b).name())
                .value(grid.gradient[h][b]),
            );
        }
        let row = Record::new(Quantity::OutputRatio.name(), "zero_crossing_beta")
            .depth(depth)
            .hurst(hurst)
            .trials(grid.trials);
        rows.push(match grid.output_crossing(h) {
            Some(beta) => row.value(beta),
            None => row.status("no crossing"),
        });
    }
    rows.push(
        Record::new("label_agreement", "fraction")
            .depth(depth)
            .trials(grid.trials)
            .value(grid.label_agreement()),
    );
    Ok(rows)
}

fn fit_rows(fit: &RateFit, trials: usize) -> Vec<Record> {
    let mut rows: Vec<Record> = fit
        .depths
        .iter()
        .zip(&fit.errors)
        .zip(&fit.std_errors)
        .map(|((&l, &e), &se)| {
            Record::new("terminal_error", "mean_strong_error")
                .depth(l)
                .trials(trials)
                .std_error(se)
                .value(e)
        })
        .collect();
    for (stat, v) in [("slope", fit.slope), ("intercept", fit.intercept)] {
        let row = Record::new("terminal_error", stat).trials(trials);
        rows.push(match v {
            Some(v) => row.value(v),
            None => row.status("degenerate"),
        });
    }
    rows
}

fn sde(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let sc = SdeConfig {
        width: cfg.d,
        depths: cfg.depths.clone(),
        refinement: cfg.refinement,
        trials: cfg.trials,
        seed: cfg.seed,
        activation: ModelSpec {
            arch: Arch::Res1,
            ..cfg.model(1)
        }
        .activation(),
    };
    Ok(fit_rows(&strong_error_sde(&sc)?, cfg.trials))
}

fn ode(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let max = *cfg.depths.iter().max().expect("validated non-empty");
    let oc = OdeConfig {
        model: cfg.model(1),
        gp: cfg.gp,
        depths: cfg.depths.clone(),
        reference_steps: Some(cfg.reference_factor * max),
        trials: cfg.trials,
        seed: cfg.seed,
    };
    Ok(fit_rows(&ode_error_vs_depth(&oc)?, cfg.trials))
}

fn regimes(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let thresholds = RegimeThresholds::default();
    let depths: Vec<f64> = cfg.depths.iter().map(|&l| l as f64).collect();
    let mut rows = Vec::new();
    for &beta in &cfg.betas {
        let mut medians = [Vec::new(), Vec::new()];
        let qs = [Quantity::OutputRatio, Quantity::GradientRatio];
        for &depth in &cfg.depths {
            let run = monte_carlo(&trial_config(cfg, depth, beta, true), cfg.trials, depth_seed(cfg, depth))?;
            for (i, q) in qs.into_iter().enumerate() {
                let sample = run.sample(q)?;
                let logs: Vec<f64> = sample.values.iter().map(|v| v.log10()).collect();
                let m = median(&logs);
                medians[i].push(median(&sample.values));
                rows.push(
                    Record::new(q.name(), "median_log10")
                        .depth(depth)
                        .beta(beta)
                        .trials(sample.trials)
                        .overflow(sample.overflow)
                        .status(thresholds.label(m).name())
                        .value(m),
                );
            }
        }
        for (i, q) in qs.into_iter().enumerate() {
            let base = Record::new(q.name(), "").beta(beta).trials(cfg.trials);
            let meds = &medians[i];
            let growth = meds[meds.len() - 1] / meds[0];
            rows.push(Record {
                statistic: "growth_last_over_first".into(),
                ..base.clone()
            }
            .value(growth));
            if let Ok(t) = spearman_trend(&depths, meds) {
                rows.push(Record {
                    statistic: "spearman_rho".into(),
                    ..base.clone()
                }
                .value(t.rho));
                rows.push(Record {
                    statistic: "spearman_p_decreasing".into(),
                    ..base.clone()
                }
                .value(t.p_decreasing));
                rows.push(Record {
                    statistic: "spearman_p_increasing".into(),
                    ..base
                }
                .value(t.p_increasing));
            }
        }
    }
    if cfg.init == InitKind::Gp {
        let mut probe = ProbeConfig::explosion(cfg.d, cfg.mu, 0.5, cfg.depths.clone(), cfg.trials, cfg.seed);
        probe.gp = cfg.gp;
        let result = smooth_regime_probe(&probe)?;
        for (&depth, m) in result.depths.iter().zip(result.median_max()) {
            rows.push(
                Record::new("explosion_probe_max_ratio", "median")
                    .depth(depth)
                    .beta(0.5)
                    .trials(cfg.trials)
                    .value(m),
            );
        }
    }
    Ok(rows)
}

fn validate(cfg: &ExperimentConfig) -> Result<Vec<Record>> {
    let mut rows = Vec::new();
    let mut push = |reports: Vec<BoundReport>, prefix: &str, base: Record| {
        for mut r in reports {
            r.id = format!("{prefix}{}", r.id);
            rows.push(report_row(&r, &base));
        }
    };
    let seed = |i: u64| derive_seed(cfg.seed, &[i]);

    for (ai, arch) in [Arch::Res1, Arch::Res2, Arch::Res3].into_iter().enumerate() {
        for (di, dist) in [Distribution::UniformScaled, Distribution::GaussianScaled, Distribution::Rademacher]
            .into_iter()
            .enumerate()
        {
            let mut ac = AssumptionConfig::new(arch, dist, cfg.d, cfg.trials, seed(100 + (3 * ai + di) as u64));
            ac.slope = cfg.slope;
            let prefix = format!("{}/{}/", arch.name(), dist_name(dist));
            push(check_assumption_suite(&ac)?, &prefix, Record::default());
        }
    }

    for (i, (depth, alpha)) in [(10, 0.1), (100, 0.05), (1000, 1.0 / 1000f64.sqrt())].into_iter().enumerate() {
        let tc = TrialConfig {
            model: cfg.model(depth),
            scheme: cfg.scheme(),
            rule: ScalingRule::Alpha(alpha),
            gradients: false,
        };
        let report = check_expectation_bracket(&tc, cfg.trials, seed(200 + i as u64))?;
        push(vec![report], "", Record::default().depth(depth));
        let tc = TrialConfig { gradients: true, ..tc };
        let mut reports = check_gradient_bracket(&tc, cfg.trials, seed(210 + i as u64))?;
        reports.truncate(1);
        push(reports, "", Record::default().depth(depth));
    }

    let tc = trial_config(cfg, 1000, 0.5, true);
    let reports = check_gradient_bracket(&tc, cfg.trials, seed(220))?;
    push(reports, "", Record::default().depth(1000).beta(0.5));

    for (i, (beta, width)) in [(1.0, cfg.d), (0.5, cfg.d.max(64))].into_iter().enumerate() {
        let mut tc = trial_config(cfg, 1000, beta, false);
        tc.model.width = width;
        let run = monte_carlo(&tc, cfg.trials, seed(300 + i as u64))?;
        let sample = run.sample(Quantity::OutputRatio)?;
        let reports = check_highprob_bounds(&sample, &tc.model, &tc.rule, cfg.delta);
        push(reports, "", Record::default().depth(1000).beta(beta));
    }

    for (i, hurst) in [0.2, 0.5, 0.8].into_iter().enumerate() {
        let r = check_fgn_autocorrelation(hurst, 1000, 200, seed(400 + i as u64))?;
        push(vec![r], "", Record::default().depth(1000).hurst(hurst));
    }
    Ok(rows)
}

fn dist_name(d: Distribution) -> &'static str {
    match d {
        Distribution::UniformScaled => "uniform",
        Distribution::GaussianScaled => "gaussian",
        Distribution::Rademacher => "rademacher",
    }
}
