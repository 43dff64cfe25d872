use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Map, Value};

use reslab::config::{Experiment, ExperimentConfig};
use reslab::grid::{parse_depths, parse_values};

#[derive(Parser)]
#[command(name = "reslab", version, about = "Monte Carlo experiments on deep residual networks at initialization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Output norm ratios across depths and scaling exponents.
    Norms(Overrides),
    /// Gradient norm ratios across depths and scaling exponents.
    Gradients(Overrides),
    /// Sampling distribution at one depth, with log-normality tests.
    Distribution(Overrides),
    /// Regime map over (Hurst index, β) for fractional-noise weights.
    Heatmap(Overrides),
    /// Strong error of the discretized SDE versus depth.
    SdeConvergence(Overrides),
    /// Error of the smooth-weight network against a fine ODE reference.
    OdeConvergence(Overrides),
    /// Median growth and regime labels across depths.
    Regimes(Overrides),
    /// Statistical checks of the assumptions and bounds.
    Validate(Overrides),
    /// Runs the experiment named in a config file or manifest.
    Run(Overrides),
}

#[derive(Args)]
struct Overrides {
    /// JSON config file, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    /// `a:b` (10 log-spaced), `a:b:n`, or a comma list.
    #[arg(long)]
    depths: Option<String>,
    #[arg(long, conflicts_with = "betas")]
    beta: Option<f64>,
    /// `a:b:step` or a comma list.
    #[arg(long)]
    betas: Option<String>,
    #[arg(long, conflicts_with = "hursts")]
    hurst: Option<f64>,
    #[arg(long)]
    hursts: Option<String>,
    /// iid-uniform, iid-gauss, iid-rademacher, gp or fbm.
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    delta: Option<f64>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
}

impl Overrides {
    fn overlay(&self) -> Result<Value> {
        let mut m = Map::new();
        if let Some(a) = &self.arch {
            m.insert("arch".into(), json!(a));
        }
        if let Some(d) = self.d {
            m.insert("d".into(), json!(d));
        }
        if let Some(s) = &self.depths {
            m.insert("depths".into(), json!(parse_depths(s)?));
        }
        if let Some(b) = self.beta {
            m.insert("betas".into(), json!([b]));
        }
        if let Some(s) = &self.betas {
            m.insert("betas".into(), json!(parse_values(s)?));
        }
        if let Some(h) = self.hurst {
            m.insert("hurst".into(), json!(h));
            m.insert("hursts".into(), json!([h]));
        }
        if let Some(s) = &self.hursts {
            m.insert("hursts".into(), json!(parse_values(s)?));
        }
        if let Some(i) = &self.init {
            m.insert("init".into(), json!(i));
        }
        if let Some(t) = self.trials {
            m.insert("trials".into(), json!(t));
        }
        if let Some(s) = self.seed {
            m.insert("seed".into(), json!(s));
        }
        if let Some(d) = self.delta {
            m.insert("delta".into(), json!(d));
        }
        Ok(Value::Object(m))
    }
}

fn resolve(experiment: Option<Experiment>, o: &Overrides) -> Result<ExperimentConfig> {
    let file = match &o.config {
        Some(p) => Some(ExperimentConfig::overlay_from_file(p)?),
        None => None,
    };
    let experiment = match experiment {
        Some(e) => e,
        None => {
            let name = file
                .as_ref()
                .and_then(|f| f.get("experiment"))
                .context("`run` needs --config with an \"experiment\" field")?;
            serde_json::from_value(name.clone()).context("invalid experiment")?
        }
    };
    let mut cfg = ExperimentConfig::defaults(experiment);
    if let Some(mut f) = file {
        if let Some(obj) = f.as_object_mut() {
            obj.remove("experiment");
        }
        cfg = cfg.merge_json(&f)?;
    }
    cfg = cfg.merge_json(&o.overlay()?)?;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, o) = match &cli.command {
        Command::Norms(o) => (Some(Experiment::Norms), o),
        Command::Gradients(o) => (Some(Experiment::Gradients), o),
        Command::Distribution(o) => (Some(Experiment::Distribution), o),
        Command::Heatmap(o) => (Some(Experiment::Heatmap), o),
        Command::SdeConvergence(o) => (Some(Experiment::SdeConvergence), o),
        Command::OdeConvergence(o) => (Some(Experiment::OdeConvergence), o),
        Command::Regimes(o) => (Some(Experiment::Regimes), o),
        Command::Validate(o) => (Some(Experiment::Validate), o),
        Command::Run(o) => (None, o),
    };
    let result = resolve(experiment, o).and_then(|cfg| {
        let workers = o
            .workers
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
        reslab::run(&cfg, workers, &o.out)
    });
    match result {
        Ok(outcome) => {
            eprintln!(
                "{} rows written to {} (config {})",
                outcome.records.len(),
                o.out.display(),
                outcome.fingerprint
            );
            if outcome.failures > 0 {
                eprintln!("{} checks failed", outcome.failures);
                return ExitCode::from(1);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
