//! Experiment configuration: per-experiment defaults, JSON overlays and
//! command-line overrides.

use anyhow::{bail, Context, Result};
use reslab_core::init::FbmNormalization;
use reslab_core::{Arch, Distribution, FbmSpec, GpSpec, InitScheme, ModelSpec};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Norms,
    Gradients,
    Distribution,
    Heatmap,
    SdeConvergence,
    OdeConvergence,
    Regimes,
    Validate,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::Norms,
        Experiment::Gradients,
        Experiment::Distribution,
        Experiment::Heatmap,
        Experiment::SdeConvergence,
        Experiment::OdeConvergence,
        Experiment::Regimes,
        Experiment::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Norms => "norms",
            Experiment::Gradients => "gradients",
            Experiment::Distribution => "distribution",
            Experiment::Heatmap => "heatmap",
            Experiment::SdeConvergence => "sde-convergence",
            Experiment::OdeConvergence => "ode-convergence",
            Experiment::Regimes => "regimes",
            Experiment::Validate => "validate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    IidUniform,
    IidGauss,
    IidRademacher,
    Gp,
    Fbm,
}

impl std::str::FromStr for InitKind {
    type Err = anyhow::Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "iid-uniform" => InitKind::IidUniform,
            "iid-gauss" => InitKind::IidGauss,
            "iid-rademacher" => InitKind::IidRademacher,
            "gp" => InitKind::Gp,
            "fbm" => InitKind::Fbm,
            other => bail!("unknown init {other:?}; expected iid-uniform, iid-gauss, iid-rademacher, gp or fbm"),
        })
    }
}

/// Everything needed to reproduce a run. Field names are the JSON keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub arch: Arch,
    pub d: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub slope: f64,
    pub init: InitKind,
    pub gp: GpSpec,
    /// Hurst index for `init = fbm` outside the heatmap.
    pub hurst: f64,
    pub fbm_normalization: FbmNormalization,
    pub depths: Vec<usize>,
    pub betas: Vec<f64>,
    pub hursts: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub delta: f64,
    /// Brownian refinement factor for `sde-convergence`.
    pub refinement: usize,
    /// Reference resolution multiplier for `ode-convergence`.
    pub reference_factor: usize,
    /// Diagonal shift of the explosion probe in `regimes` with `init = gp`.
    pub mu: f64,
}

impl ExperimentConfig {
    /// Defaults for each experiment.
    pub fn defaults(experiment: Experiment) -> Self {
        let mut c = Self {
            experiment,
            arch: Arch::Res3,
            d: 40,
            n_in: 64,
            n_out: 1,
            slope: ModelSpec::MIN_SLOPE,
            init: InitKind::IidUniform,
            gp: GpSpec::default(),
            hurst: 0.5,
            fbm_normalization: FbmNormalization::UnitVariance,
            depths: vec![10, 17, 28, 46, 77, 129, 215, 359, 599, 1000],
            betas: vec![0.25, 0.5, 1.0],
            hursts: vec![0.5],
            trials: 50,
            seed: 0,
            delta: 0.1,
            refinement: 32,
            reference_factor: 64,
            mu: 1.0,
        };
        match experiment {
            Experiment::Norms | Experiment::Gradients | Experiment::Regimes => {}
            Experiment::Distribution => {
                c.d = 100;
                c.depths = vec![1000];
                c.betas = vec![0.5];
                c.trials = 10_000;
            }
            Experiment::Heatmap => {
                c.init = InitKind::Fbm;
                c.depths = vec![1000];
                c.betas = (0..12).map(|i| (2 + i) as f64 / 10.0).collect();
                c.hursts = vec![0.05, 0.15, 0.25, 0.35, 0.45, 0.55, 0.65, 0.75, 0.85, 0.97];
                c.trials = 30;
            }
            Experiment::SdeConvergence => {
                c.arch = Arch::Res1;
                c.d = 10;
                c.init = InitKind::IidGauss;
                c.depths = vec![8, 16, 32, 64, 128, 256, 512];
                c.betas = vec![0.5];
                c.trials = 200;
            }
            Experiment::OdeConvergence => {
                c.d = 10;
                c.init = InitKind::Gp;
                c.depths = vec![16, 32, 64, 128, 256, 512, 1024];
                c.betas = vec![1.0];
                c.trials = 20;
            }
            Experiment::Validate => {
                c.trials = 2000;
            }
        }
        c
    }

    /// Applies a JSON object on top of `self`; keys absent from `overlay`
    /// keep their current value.
    pub fn merge_json(&self, overlay: &Value) -> Result<Self> {
        let Value::Object(over) = overlay else {
            bail!("configuration must be a JSON object");
        };
        let mut base = serde_json::to_value(self)?;
        let obj = base.as_object_mut().expect("config serializes to an object");
        for (k, v) in over {
            if !obj.contains_key(k) {
                bail!("unknown configuration field {k:?}");
            }
            obj.insert(k.clone(), v.clone());
        }
        serde_json::from_value(base).context("invalid configuration")
    }

    /// Reads a config file, or the `config` member of a manifest.
    pub fn overlay_from_file(path: &std::path::Path) -> Result<Value> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let mut v: Value =
            serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))?;
        if let Some(inner) = v.get_mut("config") {
            return Ok(inner.take());
        }
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, why: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                bail!("invalid {field}: {why}")
            }
        };
        check(self.d >= 1, "d", "must be at least 1")?;
        check(self.n_in >= 1, "n_in", "must be at least 1")?;
        check(self.n_out >= 1, "n_out", "must be at least 1")?;
        check(self.trials >= 1, "trials", "must be at least 1")?;
        check(!self.depths.is_empty(), "depths", "grid is empty")?;
        check(!self.depths.contains(&0), "depths", "must be positive")?;
        check(!self.betas.is_empty(), "betas", "grid is empty")?;
        check(
            self.betas.iter().all(|b| *b > 0.0 && b.is_finite()),
            "betas",
            "must be positive",
        )?;
        check(
            self.hurst > 0.0 && self.hurst < 1.0,
            "hurst",
            "must lie in (0, 1)",
        )?;
        if self.experiment == Experiment::Heatmap {
            check(!self.hursts.is_empty(), "hursts", "grid is empty")?;
            check(
                self.hursts.iter().all(|h| *h > 0.0 && *h < 1.0),
                "hursts",
                "must lie in (0, 1)",
            )?;
            check(self.depths.len() == 1, "depths", "heatmap takes a single depth")?;
        }
        check(self.delta > 0.0 && self.delta <= 1.0, "delta", "must lie in (0, 1]")?;
        if self.experiment == Experiment::SdeConvergence {
            check(
                self.refinement >= 16 && self.refinement.is_power_of_two(),
                "refinement",
                "must be a power of two ≥ 16",
            )?;
            check(self.depths.len() >= 4, "depths", "need at least 4 depths")?;
        }
        if self.experiment == Experiment::OdeConvergence {
            check(self.reference_factor >= 64, "reference_factor", "must be at least 64")?;
            check(self.depths.len() >= 4, "depths", "need at least 4 depths")?;
            check(self.init == InitKind::Gp, "init", "ode-convergence needs gp weights")?;
        }
        self.gp.validate().map_err(|e| anyhow::anyhow!("invalid gp: {e}"))?;
        self.model(self.depths[0])
            .validate()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        Ok(())
    }

    pub fn model(&self, depth: usize) -> ModelSpec {
        ModelSpec {
            arch: self.arch,
            width: self.d,
            depth,
            slope: self.slope,
            n_in: self.n_in,
            n_out: self.n_out,
        }
    }

    pub fn fbm(&self, hurst: f64) -> FbmSpec {
        FbmSpec {
            hurst,
            normalization: self.fbm_normalization,
        }
    }

    pub fn scheme(&self) -> InitScheme {
        match self.init {
            InitKind::IidUniform => InitScheme::iid(Distribution::UniformScaled),
            InitKind::IidGauss => InitScheme::iid(Distribution::GaussianScaled),
            InitKind::IidRademacher => InitScheme::iid(Distribution::Rademacher),
            InitKind::Gp => InitScheme::SmoothGp(self.gp),
            InitKind::Fbm => InitScheme::Fbm(self.fbm(self.hurst)),
        }
    }

    pub fn distribution(&self) -> Distribution {
        match self.init {
            InitKind::IidGauss => Distribution::GaussianScaled,
            InitKind::IidRademacher => Distribution::Rademacher,
            _ => Distribution::UniformScaled,
        }
    }
}
