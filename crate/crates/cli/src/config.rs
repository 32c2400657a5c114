//! Run configuration: one TOML file, with command-line flags taking priority.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ccopf::reformulate::{Approach, Distribution, MethodSpec};
use ccopf::risk::{DatasetSpec, ExperimentConfig};
use ccopf::scenarios::ErrorUnits;
use ccopf::solve::SolveSettings;
use clap::Args;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub case: PathBuf,
    pub output: PathBuf,
    pub approach: Approach,
    pub distribution: Distribution,
    #[serde(rename = "K")]
    pub k: usize,
    pub epsilon: f64,
    /// PWL tolerance.
    pub delta: f64,
    pub restarts: usize,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    pub zero_mean: bool,
    pub dataset: DatasetSpec,
    pub solve: SolveSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            case: PathBuf::new(),
            output: PathBuf::from("out"),
            approach: Approach::ConstraintInformed,
            distribution: Distribution::Gaussian,
            k: 1,
            epsilon: 0.05,
            delta: 0.002,
            restarts: 10,
            seeds: (0..10).collect(),
            train_fraction: 0.8,
            zero_mean: false,
            dataset: DatasetSpec::SyntheticGaussian {
                mu: -0.024,
                sigma: 0.036,
                n_samples: 10_000,
                units: ErrorUnits::PerUnit,
            },
            solve: SolveSettings::from_env(),
        }
    }
}

/// Flags shared by the pipeline commands; each one overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Grid case JSON.
    #[arg(long)]
    pub case: Option<PathBuf>,
    /// Output directory.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// `classical` or `constraint-informed`.
    #[arg(long)]
    pub approach: Option<String>,
    /// `gaussian` or `gmm`.
    #[arg(long)]
    pub distribution: Option<String>,
    /// Mixture components.
    #[arg(short = 'K', long = "components")]
    pub k: Option<usize>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// PWL tolerance.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Pin every fitted mean at zero.
    #[arg(long)]
    pub zero_mean: bool,
    /// Replace the dataset's sample count.
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Solver backend name.
    #[arg(long)]
    pub backend: Option<String>,
}

fn absolute(p: &Path) -> Result<PathBuf> {
    if p.as_os_str().is_empty() {
        return Ok(PathBuf::new());
    }
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn parse_enum<T: for<'de> Deserialize<'de>>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_owned()))
        .with_context(|| format!("unknown {what} {s:?}"))
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // Relative paths in a config file are relative to that file.
        let base = path.parent().unwrap_or(Path::new(""));
        if !cfg.case.as_os_str().is_empty() && cfg.case.is_relative() {
            cfg.case = base.join(&cfg.case);
        }
        if let DatasetSpec::Csv { path: p, .. } = &mut cfg.dataset {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Config file (if any) with flags applied, then validated.
    pub fn resolve(o: &Overrides) -> Result<Self> {
        let mut cfg = match &o.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = &o.case {
            cfg.case = v.clone();
        }
        if let Some(v) = &o.output {
            cfg.output = v.clone();
        }
        if let Some(v) = &o.approach {
            cfg.approach = parse_enum("approach", v)?;
        }
        if let Some(v) = &o.distribution {
            cfg.distribution = parse_enum("distribution", v)?;
        }
        if let Some(v) = o.k {
            cfg.k = v;
        }
        if let Some(v) = o.epsilon {
            cfg.epsilon = v;
        }
        if let Some(v) = o.delta {
            cfg.delta = v;
        }
        if let Some(v) = o.restarts {
            cfg.restarts = v;
        }
        if let Some(v) = &o.seeds {
            cfg.seeds = v.clone();
        }
        if let Some(v) = o.train_fraction {
            cfg.train_fraction = v;
        }
        cfg.zero_mean |= o.zero_mean;
        if let Some(n) = o.n_samples {
            match &mut cfg.dataset {
                DatasetSpec::SyntheticGaussian { n_samples, .. }
                | DatasetSpec::SyntheticCauchy { n_samples, .. } => *n_samples = n,
                DatasetSpec::Csv { .. } => bail!("--n-samples does not apply to a CSV dataset"),
            }
        }
        if let Some(v) = &o.backend {
            cfg.solve.backend = v.clone();
        }
        // The effective config is written next to the outputs, so its paths
        // must not depend on the working directory.
        cfg.case = absolute(&cfg.case)?;
        cfg.output = absolute(&cfg.output)?;
        if let DatasetSpec::Csv { path, .. } = &mut cfg.dataset {
            *path = absolute(path)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.case.as_os_str().is_empty() {
            bail!("no grid case given (set `case` or pass --case)");
        }
        if !self.case.exists() {
            bail!("case file {} does not exist", self.case.display());
        }
        if let DatasetSpec::Csv { path, .. } = &self.dataset {
            if !path.exists() {
                bail!("dataset file {} does not exist", path.display());
            }
        }
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            bail!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            );
        }
        self.method()?;
        Ok(())
    }

    pub fn method(&self) -> Result<MethodSpec> {
        Ok(MethodSpec::new(
            self.approach,
            self.distribution,
            self.k,
            self.epsilon,
            self.delta,
        )?
        .with_zero_mean(self.zero_mean))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            dataset: self.dataset.clone(),
            seeds: self.seeds.clone(),
            train_fraction: self.train_fraction,
            distribution: self.distribution,
            k: self.k,
            epsilon: self.epsilon,
            delta: self.delta,
            restarts: self.restarts,
            zero_mean: self.zero_mean,
            solve: self.solve.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
