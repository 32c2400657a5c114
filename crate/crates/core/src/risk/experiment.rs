use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{violation_rates, RiskReport, VIOLATION_SLACK};
use crate::error::{Error, Result};
use crate::grid::{GridCase, PtdfMatrix};
use crate::pipeline::{fit_classical, fit_constraint_informed, FitOptions};
use crate::reformulate::{
    audit_chance_constraints, build_model, check_line_spread, check_mean_conditions, Approach,
    Distribution, FittedInputs, MeanConditionReport, MethodSpec,
};
use crate::scenarios::{
    generate_cauchy, generate_gaussian, ingest_csv, split, to_omega, ErrorUnits, ScenarioSet,
    SplitSpec, WindProfile,
};
use crate::solve::{solve, SolveSettings, SolveStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSpec {
    /// Per-unit `N(mu, sigma²)` errors, a fresh draw per run seed.
    SyntheticGaussian {
        mu: f64,
        sigma: f64,
        n_samples: usize,
        #[serde(default)]
        units: ErrorUnits,
    },
    /// Per-unit Cauchy(x0, gamma) errors, a fresh draw per run seed.
    SyntheticCauchy {
        x0: f64,
        gamma: f64,
        n_samples: usize,
        #[serde(default)]
        units: ErrorUnits,
    },
    /// One CSV file; runs differ only in how it is split.
    Csv {
        path: PathBuf,
        #[serde(default)]
        normalize: bool,
        /// Wind unit (column) name to bus id.
        unit_bus: BTreeMap<String, u32>,
        #[serde(default)]
        units: ErrorUnits,
    },
}

impl DatasetSpec {
    pub fn label(&self) -> String {
        match self {
            DatasetSpec::SyntheticGaussian { .. } => "synthetic-g".into(),
            DatasetSpec::SyntheticCauchy { .. } => "synthetic-c".into(),
            DatasetSpec::Csv { path, .. } => path
                .file_stem()
                .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
        }
    }

    /// Loads or draws the dataset for one run.
    pub fn materialize(&self, case: &GridCase, seed: u64) -> Result<ScenarioSet> {
        match self {
            DatasetSpec::SyntheticGaussian {
                mu,
                sigma,
                n_samples,
                units,
            } => generate_gaussian(
                &WindProfile::from_case(case, *units),
                *n_samples,
                *mu,
                *sigma,
                seed,
            ),
            DatasetSpec::SyntheticCauchy {
                x0,
                gamma,
                n_samples,
                units,
            } => generate_cauchy(
                &WindProfile::from_case(case, *units),
                *n_samples,
                *x0,
                *gamma,
                seed,
            ),
            DatasetSpec::Csv {
                path,
                normalize,
                unit_bus,
                units,
            } => {
                let map = unit_bus.iter().map(|(k, v)| (k.clone(), *v)).collect();
                ingest_csv(path, *normalize)?.to_scenarios(case, &map, *units, &self.label())
            }
        }
    }

    fn per_seed(&self) -> bool {
        !matches!(self, DatasetSpec::Csv { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    pub distribution: Distribution,
    #[serde(rename = "K")]
    pub k: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub restarts: usize,
    pub zero_mean: bool,
    #[serde(default)]
    pub solve: SolveSettings,
}

impl ExperimentConfig {
    pub fn new(dataset: DatasetSpec, distribution: Distribution, k: usize) -> Self {
        ExperimentConfig {
            dataset,
            seeds: (0..10).collect(),
            train_fraction: 0.8,
            distribution,
            k,
            epsilon: 0.05,
            delta: 0.002,
            restarts: 10,
            zero_mean: false,
            solve: SolveSettings::default(),
        }
    }

    fn method(&self, approach: Approach) -> Result<MethodSpec> {
        Ok(MethodSpec::new(
            approach,
            self.distribution,
            self.k,
            self.epsilon,
            self.delta,
        )?
        .with_zero_mean(self.zero_mean))
    }

    fn fit_options(&self, seed: u64) -> FitOptions {
        FitOptions {
            distribution: self.distribution,
            k: self.k,
            restarts: self.restarts,
            seed,
            zero_mean: self.zero_mean,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
    /// Fitting or model construction failed.
    Error,
}

impl RunStatus {
    fn as_str(self) -> &'static str {
        match self {
            RunStatus::Optimal => "optimal",
            RunStatus::Infeasible => "infeasible",
            RunStatus::NumericalFailure => "numerical-failure",
            RunStatus::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachRun {
    pub status: RunStatus,
    /// Log-likelihood of the training `Ω` samples under this approach's `Ω` model.
    pub log_likelihood: Option<f64>,
    pub objective: Option<f64>,
    pub pbar: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub risk: Option<RiskReport>,
    /// Smallest exact satisfaction probability over all chance constraints,
    /// under the fitted distributions.
    pub audit_min_probability: Option<f64>,
    pub mean_conditions: Option<MeanConditionReport>,
    /// Lines whose fitted spread alone makes the mixture model infeasible.
    #[serde(default)]
    pub spread_infeasible_lines: Vec<u32>,
    pub error: Option<String>,
    #[serde(skip)]
    pub fit_time: f64,
    #[serde(skip)]
    pub solve_time: f64,
}

impl ApproachRun {
    fn failed(status: RunStatus, error: String) -> Self {
        ApproachRun {
            status,
            log_likelihood: None,
            objective: None,
            pbar: None,
            alpha: None,
            risk: None,
            audit_min_probability: None,
            mean_conditions: None,
            spread_infeasible_lines: vec![],
            error: Some(error),
            fit_time: 0.0,
            solve_time: 0.0,
        }
    }

    pub fn worst_case(&self) -> Option<f64> {
        self.risk
            .as_ref()
            .filter(|r| !r.infeasible)
            .map(|r| r.worst_case)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub seed: u64,
    pub n_train: usize,
    pub n_holdout: usize,
    pub classical: ApproachRun,
    pub constraint_informed: ApproachRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachSummary {
    pub runs: usize,
    pub optimal: usize,
    pub infeasible_count: usize,
    pub failure_count: usize,
    /// Means and variance over optimal runs only.
    pub mean_worst_case: Option<f64>,
    pub var_worst_case: Option<f64>,
    pub mean_log_likelihood: Option<f64>,
    pub mean_objective: Option<f64>,
    #[serde(skip)]
    pub mean_fit_time: f64,
    #[serde(skip)]
    pub mean_solve_time: f64,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl ApproachSummary {
    fn from_runs<'a>(runs: impl Iterator<Item = &'a ApproachRun> + Clone) -> Self {
        let n = runs.clone().count();
        let optimal: Vec<&ApproachRun> = runs
            .clone()
            .filter(|r| r.status == RunStatus::Optimal)
            .collect();
        let worst: Vec<f64> = optimal.iter().filter_map(|r| r.worst_case()).collect();
        let m = mean(&worst);
        let var =
            m.map(|m| worst.iter().map(|w| (w - m).powi(2)).sum::<f64>() / worst.len() as f64);
        let ll: Vec<f64> = runs.clone().filter_map(|r| r.log_likelihood).collect();
        let obj: Vec<f64> = optimal.iter().filter_map(|r| r.objective).collect();
        let fit: Vec<f64> = runs.clone().map(|r| r.fit_time).collect();
        let sol: Vec<f64> = runs.clone().map(|r| r.solve_time).collect();
        ApproachSummary {
            runs: n,
            optimal: optimal.len(),
            infeasible_count: runs
                .clone()
                .filter(|r| r.status == RunStatus::Infeasible)
                .count(),
            failure_count: runs
                .filter(|r| matches!(r.status, RunStatus::NumericalFailure | RunStatus::Error))
                .count(),
            mean_worst_case: m,
            var_worst_case: var,
            mean_log_likelihood: mean(&ll),
            mean_objective: mean(&obj),
            mean_fit_time: mean(&fit).unwrap_or(0.0),
            mean_solve_time: mean(&sol).unwrap_or(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub label: String,
    pub seeds: Vec<u64>,
    pub epsilon: f64,
    pub runs: Vec<RunRecord>,
    pub classical: ApproachSummary,
    pub constraint_informed: ApproachSummary,
}

fn run_approach(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    cfg: &ExperimentConfig,
    approach: Approach,
    seed: u64,
    train: &ScenarioSet,
    holdout: &ScenarioSet,
    omega_train: &crate::estimation::Samples,
) -> ApproachRun {
    let spec = match cfg.method(approach) {
        Ok(s) => s,
        Err(e) => return ApproachRun::failed(RunStatus::Error, e.to_string()),
    };
    let opts = cfg.fit_options(seed);
    let fitted: Result<(FittedInputs, f64)> = match approach {
        Approach::Classical => {
            fit_classical(case, ptdf, train, &opts).map(|f| (f.inputs, f.fit_time))
        }
        Approach::ConstraintInformed => {
            fit_constraint_informed(case, ptdf, train, &opts).map(|f| (f.inputs, f.fit_time))
        }
    };
    let (inputs, fit_time) = match fitted {
        Ok(x) => x,
        Err(e) => return ApproachRun::failed(RunStatus::Error, format!("fit: {e}")),
    };
    let log_likelihood = inputs.omega.loglik(omega_train).ok();
    let mean_conditions = check_mean_conditions(case, ptdf, &inputs);
    let mut run = ApproachRun {
        log_likelihood,
        mean_conditions: Some(mean_conditions),
        spread_infeasible_lines: check_line_spread(case, ptdf, &inputs, &spec),
        fit_time,
        ..ApproachRun::failed(RunStatus::Error, String::new())
    };
    run.error = None;
    let program = match build_model(case, ptdf, &inputs, &spec) {
        Ok(p) => p,
        Err(e) => {
            run.error = Some(format!("build: {e}"));
            return run;
        }
    };
    let start = Instant::now();
    let sol = match solve(&program, &cfg.solve) {
        Ok(s) => s,
        Err(e) => {
            run.error = Some(format!("solve: {e}"));
            return run;
        }
    };
    run.solve_time = start.elapsed().as_secs_f64();
    // The mean rows and cuts exist only in the mixture form; there a proven
    // mean or spread condition settles a run the backend could not certify
    // either way.
    let by_mean = run
        .mean_conditions
        .as_ref()
        .is_some_and(MeanConditionReport::any_infeasible);
    let by_spread = !run.spread_infeasible_lines.is_empty();
    let proven = spec.distribution == Distribution::Gmm && (by_mean || by_spread);
    run.status = match sol.status {
        SolveStatus::Optimal => RunStatus::Optimal,
        SolveStatus::Infeasible => RunStatus::Infeasible,
        SolveStatus::NumericalFailure if proven => RunStatus::Infeasible,
        SolveStatus::NumericalFailure => RunStatus::NumericalFailure,
    };
    if !sol.is_optimal() {
        run.error = sol.diagnostics.clone();
        if proven && sol.status == SolveStatus::NumericalFailure {
            let why = if by_mean {
                "mean conditions cannot hold"
            } else {
                "line spread exceeds the limits"
            };
            run.error = Some(format!(
                "{why}; backend: {}",
                run.error.as_deref().unwrap_or("numerical failure")
            ));
        }
        run.risk = Some(RiskReport::infeasible(cfg.epsilon, holdout.n_samples()));
        return run;
    }
    run.objective = Some(sol.objective);
    run.audit_min_probability =
        audit_chance_constraints(case, ptdf, &inputs, &sol.pbar, &sol.alpha, VIOLATION_SLACK)
            .ok()
            .map(|a| a.iter().map(|c| c.probability).fold(1.0, f64::min));
    match violation_rates(case, ptdf, &sol, holdout, cfg.epsilon) {
        Ok(r) => run.risk = Some(r),
        Err(e) => run.error = Some(format!("risk: {e}")),
    }
    run.pbar = Some(sol.pbar);
    run.alpha = Some(sol.alpha);
    run
}

fn run_seed(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    cfg: &ExperimentConfig,
    shared: Option<&ScenarioSet>,
    seed: u64,
) -> RunRecord {
    let data = match shared {
        Some(d) => Ok(d.clone()),
        None => cfg.dataset.materialize(case, seed),
    };
    let parts = data.and_then(|d| {
        split(
            &d,
            &SplitSpec {
                train_fraction: cfg.train_fraction,
                seed,
            },
        )
    });
    let (train, holdout) = match parts {
        Ok(p) => p,
        Err(e) => {
            let failed = ApproachRun::failed(RunStatus::Error, format!("data: {e}"));
            return RunRecord {
                seed,
                n_train: 0,
                n_holdout: 0,
                classical: failed.clone(),
                constraint_informed: failed,
            };
        }
    };
    let omega_train = to_omega(&train).to_samples();
    let go = |a| run_approach(case, ptdf, cfg, a, seed, &train, &holdout, &omega_train);
    RunRecord {
        seed,
        n_train: train.n_samples(),
        n_holdout: holdout.n_samples(),
        classical: go(Approach::Classical),
        constraint_informed: go(Approach::ConstraintInformed),
    }
}

/// Runs both approaches on every seed: data → split → fit → mean-condition
/// check → build → solve → out-of-sample risk. Per-run failures are recorded,
/// not raised; only an unusable configuration is an error.
pub fn run_experiment(case: &GridCase, cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.method(Approach::Classical)?;
    if cfg.seeds.is_empty() {
        return Err(Error::InvalidArgument(
            "experiment needs at least one seed".into(),
        ));
    }
    let ptdf = PtdfMatrix::compute(case)?;
    let shared = if cfg.dataset.per_seed() {
        None
    } else {
        Some(cfg.dataset.materialize(case, 0)?)
    };
    let runs: Vec<RunRecord> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_seed(case, &ptdf, cfg, shared.as_ref(), s))
        .collect();
    Ok(ExperimentResult {
        label: cfg.dataset.label(),
        seeds: cfg.seeds.clone(),
        epsilon: cfg.epsilon,
        classical: ApproachSummary::from_runs(runs.iter().map(|r| &r.classical)),
        constraint_informed: ApproachSummary::from_runs(
            runs.iter().map(|r| &r.constraint_informed),
        ),
        runs,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:?}"))
}

/// Per-run CSV columns; log-likelihoods come classical first.
pub const CSV_HEADER: [&str; 11] = [
    "seed",
    "ll_classical",
    "ll_constraint_informed",
    "worst_case_classical",
    "worst_case_constraint_informed",
    "status_classical",
    "status_constraint_informed",
    "infeasible_classical",
    "infeasible_constraint_informed",
    "objective_classical",
    "objective_constraint_informed",
];

impl ExperimentResult {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }

    /// One row per run plus a final `mean` row (means over optimal runs,
    /// infeasible columns summed).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(CSV_HEADER)?;
        for r in &self.runs {
            let (c, i) = (&r.classical, &r.constraint_informed);
            w.write_record([
                r.seed.to_string(),
                cell(c.log_likelihood),
                cell(i.log_likelihood),
                cell(c.worst_case()),
                cell(i.worst_case()),
                c.status.as_str().into(),
                i.status.as_str().into(),
                u8::from(c.status == RunStatus::Infeasible).to_string(),
                u8::from(i.status == RunStatus::Infeasible).to_string(),
                cell(c.objective),
                cell(i.objective),
            ])?;
        }
        let (c, i) = (&self.classical, &self.constraint_informed);
        w.write_record([
            "mean".into(),
            cell(c.mean_log_likelihood),
            cell(i.mean_log_likelihood),
            cell(c.mean_worst_case),
            cell(i.mean_worst_case),
            format!("{}/{} optimal", c.optimal, c.runs),
            format!("{}/{} optimal", i.optimal, i.runs),
            c.infeasible_count.to_string(),
            i.infeasible_count.to_string(),
            cell(c.mean_objective),
            cell(i.mean_objective),
        ])?;
        String::from_utf8(w.into_inner().map_err(|e| Error::Parse(e.to_string()))?)
            .map_err(|e| Error::Parse(e.to_string()))
    }

    /// Wall-clock times, kept apart from the reproducible outputs.
    pub fn timings_csv(&self) -> String {
        let mut s = String::from("seed,fit_time_classical,fit_time_constraint_informed,solve_time_classical,solve_time_constraint_informed\n");
        for r in &self.runs {
            s.push_str(&format!(
                "{},{:.6},{:.6},{:.6},{:.6}\n",
                r.seed,
                r.classical.fit_time,
                r.constraint_informed.fit_time,
                r.classical.solve_time,
                r.constraint_informed.solve_time
            ));
        }
        s
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("runs.csv", self.to_csv()?)?;
        put("summary.json", self.to_json() + "\n")?;
        put("timings.csv", self.timings_csv())?;
        for r in &self.runs {
            let sub = dir.join(format!("run-{}", r.seed));
            std::fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            let p = sub.join("run.json");
            std::fs::write(
                &p,
                serde_json::to_string_pretty(r).expect("run serializes") + "\n",
            )
            .map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}
