//! `ccopf`: fit, solve, evaluate and batch-run chance-constrained DC-OPF
//! models from a TOML configuration.
//!
//! Exit codes: 0 success, 2 infeasible model, 3 invalid input, 4 solver
//! backend failure, 1 anything else.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use ccopf::estimation::GmmModel;
use ccopf::grid::{load_case, GridCase, PtdfMatrix};
use ccopf::phi_approx::PwlCdf;
use ccopf::pipeline::{fit_classical, fit_constraint_informed, FitOptions};
use ccopf::reformulate::{
    build_classical_model, build_model, Approach, ConicProgram, FittedInputs,
};
use ccopf::risk::{run_experiment, violation_rates};
use ccopf::scenarios::{split, ScenarioSet, SplitSpec};
use ccopf::solve::{solve, DispatchSolution, SolveStatus};
use clap::{Parser, Subcommand};
use serde_json::json;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "ccopf",
    version,
    about = "Chance-constrained DC optimal power flow"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the uncertainty models for the first seed and write them as JSON.
    Fit(Overrides),
    /// Fit (or load) models, build the program and solve it.
    Solve {
        #[command(flatten)]
        run: Overrides,
        /// Directory written by `fit`; skips fitting.
        #[arg(long)]
        models: Option<PathBuf>,
        /// Also write the conic program as JSON.
        #[arg(long)]
        dump_program: bool,
    },
    /// Solve, then measure violation rates on the held-out samples.
    Evaluate {
        #[command(flatten)]
        run: Overrides,
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Run both approaches over every seed and write per-run results.
    Experiment(Overrides),
    /// Print the piecewise-linear normal CDF under-estimator.
    Pwl {
        #[arg(long, default_value_t = 0.002)]
        delta: f64,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Print the PTDF matrix of a case as CSV (lines × buses).
    Ptdf {
        #[arg(long)]
        case: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

/// How a command ended, mapped onto the exit code.
enum Outcome {
    Done,
    Infeasible,
    BackendFailure,
}

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_BACKEND: u8 = 4;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
        Ok(Outcome::BackendFailure) => ExitCode::from(EXIT_BACKEND),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<ccopf::Error>() {
            return match err {
                ccopf::Error::Backend(_) => EXIT_BACKEND,
                ccopf::Error::Io { .. } => 1,
                _ => EXIT_INVALID,
            };
        }
        if cause.downcast_ref::<toml::de::Error>().is_some()
            || cause.downcast_ref::<serde_json::Error>().is_some()
        {
            return EXIT_INVALID;
        }
    }
    // Config checks raised directly by this binary.
    if e.downcast_ref::<std::io::Error>().is_some() {
        1
    } else {
        EXIT_INVALID
    }
}

fn run(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::Fit(o) => cmd_fit(&RunConfig::resolve(&o)?),
        Command::Solve {
            run,
            models,
            dump_program,
        } => cmd_solve(&RunConfig::resolve(&run)?, models.as_deref(), dump_program),
        Command::Evaluate { run, models } => {
            cmd_evaluate(&RunConfig::resolve(&run)?, models.as_deref())
        }
        Command::Experiment(o) => cmd_experiment(&RunConfig::resolve(&o)?),
        Command::Pwl { delta, output } => {
            emit(output.as_deref(), PwlCdf::build(delta)?.to_json() + "\n")?;
            Ok(Outcome::Done)
        }
        Command::Ptdf { case, output } => {
            let case = load_case(&case)?;
            emit(
                output.as_deref(),
                ptdf_csv(&case, &PtdfMatrix::compute(&case)?),
            )?;
            Ok(Outcome::Done)
        }
    }
}

fn emit(path: Option<&Path>, body: String) -> Result<()> {
    match path {
        Some(p) => write(p, body),
        None => {
            print!("{body}");
            Ok(())
        }
    }
}

fn write(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn json_string(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("value serializes") + "\n"
}

fn ptdf_csv(case: &GridCase, h: &PtdfMatrix) -> String {
    let mut s = String::from("line");
    for b in &case.buses {
        s.push_str(&format!(",{}", b.id));
    }
    s.push('\n');
    for (l, line) in case.lines.iter().enumerate() {
        s.push_str(&line.id.to_string());
        for i in 0..case.n_buses() {
            s.push_str(&format!(",{:?}", h.get(l, i)));
        }
        s.push('\n');
    }
    s
}

/// Loaded case, PTDF and the first seed's train/holdout split.
struct Prepared {
    case: GridCase,
    ptdf: PtdfMatrix,
    train: ScenarioSet,
    holdout: ScenarioSet,
    seed: u64,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    fs::create_dir_all(&cfg.output)
        .with_context(|| format!("creating {}", cfg.output.display()))?;
    write(&cfg.output.join("config.toml"), cfg.to_toml())?;
    let case = load_case(&cfg.case)?;
    let ptdf = PtdfMatrix::compute(&case)?;
    let seed = cfg.seeds[0];
    let data = cfg.dataset.materialize(&case, seed)?;
    let (train, holdout) = split(
        &data,
        &SplitSpec {
            train_fraction: cfg.train_fraction,
            seed,
        },
    )?;
    Ok(Prepared {
        case,
        ptdf,
        train,
        holdout,
        seed,
    })
}

fn fit_options(cfg: &RunConfig, seed: u64) -> FitOptions {
    FitOptions {
        distribution: cfg.distribution,
        k: cfg.k,
        restarts: cfg.restarts,
        seed,
        zero_mean: cfg.zero_mean,
    }
}

/// Fitted models in whichever form the approach produces.
enum Models {
    Classical(GmmModel),
    ConstraintInformed(FittedInputs),
}

fn fit_models(cfg: &RunConfig, p: &Prepared) -> Result<(Models, serde_json::Value, f64)> {
    let opts = fit_options(cfg, p.seed);
    Ok(match cfg.approach {
        Approach::Classical => {
            let f = fit_classical(&p.case, &p.ptdf, &p.train, &opts)?;
            (
                Models::Classical(f.xi_model),
                json!({ "xi": f.report }),
                f.fit_time,
            )
        }
        Approach::ConstraintInformed => {
            let f = fit_constraint_informed(&p.case, &p.ptdf, &p.train, &opts)?;
            let lines: serde_json::Map<String, serde_json::Value> = p
                .case
                .lines
                .iter()
                .zip(&f.eta_reports)
                .map(|(l, r)| (l.id.to_string(), json!(r)))
                .collect();
            (
                Models::ConstraintInformed(f.inputs),
                json!({ "omega": f.omega_report, "lines": lines }),
                f.fit_time,
            )
        }
    })
}

fn write_models(dir: &Path, case: &GridCase, models: &Models) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    match models {
        Models::Classical(m) => m.write(dir.join("xi.json"))?,
        Models::ConstraintInformed(inputs) => {
            inputs.omega.write(dir.join("omega.json"))?;
            for (line, m) in case.lines.iter().zip(&inputs.eta) {
                m.write(dir.join(format!("line-{}.json", line.id)))?;
            }
        }
    }
    Ok(())
}

fn read_models(dir: &Path, case: &GridCase, approach: Approach) -> Result<Models> {
    match approach {
        Approach::Classical => Ok(Models::Classical(GmmModel::read(dir.join("xi.json"))?)),
        Approach::ConstraintInformed => {
            let omega = GmmModel::read(dir.join("omega.json"))?;
            let eta = case
                .lines
                .iter()
                .map(|l| GmmModel::read(dir.join(format!("line-{}.json", l.id))))
                .collect::<ccopf::Result<Vec<_>>>()?;
            Ok(Models::ConstraintInformed(FittedInputs { omega, eta }))
        }
    }
}

fn cmd_fit(cfg: &RunConfig) -> Result<Outcome> {
    let p = prepare(cfg)?;
    let (models, reports, fit_time) = fit_models(cfg, &p)?;
    write_models(&cfg.output.join("models"), &p.case, &models)?;
    write(&cfg.output.join("fit-report.json"), json_string(&reports))?;
    write(
        &cfg.output.join("timing.json"),
        json_string(&json!({ "fit_time": fit_time })),
    )?;
    Ok(Outcome::Done)
}

struct Solved {
    solution: DispatchSolution,
    inputs: FittedInputs,
    fit_time: f64,
}

fn build_and_solve(
    cfg: &RunConfig,
    p: &Prepared,
    models_dir: Option<&Path>,
    dump: bool,
) -> Result<Solved> {
    let (models, fit_time) = match models_dir {
        Some(dir) => (read_models(dir, &p.case, cfg.approach)?, 0.0),
        None => {
            let (m, _, t) = fit_models(cfg, p)?;
            (m, t)
        }
    };
    let spec = cfg.method()?;
    let (program, inputs): (ConicProgram, FittedInputs) = match &models {
        Models::Classical(xi) => (
            build_classical_model(&p.case, &p.ptdf, xi, &spec)?,
            FittedInputs::from_classical(xi, &p.ptdf, &p.case.wind_buses())?,
        ),
        Models::ConstraintInformed(inputs) => (
            build_model(&p.case, &p.ptdf, inputs, &spec)?,
            inputs.clone(),
        ),
    };
    if dump {
        write(&cfg.output.join("program.json"), program.to_json() + "\n")?;
    }
    let solution = solve(&program, &cfg.solve)?;
    write(&cfg.output.join("solution.json"), solution.to_json() + "\n")?;
    write(&cfg.output.join("status.txt"), status_line(&solution))?;
    Ok(Solved {
        solution,
        inputs,
        fit_time,
    })
}

fn status_line(s: &DispatchSolution) -> String {
    let name = match s.status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::NumericalFailure => "numerical-failure",
    };
    match &s.diagnostics {
        Some(d) => format!("{name}\n{d}\n"),
        None => format!("{name}\n"),
    }
}

fn outcome(s: &DispatchSolution) -> Outcome {
    match s.status {
        SolveStatus::Optimal => Outcome::Done,
        SolveStatus::Infeasible => Outcome::Infeasible,
        SolveStatus::NumericalFailure => Outcome::BackendFailure,
    }
}

fn write_timing(cfg: &RunConfig, s: &Solved) -> Result<()> {
    write(
        &cfg.output.join("timing.json"),
        json_string(&json!({ "fit_time": s.fit_time, "solve_time": s.solution.solve_time })),
    )
}

fn cmd_solve(cfg: &RunConfig, models: Option<&Path>, dump: bool) -> Result<Outcome> {
    let p = prepare(cfg)?;
    let s = build_and_solve(cfg, &p, models, dump)?;
    write_timing(cfg, &s)?;
    if !s.solution.is_optimal() {
        eprintln!("{}", status_line(&s.solution).trim_end());
    }
    Ok(outcome(&s.solution))
}

fn cmd_evaluate(cfg: &RunConfig, models: Option<&Path>) -> Result<Outcome> {
    let p = prepare(cfg)?;
    let s = build_and_solve(cfg, &p, models, false)?;
    write_timing(cfg, &s)?;
    if !s.solution.is_optimal() {
        eprintln!("{}", status_line(&s.solution).trim_end());
        return Ok(outcome(&s.solution));
    }
    let risk = violation_rates(&p.case, &p.ptdf, &s.solution, &p.holdout, cfg.epsilon)?;
    let audit = ccopf::reformulate::audit_chance_constraints(
        &p.case,
        &p.ptdf,
        &s.inputs,
        &s.solution.pbar,
        &s.solution.alpha,
        ccopf::risk::VIOLATION_SLACK,
    )?;
    let mut csv = String::from("constraint,violation_rate,model_probability\n");
    for (r, a) in risk.per_constraint.iter().zip(&audit) {
        csv.push_str(&format!(
            "{},{:?},{:?}\n",
            r.constraint, r.rate, a.probability
        ));
    }
    write(&cfg.output.join("risk.csv"), csv)?;
    write(&cfg.output.join("risk.json"), json_string(&risk))?;
    println!(
        "worst-case violation {:.4} (epsilon {})",
        risk.worst_case, cfg.epsilon
    );
    Ok(Outcome::Done)
}

fn cmd_experiment(cfg: &RunConfig) -> Result<Outcome> {
    fs::create_dir_all(&cfg.output)
        .with_context(|| format!("creating {}", cfg.output.display()))?;
    write(&cfg.output.join("config.toml"), cfg.to_toml())?;
    let case = load_case(&cfg.case)?;
    let start = Instant::now();
    let result = run_experiment(&case, &cfg.experiment())?;
    result.write(&cfg.output)?;
    print!("{}", result.to_csv()?);
    eprintln!(
        "{} runs in {:.1} s",
        result.runs.len(),
        start.elapsed().as_secs_f64()
    );
    if result.runs.is_empty() {
        return Err(anyhow!("no runs"));
    }
    Ok(Outcome::Done)
}
