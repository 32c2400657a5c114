//! Solving [`ConicProgram`]s through a pluggable backend.
//!
//! The adapter re-checks every "optimal" point against the original program
//! before reporting it, so a backend's internal scaling or presolve cannot
//! hide a constraint violation. Infeasibility is a status, not an error.

mod clarabel_backend;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reformulate::{ConicProgram, RowKind};

pub use clarabel_backend::ClarabelBackend;

/// Environment variable naming the backend when none is configured.
pub const BACKEND_ENV: &str = "CCOPF_BACKEND";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolveSettings {
    pub backend: String,
    pub max_iter: u32,
    /// Seconds; `None` for no limit.
    pub time_limit: Option<f64>,
    /// Relative gap and feasibility tolerance passed to the backend.
    pub tolerance: f64,
    /// Re-verification tolerance, scaled per row by `max(1, ‖row‖∞)`.
    pub feasibility_tol: f64,
    pub verbose: bool,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            backend: "clarabel".into(),
            max_iter: 200,
            time_limit: None,
            tolerance: 1e-9,
            feasibility_tol: 1e-6,
            verbose: false,
        }
    }
}

impl SolveSettings {
    /// Defaults, with the backend taken from `CCOPF_BACKEND` when set.
    pub fn from_env() -> Self {
        let mut s = SolveSettings::default();
        if let Ok(name) = std::env::var(BACKEND_ENV) {
            if !name.trim().is_empty() {
                s.backend = name.trim().to_owned();
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// What a backend hands back before re-verification.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub iterations: u32,
    /// Backend's own name for its termination state.
    pub detail: String,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &'static str;
    fn solve(&self, program: &ConicProgram, settings: &SolveSettings) -> Result<RawSolution>;
}

pub fn backend_by_name(name: &str) -> Result<Box<dyn Backend>> {
    match name.to_ascii_lowercase().as_str() {
        "clarabel" => Ok(Box::new(ClarabelBackend)),
        other => Err(Error::InvalidArgument(format!(
            "unknown solver backend {other:?} (available: clarabel)"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispatchSolution {
    pub status: SolveStatus,
    /// Nominal generation, MW.
    pub pbar: Vec<f64>,
    /// Participation factors.
    pub alpha: Vec<f64>,
    pub objective: f64,
    /// Seconds spent in the backend call. Not serialized, so solution files
    /// are reproducible byte for byte.
    #[serde(skip)]
    pub solve_time: f64,
    pub iterations: u32,
    /// Cone variables `δ_l` and, when present, the `M1`…`M4` blocks.
    pub aux: BTreeMap<String, Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<String>,
}

impl DispatchSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("solution serializes")
    }
}

fn unpack(
    program: &ConicProgram,
    raw: &RawSolution,
    status: SolveStatus,
    elapsed: f64,
    diag: Option<String>,
) -> DispatchSolution {
    let lay = &program.layout;
    let n = program.n_vars();
    let x = if raw.x.len() == n {
        raw.x.clone()
    } else {
        vec![f64::NAN; n]
    };
    let slice = |start: usize, len: usize| x[start..start + len].to_vec();
    let mut aux = BTreeMap::new();
    aux.insert("delta".to_owned(), slice(lay.delta, lay.n_lines));
    if let Some(m) = lay.m_blocks {
        let sizes = [lay.n_generators, lay.n_generators, lay.n_lines, lay.n_lines];
        for (b, (start, rows)) in m.iter().zip(sizes).enumerate() {
            aux.insert(format!("M{}", b + 1), slice(*start, rows * lay.k));
        }
    }
    let objective = if status == SolveStatus::Optimal {
        program.objective.eval(&x)
    } else {
        f64::NAN
    };
    DispatchSolution {
        status,
        pbar: slice(lay.pbar, lay.n_generators),
        alpha: slice(lay.alpha, lay.n_generators),
        objective,
        solve_time: elapsed,
        iterations: raw.iterations,
        aux,
        diagnostics: diag,
    }
}

/// Solves a program with the backend named in `settings`.
///
/// Returns `Err` only for malformed programs or unknown backends; solver
/// outcomes (including infeasibility and numerical trouble) are statuses.
pub fn solve(program: &ConicProgram, settings: &SolveSettings) -> Result<DispatchSolution> {
    program.validate()?;
    let backend = backend_by_name(&settings.backend)?;
    // Rows without variables are settled here; backends never see them.
    let broken = program
        .rows
        .iter()
        .filter(|r| r.terms.is_empty())
        .find(|r| match r.kind {
            RowKind::Le => r.rhs < 0.0,
            RowKind::Ge => r.rhs > 0.0,
            RowKind::Eq => r.rhs != 0.0,
        });
    if let Some(r) = broken {
        let msg = format!("row {} has no variables and cannot hold", r.name);
        let raw = RawSolution {
            status: SolveStatus::Infeasible,
            x: vec![],
            iterations: 0,
            detail: msg.clone(),
        };
        return Ok(unpack(
            program,
            &raw,
            SolveStatus::Infeasible,
            0.0,
            Some(msg),
        ));
    }
    let start = Instant::now();
    let raw = match backend.solve(program, settings) {
        Ok(r) => r,
        Err(Error::Backend(msg)) => {
            let raw = RawSolution {
                status: SolveStatus::NumericalFailure,
                x: vec![],
                iterations: 0,
                detail: msg.clone(),
            };
            return Ok(unpack(
                program,
                &raw,
                SolveStatus::NumericalFailure,
                start.elapsed().as_secs_f64(),
                Some(msg),
            ));
        }
        Err(e) => return Err(e),
    };
    let elapsed = start.elapsed().as_secs_f64();

    let (status, diag) = match raw.status {
        SolveStatus::Optimal => {
            if raw.x.len() != program.n_vars() || raw.x.iter().any(|v| !v.is_finite()) {
                (
                    SolveStatus::NumericalFailure,
                    Some(format!("{} returned a non-finite point", backend.name())),
                )
            } else if let Some(res) = Some(program.residuals(&raw.x)).filter(|r| {
                r.linear > settings.feasibility_tol || r.cone > settings.feasibility_tol
            }) {
                (
                    SolveStatus::NumericalFailure,
                    Some(format!(
                        "{} reported {} but re-verification failed: linear {:.3e} at {:?}, cone {:.3e} at {:?}",
                        backend.name(),
                        raw.detail,
                        res.linear,
                        res.linear_row,
                        res.cone,
                        res.cone_name
                    )),
                )
            } else {
                (SolveStatus::Optimal, None)
            }
        }
        SolveStatus::Infeasible => (SolveStatus::Infeasible, Some(raw.detail.clone())),
        SolveStatus::NumericalFailure => (
            SolveStatus::NumericalFailure,
            Some(format!("{} terminated with {}", backend.name(), raw.detail)),
        ),
    };
    Ok(unpack(program, &raw, status, elapsed, diag))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_backend() {
        assert!(backend_by_name("gurobi").is_err());
        assert!(backend_by_name("Clarabel").is_ok());
    }
}
