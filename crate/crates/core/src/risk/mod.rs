//! Out-of-sample risk: how often a dispatch breaks each limit on held-out
//! forecast errors, and the seeded experiment harness around it.

mod experiment;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{realized_state, GridCase, PtdfMatrix};
use crate::reformulate::constraint_ids;
use crate::scenarios::ScenarioSet;
use crate::solve::DispatchSolution;

pub use experiment::{
    run_experiment, ApproachRun, ApproachSummary, DatasetSpec, ExperimentConfig, ExperimentResult,
    RunRecord, RunStatus,
};

/// A limit counts as violated only beyond this many MW.
pub const VIOLATION_SLACK: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRate {
    pub constraint: String,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    /// `ρ_j` per constraint, in [`constraint_ids`] order.
    pub per_constraint: Vec<ConstraintRate>,
    pub worst_case: f64,
    pub epsilon: f64,
    pub holdout_size: usize,
    pub infeasible: bool,
}

impl RiskReport {
    /// Placeholder for a run whose model had no solution.
    pub fn infeasible(epsilon: f64, holdout_size: usize) -> Self {
        RiskReport {
            per_constraint: vec![],
            worst_case: f64::NAN,
            epsilon,
            holdout_size,
            infeasible: true,
        }
    }

    pub fn rate(&self, constraint: &str) -> Option<f64> {
        self.per_constraint
            .iter()
            .find(|c| c.constraint == constraint)
            .map(|c| c.rate)
    }
}

/// Empirical violation frequency of each of the `2|G| + 2|L|` generator and
/// line limits under the recourse `p_g(ξ) = p̄_g − α_g Σξ`.
pub fn violation_rates(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    solution: &DispatchSolution,
    holdout: &ScenarioSet,
    epsilon: f64,
) -> Result<RiskReport> {
    if !solution.is_optimal() {
        return Err(Error::InvalidArgument(format!(
            "solution status is {:?}, not optimal",
            solution.status
        )));
    }
    let n = holdout.n_samples();
    if n == 0 {
        return Err(Error::InvalidArgument("empty holdout set".into()));
    }
    let (g, l) = (case.n_generators(), case.n_lines());
    let mut counts = vec![0usize; 2 * (g + l)];
    for xi in holdout.rows() {
        let st = realized_state(case, ptdf, &solution.pbar, &solution.alpha, xi)?;
        for (i, gen) in case.generators.iter().enumerate() {
            let p = st.generation[i];
            counts[2 * i] += usize::from(p > gen.p_max + VIOLATION_SLACK);
            counts[2 * i + 1] += usize::from(p < gen.p_min - VIOLATION_SLACK);
        }
        for (j, line) in case.lines.iter().enumerate() {
            let f = st.flows[j];
            counts[2 * g + 2 * j] += usize::from(f > line.f_max + VIOLATION_SLACK);
            counts[2 * g + 2 * j + 1] += usize::from(f < -line.f_max - VIOLATION_SLACK);
        }
    }
    let per_constraint: Vec<ConstraintRate> = constraint_ids(case)
        .into_iter()
        .zip(&counts)
        .map(|(constraint, c)| ConstraintRate {
            constraint,
            rate: *c as f64 / n as f64,
        })
        .collect();
    let worst_case = per_constraint.iter().map(|c| c.rate).fold(0.0, f64::max);
    Ok(RiskReport {
        per_constraint,
        worst_case,
        epsilon,
        holdout_size: n,
        infeasible: false,
    })
}
