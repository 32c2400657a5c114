use serde::{Deserialize, Serialize};

use super::{line_covariance, FittedInputs};
use crate::error::Result;
use crate::grid::{GridCase, PtdfMatrix};
use crate::normal;

/// Exact satisfaction probability of one chance constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChanceAudit {
    pub constraint: String,
    pub probability: f64,
}

/// Constraint ids in the fixed order used across audits and risk reports:
/// `gen:<id>:max`, `gen:<id>:min` per generator, then `line:<id>:max`,
/// `line:<id>:min` per line.
pub fn constraint_ids(case: &GridCase) -> Vec<String> {
    let mut ids = Vec::with_capacity(2 * (case.n_generators() + case.n_lines()));
    for g in &case.generators {
        ids.push(format!("gen:{}:max", g.id));
        ids.push(format!("gen:{}:min", g.id));
    }
    for l in &case.lines {
        ids.push(format!("line:{}:max", l.id));
        ids.push(format!("line:{}:min", l.id));
    }
    ids
}

/// `P(Y ≤ c)` for `Y ~ Σ w_k N(mean_k, sd_k²)`; zero spread is a point mass.
fn mixture_le(weights: &[f64], means: &[f64], sds: &[f64], c: f64) -> f64 {
    weights
        .iter()
        .zip(means.iter().zip(sds))
        .map(|(w, (m, s))| {
            let p = if *s > 0.0 {
                normal::cdf((c - m) / s)
            } else if *m <= c {
                1.0
            } else {
                0.0
            };
            w * p
        })
        .sum()
}

/// Evaluates every chance constraint of a dispatch `(p̄, α)` with the exact
/// mixture CDF of the given inputs. Limits are relaxed by `slack` MW, the
/// same allowance the out-of-sample audit uses.
///
/// Line probabilities use the full per-component covariance of `η_l`, not
/// the cone variable, so the audit is independent of the built model.
pub fn audit_chance_constraints(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    inputs: &FittedInputs,
    pbar: &[f64],
    alpha: &[f64],
    slack: f64,
) -> Result<Vec<ChanceAudit>> {
    inputs.check(case)?;
    crate::grid::check_len("pbar", case.n_generators(), pbar.len())?;
    crate::grid::check_len("alpha", case.n_generators(), alpha.len())?;
    let ids = constraint_ids(case);
    let mut out = Vec::with_capacity(ids.len());
    let mut ids = ids.into_iter();
    let mut emit = |p: f64| {
        out.push(ChanceAudit {
            constraint: ids.next().expect("id per constraint"),
            probability: p,
        })
    };

    let om = &inputs.omega;
    let w = &om.weights;
    for (g, gen) in case.generators.iter().enumerate() {
        // p_g = p̄ − α Ω
        let means: Vec<f64> = (0..om.k)
            .map(|c| pbar[g] - alpha[g] * om.means[c][0])
            .collect();
        let sds: Vec<f64> = (0..om.k).map(|c| alpha[g].abs() * om.std_dev(c)).collect();
        emit(mixture_le(w, &means, &sds, gen.p_max + slack));
        let neg: Vec<f64> = means.iter().map(|m| -m).collect();
        emit(mixture_le(w, &neg, &sds, -(gen.p_min - slack)));
    }

    let nominal = crate::grid::nominal_state(case, ptdf, pbar)?;
    for (l, eta) in inputs.eta.iter().enumerate() {
        let gamma = ptdf.gamma(case, l, alpha);
        let v = [gamma, 1.0];
        let mut means = Vec::with_capacity(eta.k);
        let mut sds = Vec::with_capacity(eta.k);
        for c in 0..eta.k {
            let nu = &eta.means[c];
            means.push(nominal.flows[l] + v[0] * nu[0] + v[1] * nu[1]);
            let cov = line_covariance(case, ptdf, l, &eta.cov(c));
            let var = v[0] * v[0] * cov[(0, 0)]
                + 2.0 * v[0] * v[1] * cov[(0, 1)]
                + v[1] * v[1] * cov[(1, 1)];
            sds.push(var.max(0.0).sqrt());
        }
        let fmax = case.lines[l].f_max;
        emit(mixture_le(&eta.weights, &means, &sds, fmax + slack));
        let neg: Vec<f64> = means.iter().map(|m| -m).collect();
        emit(mixture_le(&eta.weights, &neg, &sds, fmax + slack));
    }
    Ok(out)
}
