//! The two ways of turning training data into [`FittedInputs`].

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimation::{
    fit_gmm_em, fit_mle_gaussian, CovStructure, EmOptions, FitReport, GmmModel, Samples,
};
use crate::grid::{GridCase, PtdfMatrix};
use crate::reformulate::{Distribution, FittedInputs};
use crate::scenarios::{to_eta, to_omega, ScenarioSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub distribution: Distribution,
    #[serde(rename = "K")]
    pub k: usize,
    pub restarts: usize,
    pub seed: u64,
    pub zero_mean: bool,
}

impl FitOptions {
    pub fn gaussian() -> Self {
        FitOptions {
            distribution: Distribution::Gaussian,
            k: 1,
            restarts: 10,
            seed: 0,
            zero_mean: false,
        }
    }

    pub fn gmm(k: usize, seed: u64) -> Self {
        FitOptions {
            distribution: Distribution::Gmm,
            k,
            restarts: 10,
            seed,
            zero_mean: false,
        }
    }
}

/// Per-fit seed so each EM call owns an independent stream.
fn sub_seed(seed: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index)
}

/// Fits one model. Gaussian fits are closed form unless the mean is pinned
/// at zero; mixtures with several components use the shared-shape
/// covariance the line cones need (or a free 1-d variance for `Ω`).
fn fit_one(
    data: &Samples,
    opts: &FitOptions,
    seed: u64,
    structure: CovStructure,
) -> Result<(GmmModel, Option<FitReport>)> {
    if opts.distribution == Distribution::Gaussian && !opts.zero_mean {
        return Ok((fit_mle_gaussian(data)?, None));
    }
    let k = if opts.distribution == Distribution::Gaussian {
        1
    } else {
        opts.k
    };
    let structure = if k == 1 {
        CovStructure::Full
    } else {
        structure
    };
    let em = EmOptions {
        restarts: opts.restarts,
        zero_mean: opts.zero_mean,
        ..EmOptions::new(k, structure, seed)
    };
    let (m, r) = fit_gmm_em(data, &em)?;
    Ok((m, Some(r)))
}

/// Fit-then-transform: one mixture over the wind-bus columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalFit {
    pub xi_model: GmmModel,
    pub report: Option<FitReport>,
    /// Bus positions of the modelled columns.
    pub wind_buses: Vec<usize>,
    pub inputs: FittedInputs,
    #[serde(skip)]
    pub fit_time: f64,
}

pub fn fit_classical(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    train: &ScenarioSet,
    opts: &FitOptions,
) -> Result<ClassicalFit> {
    let start = Instant::now();
    let wind_buses = case.wind_buses();
    let data = train.columns(&wind_buses);
    let (xi_model, report) = fit_one(
        &data,
        opts,
        sub_seed(opts.seed, 0),
        CovStructure::TiedScaled,
    )?;
    let fit_time = start.elapsed().as_secs_f64();
    let inputs = FittedInputs::from_classical(&xi_model, ptdf, &wind_buses)?;
    Ok(ClassicalFit {
        xi_model,
        report,
        wind_buses,
        inputs,
        fit_time,
    })
}

/// Transform-then-fit: a model of `Ω` plus one 2-d model per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintInformedFit {
    pub inputs: FittedInputs,
    pub omega_report: Option<FitReport>,
    pub eta_reports: Vec<Option<FitReport>>,
    #[serde(skip)]
    pub fit_time: f64,
}

pub fn fit_constraint_informed(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    train: &ScenarioSet,
    opts: &FitOptions,
) -> Result<ConstraintInformedFit> {
    let start = Instant::now();
    let omega_data = to_omega(train).to_samples();
    let (omega, omega_report) = fit_one(
        &omega_data,
        opts,
        sub_seed(opts.seed, 1),
        CovStructure::Full,
    )?;
    let mut eta = Vec::with_capacity(case.n_lines());
    let mut eta_reports = Vec::with_capacity(case.n_lines());
    for l in 0..case.n_lines() {
        let data = to_eta(train, ptdf, l)?.to_samples();
        let (m, r) = fit_one(
            &data,
            opts,
            sub_seed(opts.seed, 2 + l as u64),
            CovStructure::TiedScaled,
        )?;
        eta.push(m);
        eta_reports.push(r);
    }
    Ok(ConstraintInformedFit {
        inputs: FittedInputs { omega, eta },
        omega_report,
        eta_reports,
        fit_time: start.elapsed().as_secs_f64(),
    })
}
