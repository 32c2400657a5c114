#![allow(dead_code)]

use ccopf::estimation::{CovStructure, GmmModel};
use ccopf::grid::{load_case, GridCase, PtdfMatrix};
use ccopf::reformulate::FittedInputs;
use nalgebra::DMatrix;

pub fn fixture(name: &str) -> (GridCase, PtdfMatrix) {
    let case = load_case(format!(
        "{}/../../fixtures/{name}.json",
        env!("CARGO_MANIFEST_DIR")
    ))
    .unwrap();
    let ptdf = PtdfMatrix::compute(&case).unwrap();
    (case, ptdf)
}

pub fn scalar(weights: &[f64], means: &[f64], vars: &[f64]) -> GmmModel {
    GmmModel::from_components(
        weights.to_vec(),
        means.iter().map(|m| vec![*m]).collect(),
        vars.iter()
            .map(|v| DMatrix::from_element(1, 1, *v))
            .collect(),
        CovStructure::Full,
        false,
    )
}

/// Mixture inputs with the same component layout on `Ω` and every line.
pub fn mixture_inputs(
    case: &GridCase,
    weights: &[f64],
    omega_means: &[f64],
    scales: &[f64],
    var: f64,
) -> FittedInputs {
    let base = DMatrix::from_row_slice(2, 2, &[var, 0.3 * var, 0.3 * var, 0.5 * var]);
    let omega = scalar(
        weights,
        omega_means,
        &scales.iter().map(|s| s * var).collect::<Vec<_>>(),
    );
    let eta = (0..case.n_lines())
        .map(|_| {
            GmmModel::tied_scaled(
                weights.to_vec(),
                omega_means.iter().map(|m| vec![*m, 0.1 * m]).collect(),
                base.clone(),
                scales.to_vec(),
                false,
            )
        })
        .collect();
    FittedInputs { omega, eta }
}
