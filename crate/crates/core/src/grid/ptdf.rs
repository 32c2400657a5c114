use nalgebra::{Cholesky, DMatrix, DVector};

use super::{check_len, GridCase};
use crate::error::{Error, Result};

/// Power transfer distribution factors, `|L| × |B|`.
///
/// Computed by deleting the slack row and column of the bus susceptance
/// matrix; the slack column of `H` is identically zero, so an injection at
/// the slack (balanced by the slack itself) moves no flow.
#[derive(Debug, Clone, PartialEq)]
pub struct PtdfMatrix {
    h: DMatrix<f64>,
}

/// Reduced susceptance matrix (slack removed) in per unit, with the map from
/// bus position to reduced position.
fn reduced_susceptance(case: &GridCase) -> (DMatrix<f64>, Vec<Option<usize>>) {
    let n = case.n_buses();
    let slack = case.slack_index();
    let mut map = vec![None; n];
    let mut k = 0;
    for (i, m) in map.iter_mut().enumerate() {
        if i != slack {
            *m = Some(k);
            k += 1;
        }
    }
    let mut b = DMatrix::zeros(n - 1, n - 1);
    for l in 0..case.n_lines() {
        let (f, t) = case.line_ends(l);
        let y = 1.0 / case.lines[l].reactance;
        if let Some(i) = map[f] {
            b[(i, i)] += y;
        }
        if let Some(j) = map[t] {
            b[(j, j)] += y;
        }
        if let (Some(i), Some(j)) = (map[f], map[t]) {
            b[(i, j)] -= y;
            b[(j, i)] -= y;
        }
    }
    (b, map)
}

/// Distribution factors below this magnitude are round-off from the
/// inverse (a radial line no injection can reach, for instance) and are
/// stored as exact zeros. Left in, they turn rows of the dispatch model
/// into near-constant rows with huge normalised right-hand sides.
pub const PTDF_ZERO: f64 = 1e-10;

fn factor(b: DMatrix<f64>) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(b).ok_or(Error::SingularSusceptance)
}

pub(super) fn solve_angles(case: &GridCase, p: &[f64]) -> Result<Vec<f64>> {
    let (b, map) = reduced_susceptance(case);
    let mut theta = vec![0.0; case.n_buses()];
    if b.nrows() == 0 {
        return Ok(theta);
    }
    let chol = factor(b)?;
    let mut rhs = DVector::zeros(case.n_buses() - 1);
    for (i, m) in map.iter().enumerate() {
        if let Some(k) = m {
            rhs[*k] = p[i] / case.base_mva;
        }
    }
    let x = chol.solve(&rhs);
    for (i, m) in map.iter().enumerate() {
        if let Some(k) = m {
            theta[i] = x[*k];
        }
    }
    Ok(theta)
}

impl PtdfMatrix {
    pub fn compute(case: &GridCase) -> Result<Self> {
        let n = case.n_buses();
        let (b, map) = reduced_susceptance(case);
        let mut h = DMatrix::zeros(case.n_lines(), n);
        if b.nrows() == 0 {
            return Ok(PtdfMatrix { h });
        }
        let inv = factor(b)?.inverse();
        let reduced_row = |i: usize, k: usize| map[i].map_or(0.0, |r| inv[(r, k)]);
        for l in 0..case.n_lines() {
            let (f, t) = case.line_ends(l);
            let y = 1.0 / case.lines[l].reactance;
            for i in 0..n {
                if let Some(k) = map[i] {
                    let v = y * (reduced_row(f, k) - reduced_row(t, k));
                    h[(l, i)] = if v.abs() < PTDF_ZERO { 0.0 } else { v };
                }
            }
        }
        Ok(PtdfMatrix { h })
    }

    pub fn from_matrix(h: DMatrix<f64>) -> Self {
        PtdfMatrix { h }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn n_lines(&self) -> usize {
        self.h.nrows()
    }

    pub fn n_buses(&self) -> usize {
        self.h.ncols()
    }

    pub fn get(&self, l: usize, i: usize) -> f64 {
        self.h[(l, i)]
    }

    /// Row `l` as a vector over buses.
    pub fn row(&self, l: usize) -> Vec<f64> {
        self.h.row(l).iter().copied().collect()
    }

    /// `Σ_i H_{li} v_i`.
    pub fn row_dot(&self, l: usize, v: &[f64]) -> f64 {
        self.h.row(l).iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Line flows `H·p` for an injection vector over buses.
    pub fn flows(&self, p: &[f64]) -> Result<Vec<f64>> {
        check_len("injections", self.n_buses(), p.len())?;
        Ok((0..self.n_lines()).map(|l| self.row_dot(l, p)).collect())
    }

    /// `h_lᵍᵉⁿ`: row `l` gathered onto generator positions.
    pub fn h_gen(&self, case: &GridCase, l: usize) -> Vec<f64> {
        (0..case.n_generators())
            .map(|g| self.h[(l, case.generator_bus(g))])
            .collect()
    }

    /// `h_lʷⁱⁿᵈ`: row `l` restricted to the given (wind) bus positions.
    pub fn h_wind(&self, l: usize, wind_buses: &[usize]) -> Vec<f64> {
        wind_buses.iter().map(|&i| self.h[(l, i)]).collect()
    }

    /// `γ_l(α) = −(h_lᵍᵉⁿ)ᵀα`, the flow response on line `l` per MW of
    /// aggregate forecast error absorbed by the recourse.
    pub fn gamma(&self, case: &GridCase, l: usize, alpha: &[f64]) -> f64 {
        -(0..case.n_generators())
            .map(|g| self.h[(l, case.generator_bus(g))] * alpha[g])
            .sum::<f64>()
    }
}
