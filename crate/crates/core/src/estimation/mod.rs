//! Gaussian and Gaussian-mixture estimation.
//!
//! * [`fit_mle_gaussian`]: closed-form maximum likelihood (biased covariance).
//! * [`fit_gmm_em`]: multi-start EM with k-means++ seeding, BIC selection and
//!   an optional zero-mean constraint on every component.
//! * [`GmmModel::linear_transform`] / [`transform_classical`]: push a fitted
//!   mixture through a linear map, which is how the fit-then-transform
//!   pipeline obtains the distributions of `Ω` and `η_l`.

mod em;
mod model;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::PtdfMatrix;

pub use em::{fit_gmm_best, fit_gmm_em, parameter_count, EmOptions, FitReport};
pub use model::{CovStructure, GmmModel, TiedForm};

/// Relative eigenvalue floor applied to fitted covariances.
pub const COVARIANCE_FLOOR: f64 = 1e-10;

/// Row-major `N × d` data matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    dim: usize,
    data: Vec<f64>,
}

impl Samples {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::InvalidArgument(format!(
                "{} values cannot form rows of dimension {dim}",
                data.len()
            )));
        }
        Ok(Samples { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("ragged rows".into()));
        }
        Samples::new(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// Applies `x ↦ A x` to every row.
    pub fn map_linear(&self, a: &DMatrix<f64>) -> Result<Samples> {
        if a.ncols() != self.dim {
            return Err(Error::Dimension {
                what: "transform columns",
                expected: self.dim,
                got: a.ncols(),
            });
        }
        let mut out = Vec::with_capacity(self.len() * a.nrows());
        for r in self.rows() {
            for i in 0..a.nrows() {
                out.push(r.iter().enumerate().map(|(j, x)| a[(i, j)] * x).sum());
            }
        }
        Samples::new(a.nrows(), out)
    }

    /// Mean of the per-dimension biased variances, falling back to the mean
    /// square and then to 1 when the data carry no scale. Sets the covariance
    /// floor.
    pub fn variance_scale(&self) -> f64 {
        let (mean, cov) = mle_moments(self);
        let v = cov.trace() / self.dim as f64;
        if v > 0.0 && v.is_finite() {
            return v;
        }
        let ms = mean.norm_squared() / self.dim as f64;
        if ms > 0.0 && ms.is_finite() {
            ms
        } else {
            1.0
        }
    }
}

/// Sample mean and biased (`1/N`) sample covariance, without flooring.
pub fn mle_moments(data: &Samples) -> (DVector<f64>, DMatrix<f64>) {
    let d = data.dim();
    let n = data.len() as f64;
    let mut mean = DVector::zeros(d);
    for r in data.rows() {
        for (m, x) in mean.iter_mut().zip(r) {
            *m += x;
        }
    }
    mean /= n;
    let mut cov = DMatrix::zeros(d, d);
    let mut c = vec![0.0; d];
    for r in data.rows() {
        for j in 0..d {
            c[j] = r[j] - mean[j];
        }
        for i in 0..d {
            for j in 0..=i {
                cov[(i, j)] += c[i] * c[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    (mean, cov)
}

/// Clamps the eigenvalues of a symmetric matrix from below. Returns whether
/// any eigenvalue moved.
pub(crate) fn floor_eigenvalues(m: &mut DMatrix<f64>, floor: f64) -> bool {
    if m.nrows() == 1 {
        if m[(0, 0)] < floor || !m[(0, 0)].is_finite() {
            m[(0, 0)] = floor;
            return true;
        }
        return false;
    }
    let eig = SymmetricEigen::new(m.clone());
    if eig.eigenvalues.iter().all(|&l| l >= floor) {
        return false;
    }
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let rebuilt =
        &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    *m = (&rebuilt + rebuilt.transpose()) * 0.5;
    true
}

/// Closed-form Gaussian MLE as a one-component model. A sample covariance
/// that is not positive definite is eigenvalue-floored at
/// `COVARIANCE_FLOOR × variance scale`; any other is returned as computed.
pub fn fit_mle_gaussian(data: &Samples) -> Result<GmmModel> {
    if data.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "gaussian MLE needs at least 2 samples, got {}",
            data.len()
        )));
    }
    let (mean, mut cov) = mle_moments(data);
    if cov.clone().cholesky().is_none() {
        floor_eigenvalues(&mut cov, COVARIANCE_FLOOR * data.variance_scale());
    }
    Ok(GmmModel::from_components(
        vec![1.0],
        vec![mean.iter().copied().collect()],
        vec![cov],
        CovStructure::Full,
        false,
    ))
}

/// `Σ_n ln Σ_k w_k N(x⁽ⁿ⁾; mean_k, cov_k)`.
pub fn gmm_loglik(model: &GmmModel, data: &Samples) -> Result<f64> {
    model.loglik(data)
}

/// CDF of a one-dimensional mixture.
pub fn gmm_cdf(model: &GmmModel, x: f64) -> f64 {
    model.cdf(x)
}

/// `(E, V)` of a one-dimensional mixture.
pub fn gmm_moments(model: &GmmModel) -> (f64, f64) {
    model.moments()
}

/// Which marginal of ξ to derive from a classical fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Omega,
    /// Line position.
    Line(usize),
}

/// The linear map taking wind-bus errors to `Ω` (one row) or to
/// `η_l = (Ω, Λ_l)` (two rows).
pub fn target_map(ptdf: &PtdfMatrix, wind_buses: &[usize], target: Target) -> DMatrix<f64> {
    let n = wind_buses.len();
    match target {
        Target::Omega => DMatrix::from_element(1, n, 1.0),
        Target::Line(l) => {
            let h = ptdf.h_wind(l, wind_buses);
            DMatrix::from_fn(2, n, |i, j| if i == 0 { 1.0 } else { h[j] })
        }
    }
}

/// Fit-then-transform: the distribution of `Ω` or `η_l` implied by a mixture
/// fitted to the wind-bus errors.
pub fn transform_classical(
    model: &GmmModel,
    ptdf: &PtdfMatrix,
    wind_buses: &[usize],
    target: Target,
) -> Result<GmmModel> {
    if model.dim != wind_buses.len() {
        return Err(Error::Dimension {
            what: "xi model dimension vs wind buses",
            expected: wind_buses.len(),
            got: model.dim,
        });
    }
    model.linear_transform(&target_map(ptdf, wind_buses, target))
}
