use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use super::Samples;
use crate::error::{Error, Result};
use crate::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovStructure {
    /// Free covariance per component.
    Full,
    /// `C_k = τ_k² C₀` with a shared base `C₀`.
    TiedScaled,
    /// `C_k = s_k I`.
    Spherical,
}

impl CovStructure {
    /// Free covariance parameters for `k` components in `d` dimensions.
    pub fn parameter_count(self, k: usize, d: usize) -> usize {
        let sym = d * (d + 1) / 2;
        match self {
            CovStructure::Full => k * sym,
            CovStructure::TiedScaled => sym + k - 1,
            CovStructure::Spherical => k,
        }
    }
}

/// Gaussian mixture `Σ_k w_k N(mean_k, cov_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmModel {
    pub dim: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub structure: CovStructure,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<Vec<f64>>>,
    pub zero_mean: bool,
    /// Shared base `C₀` for tied-scaled models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<Vec<f64>>>,
    /// Per-component scales `τ_k²` for tied-scaled models.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scales: Option<Vec<f64>>,
}

/// A mixture whose covariances share one shape: `C_k = τ_k² C₀`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiedForm {
    pub base: DMatrix<f64>,
    pub scales: Vec<f64>,
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Per-component quantities for density evaluation.
pub(crate) struct ComponentDensity {
    pub log_weight: f64,
    pub mean: Vec<f64>,
    /// Lower Cholesky factor, row-major `d × d`.
    pub chol: Vec<f64>,
    /// Reciprocals of the factor's diagonal.
    pub inv_diag: Vec<f64>,
    /// `−½ (d ln 2π + ln det C)`.
    pub log_norm: f64,
}

impl ComponentDensity {
    pub fn new(weight: f64, mean: &[f64], cov: &DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        let chol = Cholesky::<f64, Dyn>::new(cov.clone())
            .ok_or_else(|| Error::Model("covariance is not positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>();
        let mut flat = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                flat[i * d + j] = l[(i, j)];
            }
        }
        Ok(ComponentDensity {
            log_weight: weight.ln(),
            mean: mean.to_vec(),
            inv_diag: (0..d).map(|i| 1.0 / l[(i, i)]).collect(),
            chol: flat,
            log_norm: -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det),
        })
    }

    /// `ln w + ln N(x; mean, cov)`; `scratch` must have length `d`.
    #[inline]
    pub fn log_weighted(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = self.mean.len();
        let mut q = 0.0;
        for i in 0..d {
            let mut s = x[i] - self.mean[i];
            let row = &self.chol[i * d..i * d + i];
            for (lij, yj) in row.iter().zip(scratch.iter()) {
                s -= lij * yj;
            }
            let y = s * self.inv_diag[i];
            scratch[i] = y;
            q += y * y;
        }
        self.log_weight + self.log_norm - 0.5 * q
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GmmModel {
    pub fn from_components(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<DMatrix<f64>>,
        structure: CovStructure,
        zero_mean: bool,
    ) -> Self {
        let dim = means.first().map_or(0, Vec::len);
        GmmModel {
            dim,
            k: weights.len(),
            structure,
            weights,
            means,
            covariances: covariances.iter().map(to_rows).collect(),
            zero_mean,
            base: None,
            scales: None,
        }
    }

    /// Tied-scaled model `C_k = τ_k² C₀`.
    pub fn tied_scaled(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        base: DMatrix<f64>,
        scales: Vec<f64>,
        zero_mean: bool,
    ) -> Self {
        let covs: Vec<DMatrix<f64>> = scales.iter().map(|s| &base * *s).collect();
        let mut m =
            GmmModel::from_components(weights, means, covs, CovStructure::TiedScaled, zero_mean);
        m.base = Some(to_rows(&base));
        m.scales = Some(scales);
        m
    }

    pub fn mean(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.means[k])
    }

    pub fn cov(&self, k: usize) -> DMatrix<f64> {
        from_rows(&self.covariances[k])
    }

    /// Checks the structural invariants: simplex weights, consistent shapes,
    /// symmetric positive definite covariances, exact zero means when flagged.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Model(m));
        if self.k == 0
            || self.weights.len() != self.k
            || self.means.len() != self.k
            || self.covariances.len() != self.k
        {
            return bad(format!("inconsistent component count K = {}", self.k));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return bad("negative or NaN weight".into());
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return bad(format!("weights sum to {total}"));
        }
        for k in 0..self.k {
            if self.means[k].len() != self.dim || self.covariances[k].len() != self.dim {
                return bad(format!("component {k} has wrong dimension"));
            }
            if self.zero_mean && self.means[k].iter().any(|&m| m != 0.0) {
                return bad(format!(
                    "component {k} has a non-zero mean in a zero-mean model"
                ));
            }
            let c = self.cov(k);
            let asym = (&c - c.transpose()).amax();
            if asym > 1e-9 * c.amax().max(1e-300) {
                return bad(format!("covariance {k} is not symmetric"));
            }
            if Cholesky::new(c).is_none() {
                return bad(format!("covariance {k} is not positive definite"));
            }
        }
        Ok(())
    }

    /// The shared-shape view used by the line-constraint reformulation.
    ///
    /// Tied-scaled models return their stored base and scales, spherical
    /// models return `(I, s_k)`, and any other model is accepted when all of
    /// its covariances are proportional to the first one (`τ_1² = 1`).
    pub fn tied_form(&self) -> Option<TiedForm> {
        match self.structure {
            CovStructure::TiedScaled => {
                if let (Some(base), Some(scales)) = (&self.base, &self.scales) {
                    return Some(TiedForm {
                        base: from_rows(base),
                        scales: scales.clone(),
                    });
                }
            }
            CovStructure::Spherical => {
                return Some(TiedForm {
                    base: DMatrix::identity(self.dim, self.dim),
                    scales: (0..self.k).map(|k| self.covariances[k][0][0]).collect(),
                });
            }
            CovStructure::Full => {}
        }
        let base = self.cov(0);
        let tr0 = base.trace();
        if !(tr0 > 0.0) {
            return None;
        }
        let mut scales = Vec::with_capacity(self.k);
        for k in 0..self.k {
            let c = self.cov(k);
            let s = c.trace() / tr0;
            if (&c - &base * s).amax() > 1e-9 * c.amax().max(1e-300) {
                return None;
            }
            scales.push(s);
        }
        Some(TiedForm { base, scales })
    }

    /// Distribution of `A x` for `x` following this mixture. Structure and
    /// the zero-mean flag carry over; spherical models become tied-scaled
    /// with base `A Aᵀ`.
    pub fn linear_transform(&self, a: &DMatrix<f64>) -> Result<GmmModel> {
        if a.ncols() != self.dim {
            return Err(Error::Dimension {
                what: "transform columns",
                expected: self.dim,
                got: a.ncols(),
            });
        }
        let means: Vec<Vec<f64>> = (0..self.k)
            .map(|k| (a * self.mean(k)).iter().copied().collect())
            .collect();
        let means = if self.zero_mean {
            means.into_iter().map(|m| vec![0.0; m.len()]).collect()
        } else {
            means
        };
        let tied = match self.structure {
            CovStructure::Full => None,
            _ => self.tied_form(),
        };
        Ok(match tied {
            Some(t) => GmmModel::tied_scaled(
                self.weights.clone(),
                means,
                a * &t.base * a.transpose(),
                t.scales,
                self.zero_mean,
            ),
            None => GmmModel::from_components(
                self.weights.clone(),
                means,
                (0..self.k)
                    .map(|k| a * self.cov(k) * a.transpose())
                    .collect(),
                CovStructure::Full,
                self.zero_mean,
            ),
        })
    }

    pub(crate) fn densities(&self) -> Result<Vec<ComponentDensity>> {
        (0..self.k)
            .map(|k| ComponentDensity::new(self.weights[k], &self.means[k], &self.cov(k)))
            .collect()
    }

    /// `Σ_n ln Σ_k w_k N(x⁽ⁿ⁾; mean_k, cov_k)`, via log-sum-exp.
    pub fn loglik(&self, data: &Samples) -> Result<f64> {
        if data.dim() != self.dim {
            return Err(Error::Dimension {
                what: "data dimension vs model",
                expected: self.dim,
                got: data.dim(),
            });
        }
        let comps = self.densities()?;
        let mut scratch = vec![0.0; self.dim];
        let mut terms = vec![0.0; self.k];
        let mut total = 0.0;
        for x in data.rows() {
            for (t, c) in terms.iter_mut().zip(&comps) {
                *t = c.log_weighted(x, &mut scratch);
            }
            total += log_sum_exp(&terms);
        }
        if !total.is_finite() {
            return Err(Error::Model(format!(
                "non-finite log-likelihood ({total}); degenerate covariance"
            )));
        }
        Ok(total)
    }

    fn require_1d(&self) {
        assert_eq!(
            self.dim, 1,
            "operation defined for one-dimensional mixtures only"
        );
    }

    /// Mixture CDF `Σ_k w_k Φ((x − m_k)/σ_k)` of a one-dimensional model.
    pub fn cdf(&self, x: f64) -> f64 {
        self.require_1d();
        (0..self.k)
            .map(|k| {
                let m = self.means[k][0];
                let s = self.covariances[k][0][0].sqrt();
                let p = if s > 0.0 {
                    normal::cdf((x - m) / s)
                } else if x >= m {
                    1.0
                } else {
                    0.0
                };
                self.weights[k] * p
            })
            .sum()
    }

    /// `(E, V)` of a one-dimensional mixture.
    pub fn moments(&self) -> (f64, f64) {
        self.require_1d();
        if self.zero_mean {
            let v = (0..self.k)
                .map(|k| self.weights[k] * self.covariances[k][0][0])
                .sum();
            return (0.0, v);
        }
        let e: f64 = (0..self.k)
            .map(|k| self.weights[k] * self.means[k][0])
            .sum();
        let second: f64 = (0..self.k)
            .map(|k| self.weights[k] * (self.covariances[k][0][0] + self.means[k][0].powi(2)))
            .sum();
        (e, second - e * e)
    }

    /// Standard deviation of component `k` of a one-dimensional model.
    pub fn std_dev(&self, k: usize) -> f64 {
        self.require_1d();
        self.covariances[k][0][0].sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GmmModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        GmmModel::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}
