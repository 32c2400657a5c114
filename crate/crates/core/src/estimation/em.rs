use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{ComponentDensity, CovStructure, GmmModel};
use super::{floor_eigenvalues, Samples, COVARIANCE_FLOOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    /// Number of components.
    pub k: usize,
    pub structure: CovStructure,
    pub restarts: usize,
    pub seed: u64,
    /// Pin every component mean at the origin.
    pub zero_mean: bool,
    pub max_iter: usize,
    /// Stop once the relative log-likelihood improvement drops below this.
    pub tol: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            k: 1,
            structure: CovStructure::Full,
            restarts: 10,
            seed: 0,
            zero_mean: false,
            max_iter: 500,
            tol: 1e-6,
        }
    }
}

impl EmOptions {
    pub fn new(k: usize, structure: CovStructure, seed: u64) -> Self {
        EmOptions {
            k,
            structure,
            seed,
            ..EmOptions::default()
        }
    }

    pub fn zero_mean(mut self, on: bool) -> Self {
        self.zero_mean = on;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub log_likelihood: f64,
    pub bic: f64,
    pub n_params: usize,
    pub structure: CovStructure,
    /// Iterations used by the winning restart.
    pub iterations: usize,
    pub restarts_used: usize,
    /// Index of the winning restart.
    pub best_restart: usize,
    pub converged: bool,
    pub zero_mean: bool,
    /// Whether the covariance floor was active in the final M-step.
    pub floored: bool,
    /// Log-likelihood after every E-step of the winning restart.
    #[serde(skip)]
    pub trace: Vec<f64>,
}

/// Free parameters of a `k`-component mixture in `d` dimensions.
pub fn parameter_count(k: usize, d: usize, structure: CovStructure, zero_mean: bool) -> usize {
    let means = if zero_mean { 0 } else { k * d };
    (k - 1) + means + structure.parameter_count(k, d)
}

struct Params {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    covs: Vec<DMatrix<f64>>,
    /// Tied-scaled state.
    base: DMatrix<f64>,
    scales: Vec<f64>,
    floored: bool,
}

impl Params {
    fn to_model(&self, structure: CovStructure, zero_mean: bool) -> GmmModel {
        match structure {
            CovStructure::TiedScaled => GmmModel::tied_scaled(
                self.weights.clone(),
                self.means.clone(),
                self.base.clone(),
                self.scales.clone(),
                zero_mean,
            ),
            _ => GmmModel::from_components(
                self.weights.clone(),
                self.means.clone(),
                self.covs.clone(),
                structure,
                zero_mean,
            ),
        }
    }
}

struct Run {
    params: Params,
    ll: f64,
    iterations: usize,
    converged: bool,
    trace: Vec<f64>,
}

/// k-means++ seeding followed by nearest-centre assignment. Zero-mean fits
/// seed on the sample norms, since components then differ only in spread.
fn seed_assignment(data: &Samples, k: usize, zero_mean: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let n = data.len();
    let feat: Vec<Vec<f64>> = if zero_mean {
        data.rows()
            .map(|r| vec![r.iter().map(|x| x * x).sum::<f64>().sqrt()])
            .collect()
    } else {
        data.rows().map(<[f64]>::to_vec).collect()
    };
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();

    let mut centres: Vec<usize> = vec![rng.gen_range(0..n)];
    let mut best: Vec<f64> = feat.iter().map(|f| dist2(f, &feat[centres[0]])).collect();
    while centres.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, d) in best.iter().enumerate() {
                if u < *d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centres.push(next);
        for (b, f) in best.iter_mut().zip(&feat) {
            *b = b.min(dist2(f, &feat[next]));
        }
    }

    let mut assign: Vec<usize> = feat
        .iter()
        .map(|f| {
            (0..k)
                .min_by(|&a, &b| {
                    dist2(f, &feat[centres[a]]).total_cmp(&dist2(f, &feat[centres[b]]))
                })
                .unwrap()
        })
        .collect();
    // Coincident centres leave clusters empty; hand each one a random point.
    for c in 0..k {
        if !assign.contains(&c) {
            let i = rng.gen_range(0..n);
            assign[i] = c;
        }
    }
    assign
}

/// Responsibility matrix, row-major `N × K`.
struct Resp {
    k: usize,
    r: Vec<f64>,
}

fn m_step(
    data: &Samples,
    resp: &Resp,
    opts: &EmOptions,
    floor: f64,
    prev: Option<&Params>,
) -> Params {
    let (n, d, k) = (data.len(), data.dim(), opts.k);
    let mut nk = vec![0.0; k];
    for row in resp.r.chunks_exact(k) {
        for (a, r) in nk.iter_mut().zip(row) {
            *a += r;
        }
    }
    let empty = |c: usize| nk[c] < 1e-10 * n as f64;

    let mut means = vec![vec![0.0; d]; k];
    if !opts.zero_mean {
        let mut sums = vec![0.0; k * d];
        for (x, row) in data.rows().zip(resp.r.chunks_exact(k)) {
            for (c, r) in row.iter().enumerate() {
                for (acc, xj) in sums[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *acc += r * xj;
                }
            }
        }
        for c in 0..k {
            if empty(c) {
                means[c] = prev.map_or(vec![0.0; d], |p| p.means[c].clone());
            } else {
                means[c] = sums[c * d..(c + 1) * d].iter().map(|v| v / nk[c]).collect();
            }
        }
    }

    // Weighted scatter matrices (not normalised), lower triangles packed
    // row by row during accumulation.
    let tri = d * (d + 1) / 2;
    let mut packed = vec![0.0; k * tri];
    let mut diff = vec![0.0; d];
    for (x, row) in data.rows().zip(resp.r.chunks_exact(k)) {
        for c in 0..k {
            let w = row[c];
            if w == 0.0 {
                continue;
            }
            for ((dj, xj), mj) in diff.iter_mut().zip(x).zip(&means[c]) {
                *dj = xj - mj;
            }
            let acc = &mut packed[c * tri..(c + 1) * tri];
            let mut at = 0;
            for i in 0..d {
                let wi = w * diff[i];
                for (a, dj) in acc[at..at + i + 1].iter_mut().zip(&diff) {
                    *a += wi * dj;
                }
                at += i + 1;
            }
        }
    }
    let scatter: Vec<DMatrix<f64>> = (0..k)
        .map(|c| {
            let acc = &packed[c * tri..(c + 1) * tri];
            let mut s = DMatrix::zeros(d, d);
            let mut at = 0;
            for i in 0..d {
                for j in 0..=i {
                    s[(i, j)] = acc[at + j];
                    s[(j, i)] = acc[at + j];
                }
                at += i + 1;
            }
            s
        })
        .collect();

    let weights: Vec<f64> = nk.iter().map(|v| v / n as f64).collect();
    let mut floored = false;
    let mut covs = Vec::with_capacity(k);
    let mut base = DMatrix::identity(d, d);
    let mut scales = vec![1.0; k];

    match opts.structure {
        CovStructure::Full => {
            for c in 0..k {
                let mut cov = if empty(c) {
                    prev.map_or(DMatrix::identity(d, d) * floor, |p| p.covs[c].clone())
                } else {
                    &scatter[c] / nk[c]
                };
                floored |= floor_eigenvalues(&mut cov, floor);
                covs.push(cov);
            }
        }
        CovStructure::Spherical => {
            for c in 0..k {
                let mut s = if empty(c) {
                    prev.map_or(floor, |p| p.scales[c])
                } else {
                    scatter[c].trace() / (nk[c] * d as f64)
                };
                if !(s >= floor) {
                    s = floor;
                    floored = true;
                }
                scales[c] = s;
                covs.push(DMatrix::identity(d, d) * s);
            }
        }
        CovStructure::TiedScaled => {
            let mut tau2: Vec<f64> = prev.map_or(vec![1.0; k], |p| p.scales.clone());
            let mut c0 = prev.map_or(DMatrix::identity(d, d), |p| p.base.clone());
            for _ in 0..5 {
                let mut acc = DMatrix::zeros(d, d);
                for c in 0..k {
                    acc += &scatter[c] / tau2[c];
                }
                c0 = acc / n as f64;
                floored = floor_eigenvalues(&mut c0, floor);
                let inv = c0
                    .clone()
                    .cholesky()
                    .map(|ch| ch.inverse())
                    .unwrap_or_else(|| {
                        c0.clone()
                            .try_inverse()
                            .unwrap_or_else(|| DMatrix::identity(d, d))
                    });
                // Keep every τ² positive: a component whose points coincide
                // has zero scatter and would otherwise divide by zero above.
                let lo = floor / SymmetricEigen::new(c0.clone()).eigenvalues.max();
                for c in 0..k {
                    if !empty(c) {
                        tau2[c] = ((&inv * &scatter[c]).trace() / (nk[c] * d as f64)).max(lo);
                    }
                }
            }
            // Fix the scale ambiguity: Σ π_k τ_k² = 1.
            let norm: f64 = weights.iter().zip(&tau2).map(|(w, t)| w * t).sum();
            if norm > 0.0 && norm.is_finite() {
                tau2.iter_mut().for_each(|t| *t /= norm);
                c0 *= norm;
            }
            floored |= floor_eigenvalues(&mut c0, floor);
            let lmin = SymmetricEigen::new(c0.clone()).eigenvalues.min();
            for t in &mut tau2 {
                let lo = floor / lmin;
                if !(*t >= lo) {
                    *t = lo;
                    floored = true;
                }
            }
            covs = tau2.iter().map(|t| &c0 * *t).collect();
            base = c0;
            scales = tau2;
        }
    }
    Params {
        weights,
        means,
        covs,
        base,
        scales,
        floored,
    }
}

/// Fills `resp` and returns the total log-likelihood.
fn e_step(data: &Samples, params: &Params, resp: &mut Resp) -> Result<f64> {
    let k = resp.k;
    let comps = params
        .covs
        .iter()
        .enumerate()
        .map(|(c, cov)| ComponentDensity::new(params.weights[c], &params.means[c], cov))
        .collect::<Result<Vec<_>>>()?;
    let mut scratch = vec![0.0; data.dim()];
    let mut total = 0.0;
    for (x, row) in data.rows().zip(resp.r.chunks_exact_mut(k)) {
        let mut top = f64::NEG_INFINITY;
        for (t, c) in row.iter_mut().zip(&comps) {
            *t = c.log_weighted(x, &mut scratch);
            top = top.max(*t);
        }
        let mut sum = 0.0;
        for t in row.iter_mut() {
            *t = (*t - top).exp();
            sum += *t;
        }
        for t in row.iter_mut() {
            *t /= sum;
        }
        total += top + sum.ln();
    }
    if !total.is_finite() {
        return Err(Error::Model(
            "EM produced a non-finite log-likelihood".into(),
        ));
    }
    Ok(total)
}

fn run_once(data: &Samples, opts: &EmOptions, floor: f64, restart: usize) -> Result<Run> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(restart as u64);
    let k = opts.k;
    let assign = seed_assignment(data, k, opts.zero_mean, &mut rng);
    let mut resp = Resp {
        k,
        r: vec![0.0; data.len() * k],
    };
    for (n, &c) in assign.iter().enumerate() {
        resp.r[n * k + c] = 1.0;
    }

    let mut params = m_step(data, &resp, opts, floor, None);
    let mut trace = Vec::new();
    let mut ll = e_step(data, &params, &mut resp)?;
    trace.push(ll);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        params = m_step(data, &resp, opts, floor, Some(&params));
        let next = e_step(data, &params, &mut resp)?;
        trace.push(next);
        let rel = (next - ll) / ll.abs().max(1e-300);
        ll = next;
        if rel < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(Run {
        params,
        ll,
        iterations,
        converged,
        trace,
    })
}

/// Multi-start EM. Restart `r` draws from a ChaCha8 stream `r` keyed by
/// `opts.seed`, so results do not depend on thread scheduling. The restart
/// with the lowest BIC wins (first index on ties).
pub fn fit_gmm_em(data: &Samples, opts: &EmOptions) -> Result<(GmmModel, FitReport)> {
    let n = data.len();
    if opts.k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if n < 2 || n < opts.k {
        return Err(Error::InvalidArgument(format!(
            "cannot fit {} components to {n} samples",
            opts.k
        )));
    }
    if opts.restarts == 0 {
        return Err(Error::InvalidArgument("need at least one restart".into()));
    }
    let floor = COVARIANCE_FLOOR * data.variance_scale();
    let runs: Vec<Result<Run>> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| run_once(data, opts, floor, r))
        .collect();

    let n_params = parameter_count(opts.k, data.dim(), opts.structure, opts.zero_mean);
    let penalty = n_params as f64 * (n as f64).ln();
    let mut best: Option<(usize, Run)> = None;
    let mut last_err = None;
    for (r, run) in runs.into_iter().enumerate() {
        match run {
            Ok(run) => {
                if best.as_ref().map_or(true, |(_, b)| run.ll > b.ll) {
                    best = Some((r, run));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    let Some((restart, run)) = best else {
        return Err(last_err.unwrap_or_else(|| Error::Model("no EM restart succeeded".into())));
    };
    let model = run.params.to_model(opts.structure, opts.zero_mean);
    let report = FitReport {
        log_likelihood: run.ll,
        bic: -2.0 * run.ll + penalty,
        n_params,
        structure: opts.structure,
        iterations: run.iterations,
        restarts_used: opts.restarts,
        best_restart: restart,
        converged: run.converged,
        zero_mean: opts.zero_mean,
        floored: run.params.floored,
        trace: run.trace,
    };
    Ok((model, report))
}

/// Fits every listed structure and keeps the lowest BIC (first on ties).
pub fn fit_gmm_best(
    data: &Samples,
    opts: &EmOptions,
    structures: &[CovStructure],
) -> Result<(GmmModel, FitReport)> {
    let mut best: Option<(GmmModel, FitReport)> = None;
    for &s in structures {
        let fit = fit_gmm_em(
            data,
            &EmOptions {
                structure: s,
                ..opts.clone()
            },
        )?;
        if best.as_ref().map_or(true, |(_, b)| fit.1.bic < b.bic) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no covariance structure given".into()))
}
