//! Forecast-error datasets and the constraint-informed data transforms.
//!
//! A [`ScenarioSet`] holds `N` samples of the per-bus error vector ξ (MW);
//! buses without wind carry identically zero columns. From it we derive the
//! aggregate error `Ω = 1ᵀξ` and, per line, the pair
//! `η_l = (Ω, (h_lʷⁱⁿᵈ)ᵀξ)`.

mod csv_io;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::Samples;
use crate::grid::{GridCase, PtdfMatrix};

pub use csv_io::{ingest_csv, IngestedErrors};

/// How distribution parameters (and ingested errors) map to MW.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorUnits {
    /// Fractions of each bus's wind forecast.
    #[default]
    PerUnit,
    /// Already in MW.
    Mw,
}

/// Wind buses of a case together with the MW scale applied to unit draws.
#[derive(Debug, Clone)]
pub struct WindProfile {
    pub bus_ids: Vec<u32>,
    /// `(bus position, MW per unit of error)`.
    pub units: Vec<(usize, f64)>,
}

impl WindProfile {
    pub fn from_case(case: &GridCase, units: ErrorUnits) -> Self {
        WindProfile {
            bus_ids: case.buses.iter().map(|b| b.id).collect(),
            units: case
                .wind_buses()
                .into_iter()
                .map(|i| {
                    let scale = match units {
                        ErrorUnits::PerUnit => case.buses[i].wind_forecast,
                        ErrorUnits::Mw => 1.0,
                    };
                    (i, scale)
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    pub label: String,
    pub seed: u64,
    bus_ids: Vec<u32>,
    /// Row-major `N × |B|`.
    data: Vec<f64>,
}

impl ScenarioSet {
    pub fn from_rows(
        label: impl Into<String>,
        seed: u64,
        bus_ids: Vec<u32>,
        rows: &[Vec<f64>],
    ) -> Result<Self> {
        let nb = bus_ids.len();
        let mut data = Vec::with_capacity(rows.len() * nb);
        for r in rows {
            if r.len() != nb {
                return Err(Error::Dimension {
                    what: "scenario row",
                    expected: nb,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(ScenarioSet {
            label: label.into(),
            seed,
            bus_ids,
            data,
        })
    }

    pub fn zeros(label: impl Into<String>, bus_ids: Vec<u32>, n: usize) -> Self {
        let nb = bus_ids.len();
        ScenarioSet {
            label: label.into(),
            seed: 0,
            bus_ids,
            data: vec![0.0; n * nb],
        }
    }

    pub fn n_samples(&self) -> usize {
        if self.bus_ids.is_empty() {
            0
        } else {
            self.data.len() / self.bus_ids.len()
        }
    }

    pub fn n_buses(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn bus_ids(&self) -> &[u32] {
        &self.bus_ids
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let nb = self.n_buses();
        &self.data[n * nb..(n + 1) * nb]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_buses().max(1))
    }

    pub fn row_mut(&mut self, n: usize) -> &mut [f64] {
        let nb = self.n_buses();
        &mut self.data[n * nb..(n + 1) * nb]
    }

    /// Samples restricted to the given bus positions, as estimation input.
    pub fn columns(&self, buses: &[usize]) -> Samples {
        let mut out = Vec::with_capacity(self.n_samples() * buses.len());
        for r in self.rows() {
            out.extend(buses.iter().map(|&i| r[i]));
        }
        Samples::new(buses.len(), out).expect("consistent shape")
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, idx: &[usize], label: impl Into<String>) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.n_buses());
        for &n in idx {
            data.extend_from_slice(self.row(n));
        }
        ScenarioSet {
            label: label.into(),
            seed: self.seed,
            bus_ids: self.bus_ids.clone(),
            data,
        }
    }

    /// `a·self + other`, elementwise.
    pub fn axpy(&self, a: f64, other: &ScenarioSet) -> Result<Self> {
        if self.bus_ids != other.bus_ids || self.data.len() != other.data.len() {
            return Err(Error::Dimension {
                what: "scenario sets",
                expected: self.data.len(),
                got: other.data.len(),
            });
        }
        Ok(ScenarioSet {
            label: self.label.clone(),
            seed: self.seed,
            bus_ids: self.bus_ids.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + y)
                .collect(),
        })
    }
}

fn generate(
    profile: &WindProfile,
    n_samples: usize,
    seed: u64,
    label: &str,
    mut draw: impl FnMut(&mut ChaCha8Rng) -> f64,
) -> ScenarioSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = ScenarioSet::zeros(label, profile.bus_ids.clone(), n_samples);
    for n in 0..n_samples {
        let row = set.row_mut(n);
        for &(i, scale) in &profile.units {
            row[i] = draw(&mut rng) * scale;
        }
    }
    set.seed = seed;
    set
}

/// I.i.d. Gaussian unit errors `μ + σ z` on every wind bus, scaled to MW.
pub fn generate_gaussian(
    profile: &WindProfile,
    n_samples: usize,
    mu: f64,
    sigma: f64,
    seed: u64,
) -> Result<ScenarioSet> {
    if !(sigma >= 0.0) || !mu.is_finite() || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "gaussian parameters must be finite with sigma >= 0 (mu = {mu}, sigma = {sigma})"
        )));
    }
    Ok(generate(
        profile,
        n_samples,
        seed,
        "synthetic-gaussian",
        |rng| {
            let z: f64 = rng.sample(StandardNormal);
            mu + sigma * z
        },
    ))
}

/// I.i.d. Cauchy unit errors by inverse CDF, `x₀ + γ tan(π(u − ½))`.
pub fn generate_cauchy(
    profile: &WindProfile,
    n_samples: usize,
    x0: f64,
    gamma: f64,
    seed: u64,
) -> Result<ScenarioSet> {
    if !(gamma > 0.0) || !x0.is_finite() || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "cauchy parameters must be finite with gamma > 0 (x0 = {x0}, gamma = {gamma})"
        )));
    }
    Ok(generate(
        profile,
        n_samples,
        seed,
        "synthetic-cauchy",
        |rng| {
            let mut u: f64 = rng.gen();
            while u == 0.0 {
                u = rng.gen();
            }
            x0 + gamma * (std::f64::consts::PI * (u - 0.5)).tan()
        },
    ))
}

/// Aggregate errors `Ω⁽ⁿ⁾ = Σ_i ξ_i⁽ⁿ⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaSamples {
    pub values: Vec<f64>,
}

impl OmegaSamples {
    pub fn to_samples(&self) -> Samples {
        Samples::new(1, self.values.clone()).expect("1-d")
    }
}

/// Line error pairs `η_l⁽ⁿ⁾ = (Ω⁽ⁿ⁾, Σ_i H_li ξ_i⁽ⁿ⁾)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaSamples {
    pub line: usize,
    pub values: Vec<[f64; 2]>,
}

impl EtaSamples {
    pub fn to_samples(&self) -> Samples {
        Samples::new(2, self.values.iter().flatten().copied().collect()).expect("2-d")
    }
}

pub fn to_omega(set: &ScenarioSet) -> OmegaSamples {
    OmegaSamples {
        values: set.rows().map(|r| r.iter().sum()).collect(),
    }
}

pub fn to_eta(set: &ScenarioSet, ptdf: &PtdfMatrix, line: usize) -> Result<EtaSamples> {
    if line >= ptdf.n_lines() {
        return Err(Error::InvalidArgument(format!(
            "no line at position {line}"
        )));
    }
    if ptdf.n_buses() != set.n_buses() {
        return Err(Error::Dimension {
            what: "ptdf columns vs scenario buses",
            expected: set.n_buses(),
            got: ptdf.n_buses(),
        });
    }
    Ok(EtaSamples {
        line,
        values: set
            .rows()
            .map(|r| [r.iter().sum(), ptdf.row_dot(line, r)])
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

/// Seeded shuffle of `0..n` cut at `⌊f·n⌋`.
pub fn split_indices(n: usize, spec: &SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in (0, 1), got {}",
            spec.train_fraction
        )));
    }
    if n < 2 {
        return Err(Error::InvalidArgument(format!("cannot split {n} samples")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let cut = (spec.train_fraction * n as f64).floor() as usize;
    let holdout = idx.split_off(cut);
    Ok((idx, holdout))
}

/// Splits into `(train, holdout)` of sizes `⌊fN⌋` and `N − ⌊fN⌋`.
pub fn split(set: &ScenarioSet, spec: &SplitSpec) -> Result<(ScenarioSet, ScenarioSet)> {
    let (train, holdout) = split_indices(set.n_samples(), spec)?;
    Ok((
        set.select(&train, format!("{}-train", set.label)),
        set.select(&holdout, format!("{}-holdout", set.label)),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_case;

    fn case3() -> GridCase {
        load_case(concat!(
            env!("CARGO_MANIFEST_DIR"),
            "/../../fixtures/case3.json"
        ))
        .unwrap()
    }

    #[test]
    fn omega_row_sums() {
        let set = ScenarioSet::from_rows("t", 0, vec![1, 2, 3], &[vec![1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(to_omega(&set).values, vec![6.0]);
        let zero = ScenarioSet::zeros("z", vec![1, 2], 4);
        assert_eq!(to_omega(&zero).values, vec![0.0; 4]);
    }

    #[test]
    fn eta_single_wind_bus() {
        let set = ScenarioSet::from_rows("t", 0, vec![1, 2], &[vec![0.0, 4.0]]).unwrap();
        let h = PtdfMatrix::from_matrix(nalgebra::DMatrix::from_row_slice(
            2,
            2,
            &[0.0, 0.5, 0.0, 0.0],
        ));
        assert_eq!(to_eta(&set, &h, 0).unwrap().values, vec![[4.0, 2.0]]);
        assert_eq!(to_eta(&set, &h, 1).unwrap().values, vec![[4.0, 0.0]]);
        assert!(to_eta(&set, &h, 2).is_err());
    }

    #[test]
    fn generation_is_seeded_and_zero_off_wind() {
        let case = case3();
        let profile = WindProfile::from_case(&case, ErrorUnits::PerUnit);
        let a = generate_gaussian(&profile, 50, -0.024, 0.036, 7).unwrap();
        let b = generate_gaussian(&profile, 50, -0.024, 0.036, 7).unwrap();
        let c = generate_gaussian(&profile, 50, -0.024, 0.036, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for r in a.rows() {
            assert_eq!(r[0], 0.0);
            assert_eq!(r[1], 0.0);
        }
        let d = generate_cauchy(&profile, 50, 0.0, 0.02, 7).unwrap();
        assert_eq!(d, generate_cauchy(&profile, 50, 0.0, 0.02, 7).unwrap());
    }

    #[test]
    fn degenerate_sigma_is_the_mean() {
        let case = case3();
        let profile = WindProfile::from_case(&case, ErrorUnits::PerUnit);
        let set = generate_gaussian(&profile, 10, -0.024, 0.0, 1).unwrap();
        for r in set.rows() {
            assert_eq!(r[2], -0.024 * 20.0);
        }
        assert!(generate_gaussian(&profile, 10, 0.0, -1.0, 1).is_err());
        assert!(generate_cauchy(&profile, 10, 0.0, 0.0, 1).is_err());
    }

    #[test]
    fn split_sizes() {
        let (tr, ho) = split_indices(
            10_000,
            &SplitSpec {
                train_fraction: 0.8,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!((tr.len(), ho.len()), (8000, 2000));
        let (tr, ho) = split_indices(
            2,
            &SplitSpec {
                train_fraction: 0.5,
                seed: 3,
            },
        )
        .unwrap();
        assert_eq!((tr.len(), ho.len()), (1, 1));
        assert!(split_indices(
            1,
            &SplitSpec {
                train_fraction: 0.5,
                seed: 3
            }
        )
        .is_err());
        assert!(split_indices(
            10,
            &SplitSpec {
                train_fraction: 1.0,
                seed: 3
            }
        )
        .is_err());
    }
}
