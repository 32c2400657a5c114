//! Network data, PTDF computation and the deterministic DC physics.

mod ptdf;

use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ptdf::{PtdfMatrix, PTDF_ZERO};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: u32,
    /// Load forecast, MW.
    pub load: f64,
    /// Total wind forecast at the bus, MW. Zero when no wind unit is present.
    #[serde(default)]
    pub wind_forecast: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub id: u32,
    pub from: u32,
    pub to: u32,
    /// Series reactance, per unit.
    pub reactance: f64,
    /// Thermal limit, MW.
    pub f_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: u32,
    pub bus: u32,
    pub p_min: f64,
    pub p_max: f64,
    /// Linear cost, $/MWh.
    pub c1: f64,
    /// Quadratic cost, $/MW²h.
    pub c2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CaseFile {
    #[serde(default)]
    name: Option<String>,
    base_mva: f64,
    slack_bus: u32,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
}

/// A validated network. Bus positions (`0..n_buses()`) follow file order and
/// are the column order used by every vector and matrix in this crate.
#[derive(Debug, Clone)]
pub struct GridCase {
    pub name: String,
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    slack: usize,
    line_ends: Vec<(usize, usize)>,
    gen_bus: Vec<usize>,
    bus_index: HashMap<u32, usize>,
}

impl GridCase {
    pub fn new(
        name: impl Into<String>,
        base_mva: f64,
        slack_bus: u32,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
    ) -> Result<Self> {
        let invalid = |msg: String| Err(Error::Validation(msg));
        if !(base_mva > 0.0) {
            return invalid(format!("base_mva must be positive, got {base_mva}"));
        }
        if buses.is_empty() {
            return invalid("case has no buses".into());
        }
        let mut bus_index = HashMap::with_capacity(buses.len());
        for (i, b) in buses.iter().enumerate() {
            if bus_index.insert(b.id, i).is_some() {
                return invalid(format!("duplicate bus id {}", b.id));
            }
            if !(b.load >= 0.0) || !(b.wind_forecast >= 0.0) {
                return invalid(format!(
                    "bus {}: load and wind forecast must be non-negative",
                    b.id
                ));
            }
        }
        let slack = match bus_index.get(&slack_bus) {
            Some(&i) => i,
            None => return invalid(format!("slack bus {slack_bus} does not exist")),
        };

        let mut line_ends = Vec::with_capacity(lines.len());
        for l in &lines {
            let (Some(&f), Some(&t)) = (bus_index.get(&l.from), bus_index.get(&l.to)) else {
                return invalid(format!(
                    "line {} references unknown bus ({} -> {})",
                    l.id, l.from, l.to
                ));
            };
            if f == t {
                return invalid(format!("line {} is a self-loop at bus {}", l.id, l.from));
            }
            if !(l.reactance > 0.0) {
                return invalid(format!("line {}: reactance must be positive", l.id));
            }
            if !(l.f_max > 0.0) {
                return invalid(format!("line {}: f_max must be positive", l.id));
            }
            line_ends.push((f, t));
        }

        let mut gen_bus = Vec::with_capacity(generators.len());
        for g in &generators {
            let Some(&i) = bus_index.get(&g.bus) else {
                return invalid(format!(
                    "generator {} references unknown bus {}",
                    g.id, g.bus
                ));
            };
            if !(g.p_min >= 0.0 && g.p_min <= g.p_max) {
                return invalid(format!("generator {}: need 0 <= p_min <= p_max", g.id));
            }
            if !(g.c2 >= 0.0) || !g.c1.is_finite() {
                return invalid(format!("generator {}: invalid cost coefficients", g.id));
            }
            gen_bus.push(i);
        }
        if generators.is_empty() {
            return invalid("case has no controllable generators".into());
        }

        // connectivity
        let n = buses.len();
        let mut adj = vec![Vec::new(); n];
        for &(f, t) in &line_ends {
            adj[f].push(t);
            adj[t].push(f);
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([slack]);
        seen[slack] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return invalid(format!(
                "network is disconnected: bus {} is unreachable from the slack",
                buses[i].id
            ));
        }

        Ok(GridCase {
            name: name.into(),
            base_mva,
            buses,
            lines,
            generators,
            slack,
            line_ends,
            gen_bus,
            bus_index,
        })
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let f: CaseFile = serde_json::from_str(s)?;
        GridCase::new(
            f.name.unwrap_or_default(),
            f.base_mva,
            f.slack_bus,
            f.buses,
            f.lines,
            f.generators,
        )
    }

    pub fn to_json(&self) -> String {
        let f = CaseFile {
            name: Some(self.name.clone()),
            base_mva: self.base_mva,
            slack_bus: self.buses[self.slack].id,
            buses: self.buses.clone(),
            lines: self.lines.clone(),
            generators: self.generators.clone(),
        };
        serde_json::to_string_pretty(&f).expect("case serializes")
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn n_generators(&self) -> usize {
        self.generators.len()
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    pub fn bus_position(&self, id: u32) -> Option<usize> {
        self.bus_index.get(&id).copied()
    }

    pub fn line_position(&self, id: u32) -> Option<usize> {
        self.lines.iter().position(|l| l.id == id)
    }

    /// `(from, to)` bus positions of line `l`.
    pub fn line_ends(&self, l: usize) -> (usize, usize) {
        self.line_ends[l]
    }

    /// Bus position of generator `g`.
    pub fn generator_bus(&self, g: usize) -> usize {
        self.gen_bus[g]
    }

    /// Positions of buses carrying a wind forecast, in bus order.
    pub fn wind_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.wind_forecast > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn total_load(&self) -> f64 {
        self.buses.iter().map(|b| b.load).sum()
    }

    pub fn total_wind(&self) -> f64 {
        self.buses.iter().map(|b| b.wind_forecast).sum()
    }

    /// Σ p̄_g required by the nominal power balance.
    pub fn net_demand(&self) -> f64 {
        self.total_load() - self.total_wind()
    }

    /// Nominal injections `p⁰_i = Σ_{g∈G_i} p̄_g + wind_i − load_i` (MW).
    pub fn nominal_injections(&self, pbar: &[f64]) -> Result<Vec<f64>> {
        check_len("pbar", self.n_generators(), pbar.len())?;
        let mut p: Vec<f64> = self
            .buses
            .iter()
            .map(|b| b.wind_forecast - b.load)
            .collect();
        for (g, &pg) in pbar.iter().enumerate() {
            p[self.gen_bus[g]] += pg;
        }
        Ok(p)
    }
}

/// Reads and validates a case file in the JSON interchange format.
pub fn load_case(path: impl AsRef<Path>) -> Result<GridCase> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GridCase::from_json_str(&text)
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}

/// Nominal state under a perfect forecast.
#[derive(Debug, Clone, PartialEq)]
pub struct NominalState {
    /// Per-bus injections, MW.
    pub injections: Vec<f64>,
    /// Per-line flows, MW.
    pub flows: Vec<f64>,
}

/// Realized state for one forecast-error sample under the affine recourse.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedState {
    /// `p_g(ξ) = p̄_g − α_g Ω`.
    pub generation: Vec<f64>,
    /// `f_l(ξ) = f⁰_l + γ_l(α) Ω + Λ_l`.
    pub flows: Vec<f64>,
}

pub fn nominal_state(case: &GridCase, ptdf: &PtdfMatrix, pbar: &[f64]) -> Result<NominalState> {
    let injections = case.nominal_injections(pbar)?;
    let flows = ptdf.flows(&injections)?;
    Ok(NominalState { injections, flows })
}

/// Evaluates generator outputs and line flows for one error sample `xi`
/// (one entry per bus, MW).
pub fn realized_state(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    pbar: &[f64],
    alpha: &[f64],
    xi: &[f64],
) -> Result<RealizedState> {
    check_len("alpha", case.n_generators(), alpha.len())?;
    check_len("xi", case.n_buses(), xi.len())?;
    let nominal = nominal_state(case, ptdf, pbar)?;
    let omega: f64 = xi.iter().sum();
    let generation = pbar.iter().zip(alpha).map(|(p, a)| p - a * omega).collect();
    let flows = nominal
        .flows
        .iter()
        .enumerate()
        .map(|(l, f0)| f0 + ptdf.gamma(case, l, alpha) * omega + ptdf.row_dot(l, xi))
        .collect();
    Ok(RealizedState { generation, flows })
}

/// Voltage angles (radians) for a balanced injection vector `p` (MW), with
/// the slack angle fixed at zero.
pub fn recover_angles(case: &GridCase, p: &[f64]) -> Result<Vec<f64>> {
    check_len("injections", case.n_buses(), p.len())?;
    let total: f64 = p.iter().sum();
    let scale = p.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    if total.abs() > 1e-9 * scale {
        return Err(Error::Unbalanced(total));
    }
    ptdf::solve_angles(case, p)
}
