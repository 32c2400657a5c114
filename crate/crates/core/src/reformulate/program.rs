use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Eq,
    Le,
    Ge,
}

/// `Σ terms (kind) rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRow {
    pub name: String,
    /// Constraint family, e.g. `balance`, `gen-max-cut`, `line-min-mean`.
    pub family: String,
    pub kind: RowKind,
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// `Σ terms·x + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn var(i: usize) -> Self {
        AffineExpr {
            terms: vec![(i, 1.0)],
            constant: 0.0,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|(i, c)| c * x[*i]).sum::<f64>()
    }
}

/// `t ≥ ‖(x₁, …, x_m)‖₂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocBlock {
    pub name: String,
    pub t: AffineExpr,
    pub x: Vec<AffineExpr>,
}

/// `Σ_{(i,j,c)} c·x_i·x_j + linᵀx + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuadObjective {
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: Vec<(usize, f64)>,
    pub constant: f64,
}

impl QuadObjective {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant
            + self.linear.iter().map(|(i, c)| c * x[*i]).sum::<f64>()
            + self
                .quadratic
                .iter()
                .map(|(i, j, c)| c * x[*i] * x[*j])
                .sum::<f64>()
    }
}

/// Where each variable family starts; `M` blocks are absent in the Gaussian
/// and deterministic forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    pub n_generators: usize,
    pub n_lines: usize,
    pub k: usize,
    pub pbar: usize,
    pub alpha: usize,
    pub delta: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_blocks: Option<[usize; 4]>,
}

impl Layout {
    pub fn pbar(&self, g: usize) -> usize {
        self.pbar + g
    }

    pub fn alpha(&self, g: usize) -> usize {
        self.alpha + g
    }

    pub fn delta(&self, l: usize) -> usize {
        self.delta + l
    }

    /// Index of `M^{block+1}_{row,k}`; generator blocks are 0 and 1, line
    /// blocks 2 and 3.
    pub fn m(&self, block: usize, row: usize, k: usize) -> usize {
        self.m_blocks.expect("program has no M blocks")[block] + row * self.k + k
    }
}

/// A convex program with a quadratic objective, linear rows, variable bounds
/// and second-order cones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProgram {
    pub layout: Layout,
    pub variables: Vec<Variable>,
    pub rows: Vec<LinearRow>,
    pub cones: Vec<SocBlock>,
    pub objective: QuadObjective,
}

/// Largest constraint violation of a point, by kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Worst scaled violation over linear rows and bounds.
    pub linear: f64,
    pub linear_row: Option<String>,
    /// Worst `‖x‖ − t` over cones.
    pub cone: f64,
    pub cone_name: Option<String>,
}

impl ConicProgram {
    pub fn n_vars(&self) -> usize {
        self.variables.len()
    }

    pub fn rows_in(&self, family: &str) -> impl Iterator<Item = &LinearRow> {
        let family = family.to_owned();
        self.rows.iter().filter(move |r| r.family == family)
    }

    /// Index bounds and finiteness checks.
    pub fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        let bad = |what: &str| Err(Error::Model(format!("malformed program: {what}")));
        let idx_ok = |terms: &[(usize, f64)]| terms.iter().all(|(i, c)| *i < n && c.is_finite());
        for r in &self.rows {
            if !idx_ok(&r.terms) || !r.rhs.is_finite() {
                return bad(&format!("row {}", r.name));
            }
        }
        for c in &self.cones {
            if !idx_ok(&c.t.terms)
                || c.x
                    .iter()
                    .any(|e| !idx_ok(&e.terms) || !e.constant.is_finite())
            {
                return bad(&format!("cone {}", c.name));
            }
        }
        for (i, j, c) in &self.objective.quadratic {
            if *i >= n || *j >= n || !c.is_finite() {
                return bad("objective");
            }
        }
        if !idx_ok(&self.objective.linear) {
            return bad("objective");
        }
        for v in &self.variables {
            if let (Some(l), Some(u)) = (v.lower, v.upper) {
                if l > u {
                    return bad(&format!("bounds of {}", v.name));
                }
            }
        }
        Ok(())
    }

    /// Violations of `x`, each linear row scaled by `max(1, ‖row‖∞)`.
    pub fn residuals(&self, x: &[f64]) -> Residuals {
        let mut res = Residuals::default();
        let note = |v: f64, name: &str, res: &mut Residuals| {
            if v > res.linear {
                res.linear = v;
                res.linear_row = Some(name.to_owned());
            }
        };
        for r in &self.rows {
            let lhs: f64 = r.terms.iter().map(|(i, c)| c * x[*i]).sum();
            let scale = r.terms.iter().fold(1.0_f64, |m, (_, c)| m.max(c.abs()));
            let v = match r.kind {
                RowKind::Eq => (lhs - r.rhs).abs(),
                RowKind::Le => lhs - r.rhs,
                RowKind::Ge => r.rhs - lhs,
            };
            note(v / scale, &r.name, &mut res);
        }
        for (v, xi) in self.variables.iter().zip(x) {
            if let Some(l) = v.lower {
                note(l - xi, &v.name, &mut res);
            }
            if let Some(u) = v.upper {
                note(xi - u, &v.name, &mut res);
            }
        }
        for c in &self.cones {
            let norm = c.x.iter().map(|e| e.eval(x).powi(2)).sum::<f64>().sqrt();
            let v = norm - c.t.eval(x);
            if v > res.cone {
                res.cone = v;
                res.cone_name = Some(c.name.clone());
            }
        }
        res
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: ConicProgram = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}
