//! Deterministic conic counterparts of the chance-constrained dispatch.
//!
//! Three forms are built over the same variables (`p̄`, `α`, `δ`):
//!
//! * [`build_gaussian_model`]: one-component inputs, linear generator rows
//!   with a `Φ⁻¹(1 − ε)` margin and one second-order cone per line;
//! * [`build_ci_model`]: mixture inputs, with the per-component CDF terms
//!   replaced by the piecewise-linear under-estimator through the auxiliary
//!   `M` blocks;
//! * [`build_classical_model`]: a mixture over the wind-bus errors, pushed
//!   through the `Ω` / `η_l` maps and then handled like the above.
//!
//! Every chance constraint is individual. Generator rows use the `Ω` model;
//! line rows use the `η_l` model of that line, whose covariances must share
//! one shape `C_k = τ_k² C₀` so the line standard deviation is `τ_k·δ_l`
//! with `δ_l ≥ ‖(γ_l(α), 1)‖_{C₀}`.

mod audit;
mod program;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{transform_classical, GmmModel, Target};
use crate::grid::{GridCase, PtdfMatrix};
use crate::normal;
use crate::phi_approx::PwlCdf;

pub use audit::{audit_chance_constraints, constraint_ids, ChanceAudit};
pub use program::{
    AffineExpr, ConicProgram, Layout, LinearRow, QuadObjective, Residuals, RowKind, SocBlock,
    Variable,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    /// Fit-then-transform.
    Classical,
    /// Transform-then-fit.
    ConstraintInformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Gaussian,
    Gmm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub approach: Approach,
    pub distribution: Distribution,
    #[serde(rename = "K")]
    pub k: usize,
    pub epsilon: f64,
    pub pwl: PwlCdf,
    pub zero_mean: bool,
}

impl MethodSpec {
    pub fn new(
        approach: Approach,
        distribution: Distribution,
        k: usize,
        epsilon: f64,
        delta: f64,
    ) -> Result<Self> {
        let spec = MethodSpec {
            approach,
            distribution,
            k,
            epsilon,
            pwl: PwlCdf::build(delta)?,
            zero_mean: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(approach: Approach, epsilon: f64) -> Result<Self> {
        MethodSpec::new(approach, Distribution::Gaussian, 1, epsilon, 0.002)
    }

    pub fn with_zero_mean(mut self, on: bool) -> Self {
        self.zero_mean = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in (0, 0.5), got {}",
                self.epsilon
            )));
        }
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be at least 1".into()));
        }
        if self.distribution == Distribution::Gaussian && self.k != 1 {
            return Err(Error::InvalidArgument(format!(
                "gaussian distribution needs K = 1, got {}",
                self.k
            )));
        }
        Ok(())
    }
}

/// The distributions a model is built from: one model of `Ω` and one 2-d
/// model of `η_l` per line (in line order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedInputs {
    pub omega: GmmModel,
    pub eta: Vec<GmmModel>,
}

impl FittedInputs {
    /// Fit-then-transform inputs from a mixture over the wind-bus errors.
    pub fn from_classical(
        xi_model: &GmmModel,
        ptdf: &PtdfMatrix,
        wind_buses: &[usize],
    ) -> Result<Self> {
        let omega = transform_classical(xi_model, ptdf, wind_buses, Target::Omega)?;
        let eta = (0..ptdf.n_lines())
            .map(|l| transform_classical(xi_model, ptdf, wind_buses, Target::Line(l)))
            .collect::<Result<Vec<_>>>()?;
        Ok(FittedInputs { omega, eta })
    }

    pub fn check(&self, case: &GridCase) -> Result<()> {
        if self.omega.dim != 1 {
            return Err(Error::Dimension {
                what: "omega model dimension",
                expected: 1,
                got: self.omega.dim,
            });
        }
        if self.eta.len() != case.n_lines() {
            return Err(Error::Model(format!(
                "{} eta models for {} lines",
                self.eta.len(),
                case.n_lines()
            )));
        }
        for (l, m) in self.eta.iter().enumerate() {
            if m.dim != 2 {
                return Err(Error::Model(format!(
                    "eta model of line {} is {}-dimensional",
                    case.lines[l].id, m.dim
                )));
            }
        }
        Ok(())
    }
}

/// Lower-triangular `L` with `C = L Lᵀ` for a 2×2 positive semidefinite
/// matrix. Continuous in `C`, so nearly equal inputs give nearly equal
/// cone coefficients.
fn psd_factor_2x2(c: &nalgebra::DMatrix<f64>) -> [[f64; 2]; 2] {
    let c11 = c[(0, 0)].max(0.0);
    if c11 > 0.0 {
        let l00 = c11.sqrt();
        let l10 = c[(1, 0)] / l00;
        let l11 = (c[(1, 1)] - l10 * l10).max(0.0).sqrt();
        [[l00, 0.0], [l10, l11]]
    } else {
        [[0.0, 0.0], [0.0, c[(1, 1)].max(0.0).sqrt()]]
    }
}

/// Line covariance as the reformulation uses it. A line with zero PTDF
/// weight on every wind bus has `Λ_l ≡ 0`, so its `Λ` row and column are
/// set to exactly zero, dropping whatever floor the fit applied there.
pub fn line_covariance(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    l: usize,
    c: &nalgebra::DMatrix<f64>,
) -> nalgebra::DMatrix<f64> {
    let mut c = c.clone();
    if ptdf.h_wind(l, &case.wind_buses()).iter().all(|h| *h == 0.0) {
        for i in 0..2 {
            c[(1, i)] = 0.0;
            c[(i, 1)] = 0.0;
        }
    }
    c
}

struct Builder<'a> {
    case: &'a GridCase,
    ptdf: &'a PtdfMatrix,
    layout: Layout,
    variables: Vec<Variable>,
    rows: Vec<LinearRow>,
    cones: Vec<SocBlock>,
}

fn var(name: String, lower: Option<f64>, upper: Option<f64>) -> Variable {
    Variable { name, lower, upper }
}

impl<'a> Builder<'a> {
    fn new(case: &'a GridCase, ptdf: &'a PtdfMatrix, k: usize, with_m: bool) -> Self {
        let (g, l) = (case.n_generators(), case.n_lines());
        let mut variables = Vec::new();
        for gen in &case.generators {
            variables.push(var(format!("pbar[{}]", gen.id), None, None));
        }
        for gen in &case.generators {
            variables.push(var(format!("alpha[{}]", gen.id), Some(0.0), None));
        }
        for line in &case.lines {
            variables.push(var(format!("delta[{}]", line.id), Some(0.0), None));
        }
        let m_blocks = with_m.then(|| {
            let base = 2 * g + l;
            [
                base,
                base + g * k,
                base + 2 * g * k,
                base + 2 * g * k + l * k,
            ]
        });
        if with_m {
            for (block, owners) in [
                (1, &case.generators.iter().map(|x| x.id).collect::<Vec<_>>()),
                (2, &case.generators.iter().map(|x| x.id).collect()),
                (3, &case.lines.iter().map(|x| x.id).collect()),
                (4, &case.lines.iter().map(|x| x.id).collect()),
            ] {
                // Generator auxiliaries carry a factor α ≤ 1, so 1 caps them. Line
                // auxiliaries carry δ_l, whose cap M ≤ δ_l is the tail cut.
                let cap = (block <= 2).then_some(1.0);
                for id in owners {
                    for c in 0..k {
                        variables.push(var(format!("M{block}[{id},{c}]"), None, cap));
                    }
                }
            }
        }
        let layout = Layout {
            n_generators: g,
            n_lines: l,
            k,
            pbar: 0,
            alpha: g,
            delta: 2 * g,
            m_blocks,
        };
        let mut b = Builder {
            case,
            ptdf,
            layout,
            variables,
            rows: Vec::new(),
            cones: Vec::new(),
        };
        b.balance_rows();
        b
    }

    fn row(
        &mut self,
        name: String,
        family: &str,
        kind: RowKind,
        terms: Vec<(usize, f64)>,
        rhs: f64,
    ) {
        let terms = terms.into_iter().filter(|(_, c)| *c != 0.0).collect();
        self.rows.push(LinearRow {
            name,
            family: family.to_owned(),
            kind,
            terms,
            rhs,
        });
    }

    fn balance_rows(&mut self) {
        let g = self.case.n_generators();
        let terms = (0..g).map(|i| (self.layout.pbar(i), 1.0)).collect();
        self.row(
            "balance".into(),
            "balance",
            RowKind::Eq,
            terms,
            self.case.net_demand(),
        );
        let terms = (0..g).map(|i| (self.layout.alpha(i), 1.0)).collect();
        self.row("alpha-sum".into(), "balance", RowKind::Eq, terms, 1.0);
    }

    /// `E_l = f⁰_l + γ_l(α)·ν₀ + ν₁` as (terms, constant).
    fn line_mean(&self, l: usize, nu: &[f64]) -> (Vec<(usize, f64)>, f64) {
        let h = self.ptdf.h_gen(self.case, l);
        let mut terms = Vec::with_capacity(2 * h.len());
        for (g, hg) in h.iter().enumerate() {
            terms.push((self.layout.pbar(g), *hg));
        }
        for (g, hg) in h.iter().enumerate() {
            terms.push((self.layout.alpha(g), -nu[0] * hg));
        }
        let fixed: Vec<f64> = self
            .case
            .buses
            .iter()
            .map(|b| b.wind_forecast - b.load)
            .collect();
        (terms, self.ptdf.row_dot(l, &fixed) + nu[1])
    }

    /// `δ_l ≥ ‖Lᵀ(γ_l(α), 1)‖` for `C₀ = L Lᵀ`.
    fn line_cone(&mut self, l: usize, base: &nalgebra::DMatrix<f64>) {
        let f = psd_factor_2x2(&line_covariance(self.case, self.ptdf, l, base));
        let h = self.ptdf.h_gen(self.case, l);
        // Lᵀ(γ, 1) = (L00 γ + L10, L11); γ = −Σ h_g α_g.
        let first = AffineExpr {
            terms: h
                .iter()
                .enumerate()
                .filter(|(_, hg)| **hg != 0.0 && f[0][0] != 0.0)
                .map(|(g, hg)| (self.layout.alpha(g), -f[0][0] * hg))
                .collect(),
            constant: f[1][0],
        };
        let second = AffineExpr {
            terms: vec![],
            constant: f[1][1],
        };
        self.cones.push(SocBlock {
            name: format!("line-cone[{}]", self.case.lines[l].id),
            t: AffineExpr::var(self.layout.delta(l)),
            x: vec![first, second],
        });
    }

    fn finish(self, objective: QuadObjective) -> ConicProgram {
        ConicProgram {
            layout: self.layout,
            variables: self.variables,
            rows: self.rows,
            cones: self.cones,
            objective,
        }
    }
}

/// Expected cost `Σ_g c₂(p̄ − αE)² + c₂α²V + c₁(p̄ − αE)` for `(E, V)` the
/// mean and variance of `Ω`, as a quadratic in `(p̄, α)`.
pub fn build_objective(
    case: &GridCase,
    layout: &Layout,
    omega_moments: (f64, f64),
) -> QuadObjective {
    let (e, v) = omega_moments;
    let mut obj = QuadObjective::default();
    for (g, gen) in case.generators.iter().enumerate() {
        let (p, a) = (layout.pbar(g), layout.alpha(g));
        obj.quadratic.push((p, p, gen.c2));
        obj.quadratic.push((p, a, -2.0 * gen.c2 * e));
        obj.quadratic.push((a, a, gen.c2 * (e * e + v)));
        obj.linear.push((p, gen.c1));
        obj.linear.push((a, -gen.c1 * e));
    }
    obj.quadratic.retain(|t| t.2 != 0.0);
    obj.linear.retain(|t| t.1 != 0.0);
    obj
}

/// Nominal dispatch without uncertainty: `ξ ≡ 0`, no chance constraints.
pub fn build_deterministic_model(case: &GridCase, ptdf: &PtdfMatrix) -> Result<ConicProgram> {
    let mut b = Builder::new(case, ptdf, 1, false);
    for (g, gen) in case.generators.iter().enumerate() {
        let p = b.layout.pbar(g);
        b.row(
            format!("gen-max[{}]", gen.id),
            "gen-limit",
            RowKind::Le,
            vec![(p, 1.0)],
            gen.p_max,
        );
        b.row(
            format!("gen-min[{}]", gen.id),
            "gen-limit",
            RowKind::Ge,
            vec![(p, 1.0)],
            gen.p_min,
        );
    }
    for l in 0..case.n_lines() {
        let id = case.lines[l].id;
        let (terms, c) = b.line_mean(l, &[0.0, 0.0]);
        let fmax = case.lines[l].f_max;
        b.row(
            format!("line-max[{id}]"),
            "line-limit",
            RowKind::Le,
            terms.clone(),
            fmax - c,
        );
        b.row(
            format!("line-min[{id}]"),
            "line-limit",
            RowKind::Ge,
            terms,
            -fmax - c,
        );
        let d = b.layout.delta(l);
        b.variables[d].upper = Some(0.0);
    }
    let obj = build_objective(case, &b.layout, (0.0, 0.0));
    Ok(b.finish(obj))
}

/// One-component form: `z = Φ⁻¹(1 − ε)` margins on generators and lines.
pub fn build_gaussian_model(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    inputs: &FittedInputs,
    spec: &MethodSpec,
) -> Result<ConicProgram> {
    spec.validate()?;
    inputs.check(case)?;
    if inputs.omega.k != 1 || inputs.eta.iter().any(|m| m.k != 1) {
        return Err(Error::Model(
            "gaussian form needs one-component inputs".into(),
        ));
    }
    let z = normal::quantile(1.0 - spec.epsilon);
    let mut b = Builder::new(case, ptdf, 1, false);
    let m = inputs.omega.means[0][0];
    let s = inputs.omega.std_dev(0);
    for (g, gen) in case.generators.iter().enumerate() {
        let (p, a) = (b.layout.pbar(g), b.layout.alpha(g));
        b.row(
            format!("gen-max[{}]", gen.id),
            "gen-max",
            RowKind::Le,
            vec![(p, 1.0), (a, -(m - z * s))],
            gen.p_max,
        );
        b.row(
            format!("gen-min[{}]", gen.id),
            "gen-min",
            RowKind::Ge,
            vec![(p, 1.0), (a, -(m + z * s))],
            gen.p_min,
        );
    }
    for l in 0..case.n_lines() {
        let id = case.lines[l].id;
        let fmax = case.lines[l].f_max;
        let eta = &inputs.eta[l];
        let (mut terms, c) = b.line_mean(l, &eta.means[0]);
        let d = b.layout.delta(l);
        terms.push((d, z));
        b.row(
            format!("line-max[{id}]"),
            "line-max",
            RowKind::Le,
            terms.clone(),
            fmax - c,
        );
        terms.last_mut().unwrap().1 = -z;
        b.row(
            format!("line-min[{id}]"),
            "line-min",
            RowKind::Ge,
            terms,
            -fmax - c,
        );
        b.line_cone(l, &eta.cov(0));
    }
    let obj = build_objective(case, &b.layout, inputs.omega.moments());
    Ok(b.finish(obj))
}

/// Mixture form with the piecewise-linear CDF under-estimator.
///
/// For generator `g` and component `k` of `Ω ~ Σ β_k N(m_k, σ_k²)`:
///
/// ```text
/// p̄_g − m_k α_g ≤ p_max                                  (mean condition)
/// σ_k M¹_gk ≤ a_s (p_max − p̄_g + m_k α_g) + b_s σ_k α_g   (every piece s)
/// Σ_k β_k M¹_gk ≥ (1 − ε) α_g
/// ```
///
/// with the mirror `M²` block for `p_min`, and the same pattern on each line
/// with `(γ_l(α), 1)ᵀν_k`, `τ_k` and `δ_l` in place of `m_k α_g`, `σ_k` and
/// `α_g`.
pub fn build_ci_model(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    inputs: &FittedInputs,
    spec: &MethodSpec,
) -> Result<ConicProgram> {
    spec.validate()?;
    inputs.check(case)?;
    let k = inputs.omega.k;
    let tied = inputs
        .eta
        .iter()
        .enumerate()
        .map(|(l, m)| {
            if m.k != k {
                return Err(Error::Model(format!(
                    "line {} model has {} components, omega model {k}",
                    case.lines[l].id, m.k
                )));
            }
            m.tied_form().ok_or_else(|| {
                Error::Model(format!(
                    "line {} model covariances are not of the form τ_k² C₀",
                    case.lines[l].id
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let pwl = &spec.pwl;
    let keep = 1.0 - spec.epsilon;
    let mut b = Builder::new(case, ptdf, k, true);

    for (g, gen) in case.generators.iter().enumerate() {
        let (p, a) = (b.layout.pbar(g), b.layout.alpha(g));
        for c in 0..k {
            let m = inputs.omega.means[c][0];
            let s = inputs.omega.std_dev(c);
            let (m1, m2) = (b.layout.m(0, g, c), b.layout.m(1, g, c));
            b.row(
                format!("gen-max-mean[{},{c}]", gen.id),
                "gen-max-mean",
                RowKind::Le,
                vec![(p, 1.0), (a, -m)],
                gen.p_max,
            );
            b.row(
                format!("gen-min-mean[{},{c}]", gen.id),
                "gen-min-mean",
                RowKind::Ge,
                vec![(p, 1.0), (a, -m)],
                gen.p_min,
            );
            for (si, (sa, sb)) in pwl.pieces().enumerate() {
                b.row(
                    format!("gen-max-cut[{},{c},{si}]", gen.id),
                    "gen-max-cut",
                    RowKind::Le,
                    vec![(m1, s), (p, sa), (a, -(sa * m + sb * s))],
                    sa * gen.p_max,
                );
                b.row(
                    format!("gen-min-cut[{},{c},{si}]", gen.id),
                    "gen-min-cut",
                    RowKind::Le,
                    vec![(m2, s), (p, -sa), (a, sa * m - sb * s)],
                    -sa * gen.p_min,
                );
            }
        }
        for (block, side) in [(0, "max"), (1, "min")] {
            let mut terms: Vec<(usize, f64)> = (0..k)
                .map(|c| (b.layout.m(block, g, c), inputs.omega.weights[c]))
                .collect();
            terms.push((a, -keep));
            b.row(
                format!("gen-{side}-agg[{}]", gen.id),
                &format!("gen-{side}-agg"),
                RowKind::Ge,
                terms,
                0.0,
            );
        }
    }

    for l in 0..case.n_lines() {
        let id = case.lines[l].id;
        let fmax = case.lines[l].f_max;
        let eta = &inputs.eta[l];
        let d = b.layout.delta(l);
        for c in 0..k {
            let tau = tied[l].scales[c].max(0.0).sqrt();
            let (terms, cst) = b.line_mean(l, &eta.means[c]);
            let (m3, m4) = (b.layout.m(2, l, c), b.layout.m(3, l, c));
            b.row(
                format!("line-max-mean[{id},{c}]"),
                "line-max-mean",
                RowKind::Le,
                terms.clone(),
                fmax - cst,
            );
            b.row(
                format!("line-min-mean[{id},{c}]"),
                "line-min-mean",
                RowKind::Ge,
                terms.clone(),
                -fmax - cst,
            );
            for (si, (sa, sb)) in pwl.pieces().enumerate() {
                let mut up: Vec<(usize, f64)> = vec![(m3, tau), (d, -sb * tau)];
                up.extend(terms.iter().map(|(i, v)| (*i, sa * v)));
                b.row(
                    format!("line-max-cut[{id},{c},{si}]"),
                    "line-max-cut",
                    RowKind::Le,
                    up,
                    sa * (fmax - cst),
                );
                let mut lo: Vec<(usize, f64)> = vec![(m4, tau), (d, -sb * tau)];
                lo.extend(terms.iter().map(|(i, v)| (*i, -sa * v)));
                b.row(
                    format!("line-min-cut[{id},{c},{si}]"),
                    "line-min-cut",
                    RowKind::Le,
                    lo,
                    sa * (fmax + cst),
                );
            }
        }
        for (block, side) in [(2, "max"), (3, "min")] {
            let mut terms: Vec<(usize, f64)> = (0..k)
                .map(|c| (b.layout.m(block, l, c), eta.weights[c]))
                .collect();
            terms.push((d, -keep));
            b.row(
                format!("line-{side}-agg[{id}]"),
                &format!("line-{side}-agg"),
                RowKind::Ge,
                terms,
                0.0,
            );
        }
        b.line_cone(l, &tied[l].base);
    }

    let obj = build_objective(case, &b.layout, inputs.omega.moments());
    Ok(b.finish(obj))
}

/// Builds the form matching `spec.distribution` from prepared inputs.
pub fn build_model(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    inputs: &FittedInputs,
    spec: &MethodSpec,
) -> Result<ConicProgram> {
    match spec.distribution {
        Distribution::Gaussian => build_gaussian_model(case, ptdf, inputs, spec),
        Distribution::Gmm => build_ci_model(case, ptdf, inputs, spec),
    }
}

/// Fit-then-transform model from a mixture over the wind-bus errors.
///
/// With `K > 1` the covariances must share one shape; free per-component
/// covariances would make the line constraints nonconvex and are rejected.
pub fn build_classical_model(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    xi_model: &GmmModel,
    spec: &MethodSpec,
) -> Result<ConicProgram> {
    if xi_model.k > 1 && xi_model.tied_form().is_none() {
        return Err(Error::Model(
            "classical mixture with free per-component covariances gives nonconvex line constraints".into(),
        ));
    }
    let inputs = FittedInputs::from_classical(xi_model, ptdf, &case.wind_buses())?;
    build_model(case, ptdf, &inputs, spec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// The condition removes part of the nominal operating range.
    Tightened,
    /// The condition cannot hold for any admissible dispatch.
    Infeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanIssue {
    /// Constraint id, e.g. `gen:3:max`, or `system:max` for the aggregate.
    pub constraint: String,
    pub component: usize,
    pub severity: Severity,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanConditionReport {
    pub issues: Vec<MeanIssue>,
    /// Issues exist, and none would remain with every mean set to zero.
    pub zero_mean_clears: bool,
}

impl MeanConditionReport {
    pub fn any_infeasible(&self) -> bool {
        self.issues
            .iter()
            .any(|i| i.severity == Severity::Infeasible)
    }
}

fn mean_issues(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    inputs: &FittedInputs,
    zero: bool,
) -> Vec<MeanIssue> {
    let mut out = Vec::new();
    let mut push = |constraint: String, component, severity| {
        out.push(MeanIssue {
            constraint,
            component,
            severity,
        })
    };
    let demand = case.net_demand();
    let sum_max: f64 = case.generators.iter().map(|g| g.p_max).sum();
    let sum_min: f64 = case.generators.iter().map(|g| g.p_min).sum();
    let omega = &inputs.omega;
    for c in 0..omega.k {
        let m = if zero { 0.0 } else { omega.means[c][0] };
        // Summing p̄_g − m α_g ≤ p_max over g with Σα = 1.
        if demand > sum_max + m + 1e-9 * sum_max.abs().max(1.0) {
            push("system:max".into(), c, Severity::Infeasible);
        }
        if demand < sum_min + m - 1e-9 * sum_min.abs().max(1.0) {
            push("system:min".into(), c, Severity::Infeasible);
        }
        for gen in &case.generators {
            if m < 0.0 {
                push(format!("gen:{}:max", gen.id), c, Severity::Tightened);
            } else if m > 0.0 {
                push(format!("gen:{}:min", gen.id), c, Severity::Tightened);
            }
        }
    }
    let fixed: Vec<f64> = case
        .buses
        .iter()
        .map(|b| b.wind_forecast - b.load)
        .collect();
    for (l, eta) in inputs.eta.iter().enumerate() {
        let line = &case.lines[l];
        let h = ptdf.h_gen(case, l);
        let base = ptdf.row_dot(l, &fixed);
        // Any Ω component c' keeps q_g = p̄_g − m_c' α_g inside [p_min, p_max],
        // and E_l = base + ν₁ + Σ h_g q_g + Σ h_g (m_c' − ν₀) α_g with α on the
        // simplex. If the interval misses the limit for some c', no dispatch
        // meets the mean row.
        let (lo0, hi0) = case
            .generators
            .iter()
            .zip(&h)
            .fold((base, base), |(lo, hi), (g, hg)| {
                let (x, y) = (hg * g.p_min, hg * g.p_max);
                (lo + x.min(y), hi + x.max(y))
            });
        let omega_means: Vec<f64> = (0..omega.k)
            .map(|c| if zero { 0.0 } else { omega.means[c][0] })
            .collect();
        for c in 0..eta.k {
            let nu = if zero {
                [0.0, 0.0]
            } else {
                [eta.means[c][0], eta.means[c][1]]
            };
            let tol = 1e-9 * line.f_max;
            let (mut above, mut below) = (false, false);
            for m in &omega_means {
                let vals = h.iter().map(|hg| hg * (m - nu[0]));
                let (glo, ghi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                    (a.min(v), b.max(v))
                });
                above |= lo0 + glo + nu[1] > line.f_max + tol;
                below |= hi0 + ghi + nu[1] < -line.f_max - tol;
            }
            if above {
                push(format!("line:{}:max", line.id), c, Severity::Infeasible);
            }
            if below {
                push(format!("line:{}:min", line.id), c, Severity::Infeasible);
            }
        }
    }
    out
}

/// A-priori diagnosis of the mean conditions that restrict the domain of
/// the CDF terms. Diagnostic only; the model enforces the conditions.
pub fn check_mean_conditions(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    inputs: &FittedInputs,
) -> MeanConditionReport {
    let issues = mean_issues(case, ptdf, inputs, false);
    let zero_mean_clears = !issues.is_empty() && mean_issues(case, ptdf, inputs, true).is_empty();
    MeanConditionReport {
        issues,
        zero_mean_clears,
    }
}

/// Lines whose mixture spread alone rules out the PWL line constraints.
///
/// Adding the max and min cut systems of line `l` and using concavity of
/// `Φ̂` shows every feasible point satisfies
/// `Σ_k π_k Φ̂(f_max / (τ_k δ_l)) ≥ 1 − ε`, for any means. The left side
/// falls with `δ_l`, and the cone forces `δ_l ≥ ‖L₀ᵀ(γ, 1)‖` with
/// `γ = −Σ h_g α_g` confined to `[min −h_g, max −h_g]` by the simplex. A
/// line that fails at the smallest such `δ_l` makes the model infeasible.
pub fn check_line_spread(
    case: &GridCase,
    ptdf: &PtdfMatrix,
    inputs: &FittedInputs,
    spec: &MethodSpec,
) -> Vec<u32> {
    if spec.distribution != Distribution::Gmm {
        return vec![];
    }
    let keep = 1.0 - spec.epsilon;
    let mut out = Vec::new();
    for (l, (line, eta)) in case.lines.iter().zip(&inputs.eta).enumerate() {
        let Some(tied) = eta.tied_form() else {
            continue;
        };
        let c = &line_covariance(case, ptdf, l, &tied.base);
        let (lo, hi) = ptdf
            .h_gen(case, l)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), h| {
                (a.min(-h), b.max(-h))
            });
        let gamma = if c[(0, 0)] > 0.0 {
            (-c[(1, 0)] / c[(0, 0)]).clamp(lo, hi)
        } else {
            lo
        };
        let var = c[(0, 0)] * gamma * gamma + 2.0 * c[(1, 0)] * gamma + c[(1, 1)];
        let floor = var.max(0.0).sqrt();
        let reach: f64 = eta
            .weights
            .iter()
            .zip(&tied.scales)
            .map(|(w, s)| {
                w * spec
                    .pwl
                    .eval((line.f_max / (s.max(0.0).sqrt() * floor)).min(f64::MAX))
            })
            .sum();
        if reach < keep - 1e-9 {
            out.push(line.id);
        }
    }
    out
}
