use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};

use super::{Backend, RawSolution, SolveSettings, SolveStatus};
use crate::error::{Error, Result};
use crate::reformulate::{ConicProgram, RowKind};

/// Interior-point backend built on Clarabel.
///
/// Linear rows are divided by their largest coefficient before they reach
/// the solver; each cone block is divided by one common scalar so the cone
/// is preserved.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClarabelBackend;

#[derive(Default)]
struct Rows {
    i: Vec<usize>,
    j: Vec<usize>,
    v: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    /// Appends `terms·x + s = rhs`, scaled by `1/scale`.
    fn push(&mut self, terms: impl IntoIterator<Item = (usize, f64)>, rhs: f64, scale: f64) {
        let r = self.b.len();
        for (j, v) in terms {
            if v != 0.0 {
                self.i.push(r);
                self.j.push(j);
                self.v.push(v / scale);
            }
        }
        self.b.push(rhs / scale);
    }
}

fn row_scale(terms: &[(usize, f64)]) -> f64 {
    let m = terms.iter().fold(0.0_f64, |m, (_, c)| m.max(c.abs()));
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

impl Backend for ClarabelBackend {
    fn name(&self) -> &'static str {
        "clarabel"
    }

    fn solve(&self, program: &ConicProgram, settings: &SolveSettings) -> Result<RawSolution> {
        let n = program.n_vars();
        let mut rows = Rows::default();

        // Equalities first (zero cone), then inequalities as `a x + s = b`,
        // `s ≥ 0`, then cones.
        let mut n_eq = 0;
        for r in program
            .rows
            .iter()
            .filter(|r| r.kind == RowKind::Eq && !r.terms.is_empty())
        {
            rows.push(r.terms.iter().copied(), r.rhs, row_scale(&r.terms));
            n_eq += 1;
        }
        let mut n_ineq = 0;
        for r in program
            .rows
            .iter()
            .filter(|r| r.kind != RowKind::Eq && !r.terms.is_empty())
        {
            let s = row_scale(&r.terms);
            match r.kind {
                RowKind::Le => rows.push(r.terms.iter().copied(), r.rhs, s),
                RowKind::Ge => rows.push(r.terms.iter().map(|(j, v)| (*j, -v)), -r.rhs, s),
                RowKind::Eq => unreachable!(),
            }
            n_ineq += 1;
        }
        for (j, var) in program.variables.iter().enumerate() {
            if let Some(l) = var.lower {
                rows.push([(j, -1.0)], -l, 1.0);
                n_ineq += 1;
            }
            if let Some(u) = var.upper {
                rows.push([(j, 1.0)], u, 1.0);
                n_ineq += 1;
            }
        }
        let mut cones = vec![
            SupportedConeT::ZeroConeT(n_eq),
            SupportedConeT::NonnegativeConeT(n_ineq),
        ];
        for c in &program.cones {
            let exprs = std::iter::once(&c.t).chain(&c.x);
            let scale = exprs
                .clone()
                .flat_map(|e| e.terms.iter().map(|t| t.1.abs()).chain([e.constant.abs()]))
                .fold(0.0_f64, f64::max);
            let scale = if scale > 0.0 { scale } else { 1.0 };
            // s = constant + terms·x  ⇔  −terms·x + s = constant
            for e in exprs {
                rows.push(e.terms.iter().map(|(j, v)| (*j, -v)), e.constant, scale);
            }
            cones.push(SupportedConeT::SecondOrderConeT(1 + c.x.len()));
        }
        cones.retain(|c| {
            !matches!(
                c,
                SupportedConeT::ZeroConeT(0) | SupportedConeT::NonnegativeConeT(0)
            )
        });

        // ½ xᵀPx with P upper triangular: c·x_i² → P_ii = 2c, c·x_i x_j → P_ij = c.
        let mut p: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, c) in &program.objective.quadratic {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            *p.entry((a, b)).or_default() += if a == b { 2.0 * c } else { c };
        }
        let (mut pi, mut pj, mut pv) = (vec![], vec![], vec![]);
        for ((i, j), v) in p {
            pi.push(i);
            pj.push(j);
            pv.push(v);
        }
        let pmat = CscMatrix::new_from_triplets(n, n, pi, pj, pv);
        let mut q = vec![0.0; n];
        for &(i, c) in &program.objective.linear {
            q[i] += c;
        }
        let m = rows.b.len();
        let amat = CscMatrix::new_from_triplets(m, n, rows.i, rows.j, rows.v);

        let tol = settings.tolerance;
        let opts = DefaultSettings {
            max_iter: settings.max_iter,
            time_limit: settings.time_limit.unwrap_or(f64::INFINITY),
            verbose: settings.verbose,
            tol_gap_abs: tol,
            tol_gap_rel: tol,
            tol_feas: tol,
            max_threads: 1,
            ..DefaultSettings::default()
        };
        let mut solver = DefaultSolver::new(&pmat, &q, &amat, &rows.b, &cones, opts)
            .map_err(|e| Error::Backend(format!("clarabel setup: {e}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                SolveStatus::Infeasible
            }
            _ => SolveStatus::NumericalFailure,
        };
        Ok(RawSolution {
            status,
            x: sol.x.clone(),
            iterations: sol.iterations,
            detail: format!("{:?}", sol.status),
        })
    }
}
