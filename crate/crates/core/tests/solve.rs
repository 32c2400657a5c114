mod common;

use ccopf::reformulate::{
    build_deterministic_model, AffineExpr, ConicProgram, Layout, LinearRow, QuadObjective, RowKind,
    SocBlock, Variable,
};
use ccopf::solve::{solve, SolveSettings, SolveStatus};

fn one_var(rows: Vec<LinearRow>, objective: QuadObjective) -> ConicProgram {
    ConicProgram {
        layout: Layout {
            n_generators: 1,
            n_lines: 0,
            k: 0,
            pbar: 0,
            alpha: 0,
            delta: 0,
            m_blocks: None,
        },
        variables: vec![Variable {
            name: "x".into(),
            lower: None,
            upper: None,
        }],
        rows,
        cones: vec![],
        objective,
    }
}

fn row(kind: RowKind, rhs: f64) -> LinearRow {
    LinearRow {
        name: format!("{kind:?}"),
        family: "test".into(),
        kind,
        terms: vec![(0, 1.0)],
        rhs,
    }
}

#[test]
fn textbook_quadratic() {
    let p = one_var(
        vec![row(RowKind::Ge, 3.0)],
        QuadObjective {
            quadratic: vec![(0, 0, 1.0)],
            ..Default::default()
        },
    );
    let s = solve(&p, &SolveSettings::default()).unwrap();
    assert_eq!(s.status, SolveStatus::Optimal);
    assert!((s.pbar[0] - 3.0).abs() < 1e-6);
    assert!((s.objective - 9.0).abs() < 1e-5);
}

#[test]
fn contradictory_bounds_are_a_status() {
    let p = one_var(
        vec![row(RowKind::Ge, 3.0), row(RowKind::Le, 1.0)],
        QuadObjective::default(),
    );
    assert_eq!(
        solve(&p, &SolveSettings::default()).unwrap().status,
        SolveStatus::Infeasible
    );
}

#[test]
fn hand_cone() {
    let p = ConicProgram {
        layout: Layout {
            n_generators: 0,
            n_lines: 1,
            k: 0,
            pbar: 0,
            alpha: 0,
            delta: 0,
            m_blocks: None,
        },
        variables: vec![Variable {
            name: "delta".into(),
            lower: Some(0.0),
            upper: None,
        }],
        rows: vec![],
        cones: vec![SocBlock {
            name: "c".into(),
            t: AffineExpr::var(0),
            x: vec![
                AffineExpr {
                    terms: vec![],
                    constant: 1.0
                };
                2
            ],
        }],
        objective: QuadObjective {
            linear: vec![(0, 1.0)],
            ..Default::default()
        },
    };
    let s = solve(&p, &SolveSettings::default()).unwrap();
    assert_eq!(s.status, SolveStatus::Optimal);
    assert!((s.aux["delta"][0] - 2f64.sqrt()).abs() < 1e-7);
}

#[test]
fn unknown_backend_is_an_error() {
    let p = one_var(vec![], QuadObjective::default());
    let settings = SolveSettings {
        backend: "nope".into(),
        ..SolveSettings::default()
    };
    assert!(solve(&p, &settings).is_err());
}

#[test]
fn deterministic_dispatch_matches_grid_search() {
    let (case, ptdf) = common::fixture("case3");
    let s = solve(
        &build_deterministic_model(&case, &ptdf).unwrap(),
        &SolveSettings::default(),
    )
    .unwrap();
    assert_eq!(s.status, SolveStatus::Optimal);
    let demand = case.net_demand();
    let mut best = f64::INFINITY;
    for i in 0..=200_000 {
        let p1 = case.generators[0].p_min
            + (case.generators[0].p_max - case.generators[0].p_min) * i as f64 / 200_000.0;
        let p = [p1, demand - p1];
        let ok_gen = case
            .generators
            .iter()
            .zip(&p)
            .all(|(g, v)| *v >= g.p_min - 1e-9 && *v <= g.p_max + 1e-9);
        let flows = ccopf::grid::nominal_state(&case, &ptdf, &p).unwrap().flows;
        let ok_lines = case
            .lines
            .iter()
            .zip(&flows)
            .all(|(l, f)| f.abs() <= l.f_max + 1e-9);
        if ok_gen && ok_lines {
            let cost: f64 = case
                .generators
                .iter()
                .zip(&p)
                .map(|(g, v)| g.c2 * v * v + g.c1 * v)
                .sum();
            best = best.min(cost);
        }
    }
    assert!(best.is_finite());
    assert!(
        (s.objective - best).abs() <= 1e-3 * best,
        "{} vs {best}",
        s.objective
    );
}

#[test]
fn repeated_solves_agree() {
    let (case, ptdf) = common::fixture("case14_wind");
    let p = build_deterministic_model(&case, &ptdf).unwrap();
    let a = solve(&p, &SolveSettings::default()).unwrap();
    let b = solve(&p, &SolveSettings::default()).unwrap();
    assert_eq!(a.status, b.status);
    assert_eq!(a.to_json(), b.to_json());
}
