mod common;

use ccopf::estimation::{fit_mle_gaussian, CovStructure, GmmModel};
use ccopf::pipeline::{fit_classical, fit_constraint_informed, FitOptions};
use ccopf::reformulate::{
    audit_chance_constraints, build_ci_model, build_classical_model, build_deterministic_model,
    build_gaussian_model, build_model, check_line_spread, check_mean_conditions, line_covariance,
    Approach, Distribution, FittedInputs, MethodSpec, Severity,
};
use ccopf::risk::VIOLATION_SLACK;
use ccopf::scenarios::{generate_gaussian, ErrorUnits, WindProfile};
use ccopf::solve::{solve, SolveSettings, SolveStatus};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn gmm_spec(k: usize, eps: f64) -> MethodSpec {
    MethodSpec::new(
        Approach::ConstraintInformed,
        Distribution::Gmm,
        k,
        eps,
        0.002,
    )
    .unwrap()
}

#[test]
fn variable_and_cut_counts() {
    let (case, ptdf) = common::fixture("case3");
    let inputs = common::mixture_inputs(&case, &[0.6, 0.4], &[0.0, 1.0], &[1.0, 4.0], 4.0);
    let p = build_ci_model(&case, &ptdf, &inputs, &gmm_spec(2, 0.05)).unwrap();
    assert_eq!(p.n_vars(), 27);
    let cuts = p.rows.iter().filter(|r| r.family.ends_with("-cut")).count();
    assert_eq!(cuts, 200);
    assert_eq!(p.cones.len(), 3);
    assert_eq!(p.rows_in("gen-max-agg").count(), 2);
    assert_eq!(p.rows_in("line-min-agg").count(), 3);
}

#[test]
fn program_json_round_trip() {
    let (case, ptdf) = common::fixture("case3");
    let inputs = common::mixture_inputs(&case, &[0.6, 0.4], &[0.0, 1.0], &[1.0, 4.0], 4.0);
    let p = build_ci_model(&case, &ptdf, &inputs, &gmm_spec(2, 0.05)).unwrap();
    assert_eq!(
        ccopf::reformulate::ConicProgram::from_json(&p.to_json()).unwrap(),
        p
    );
}

#[test]
fn mixture_dispatch_passes_exact_audit() {
    let (case, ptdf) = common::fixture("case3");
    let inputs = common::mixture_inputs(
        &case,
        &[0.5, 0.3, 0.2],
        &[-1.0, 0.5, 2.0],
        &[1.0, 2.0, 6.0],
        9.0,
    );
    for eps in [0.01, 0.05, 0.2] {
        let s = solve(
            &build_ci_model(&case, &ptdf, &inputs, &gmm_spec(3, eps)).unwrap(),
            &SolveSettings::default(),
        )
        .unwrap();
        assert_eq!(s.status, SolveStatus::Optimal, "eps {eps}");
        let audit =
            audit_chance_constraints(&case, &ptdf, &inputs, &s.pbar, &s.alpha, VIOLATION_SLACK)
                .unwrap();
        let worst = audit.iter().map(|a| a.probability).fold(1.0, f64::min);
        assert!(worst >= 1.0 - eps - 1e-9, "eps {eps}: {worst}");
        assert!((s.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        assert!(s.alpha.iter().all(|a| *a >= -1e-9));
    }
}

#[test]
fn objective_does_not_increase_with_risk() {
    let (case, ptdf) = common::fixture("case3");
    let inputs = common::mixture_inputs(&case, &[0.7, 0.3], &[0.0, 0.0], &[1.0, 5.0], 4.0);
    let objs: Vec<f64> = [0.01, 0.05, 0.2]
        .iter()
        .map(|e| {
            solve(
                &build_ci_model(&case, &ptdf, &inputs, &gmm_spec(2, *e)).unwrap(),
                &SolveSettings::default(),
            )
        })
        .map(|s| s.unwrap())
        .inspect(|s| assert_eq!(s.status, SolveStatus::Optimal))
        .map(|s| s.objective)
        .collect();
    assert!(
        objs.windows(2).all(|w| w[1] <= w[0] + 1e-6 * w[0].abs()),
        "{objs:?}"
    );
}

#[test]
fn gaussian_forms_coincide_across_approaches() {
    let (case, ptdf) = common::fixture("case14_wind");
    let set = generate_gaussian(
        &WindProfile::from_case(&case, ErrorUnits::PerUnit),
        3000,
        -0.02,
        0.04,
        5,
    )
    .unwrap();
    let classical = fit_classical(&case, &ptdf, &set, &FitOptions::gaussian()).unwrap();
    let ci = fit_constraint_informed(&case, &ptdf, &set, &FitOptions::gaussian()).unwrap();
    let a = build_classical_model(
        &case,
        &ptdf,
        &classical.xi_model,
        &MethodSpec::gaussian(Approach::Classical, 0.05).unwrap(),
    )
    .unwrap();
    let b = build_model(
        &case,
        &ptdf,
        &ci.inputs,
        &MethodSpec::gaussian(Approach::ConstraintInformed, 0.05).unwrap(),
    )
    .unwrap();
    assert_eq!(a.rows.len(), b.rows.len());
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        assert_eq!(ra.name, rb.name);
        let scale = ra
            .terms
            .iter()
            .fold(ra.rhs.abs(), |m, t| m.max(t.1.abs()))
            .max(1.0);
        for (ta, tb) in ra.terms.iter().zip(&rb.terms) {
            assert_eq!(ta.0, tb.0);
            assert!(
                (ta.1 - tb.1).abs() <= 1e-9 * scale,
                "{}: {ta:?} vs {tb:?}",
                ra.name
            );
        }
        assert!((ra.rhs - rb.rhs).abs() <= 1e-9 * scale, "{}", ra.name);
    }
    for (ca, cb) in a.cones.iter().zip(&b.cones) {
        for (xa, xb) in ca.x.iter().zip(&cb.x) {
            let scale = xa
                .terms
                .iter()
                .fold(xa.constant.abs(), |m, t| m.max(t.1.abs()))
                .max(1.0);
            assert!((xa.constant - xb.constant).abs() <= 1e-9 * scale);
            for (ta, tb) in xa.terms.iter().zip(&xb.terms) {
                assert!((ta.1 - tb.1).abs() <= 1e-9 * scale, "{}", ca.name);
            }
        }
    }
}

#[test]
fn single_component_mixture_form_is_conservative_against_the_closed_form() {
    let (case, ptdf) = common::fixture("case3");
    let inputs = common::mixture_inputs(&case, &[1.0], &[0.5], &[1.0], 25.0);
    let eps = 0.05;
    let exact = solve(
        &build_gaussian_model(
            &case,
            &ptdf,
            &inputs,
            &MethodSpec::gaussian(Approach::ConstraintInformed, eps).unwrap(),
        )
        .unwrap(),
        &SolveSettings::default(),
    )
    .unwrap();
    let pwl = solve(
        &build_ci_model(&case, &ptdf, &inputs, &gmm_spec(1, eps)).unwrap(),
        &SolveSettings::default(),
    )
    .unwrap();
    assert!(exact.is_optimal() && pwl.is_optimal());
    assert!(pwl.objective >= exact.objective - 1e-6 * exact.objective.abs());
}

#[test]
fn zero_variance_collapses_to_the_deterministic_cost() {
    let (case, ptdf) = common::fixture("case3");
    let det = solve(
        &build_deterministic_model(&case, &ptdf).unwrap(),
        &SolveSettings::default(),
    )
    .unwrap();
    let inputs = common::mixture_inputs(&case, &[1.0], &[0.0], &[1.0], 1e-12);
    let g = solve(
        &build_gaussian_model(
            &case,
            &ptdf,
            &inputs,
            &MethodSpec::gaussian(Approach::ConstraintInformed, 0.05).unwrap(),
        )
        .unwrap(),
        &SolveSettings::default(),
    )
    .unwrap();
    assert!((g.objective - det.objective).abs() <= 1e-5 * det.objective);
}

#[test]
fn classical_mixture_needs_shared_shape() {
    let (case, ptdf) = common::fixture("case14_wind");
    let d = case.wind_buses().len();
    let base = DMatrix::<f64>::identity(d, d);
    let tied = GmmModel::from_components(
        vec![0.5, 0.5],
        vec![vec![0.0; d], vec![1.0; d]],
        vec![base.clone(), &base * 4.0],
        CovStructure::Full,
        false,
    );
    let form = tied.tied_form().expect("proportional covariances are tied");
    let ratio = form.scales[1] / form.scales[0];
    assert!((ratio - 4.0).abs() < 1e-12);
    assert!(build_classical_model(&case, &ptdf, &tied, &gmm_spec(2, 0.05)).is_ok());
    let mut free = base.clone();
    free[(0, 0)] = 3.0;
    let untied = GmmModel::from_components(
        vec![0.5, 0.5],
        vec![vec![0.0; d], vec![1.0; d]],
        vec![base, free],
        CovStructure::Full,
        false,
    );
    assert!(build_classical_model(&case, &ptdf, &untied, &gmm_spec(2, 0.05)).is_err());
}

#[test]
fn mean_condition_diagnosis() {
    let (case, ptdf) = common::fixture("case3");
    let centred = common::mixture_inputs(&case, &[0.5, 0.5], &[0.0, 0.0], &[1.0, 2.0], 4.0);
    assert!(check_mean_conditions(&case, &ptdf, &centred)
        .issues
        .is_empty());

    // A component whose mean exceeds the whole fleet's headroom.
    let far = common::mixture_inputs(&case, &[0.9, 0.1], &[0.0, -500.0], &[1.0, 2.0], 4.0);
    let report = check_mean_conditions(&case, &ptdf, &far);
    assert!(report.any_infeasible());
    assert!(report.zero_mean_clears);
    assert!(report.issues.iter().any(|i| i.constraint == "system:max"
        && i.component == 1
        && i.severity == Severity::Infeasible));
    let s = solve(
        &build_ci_model(&case, &ptdf, &far, &gmm_spec(2, 0.05)).unwrap(),
        &SolveSettings::default(),
    )
    .unwrap();
    assert_ne!(s.status, SolveStatus::Optimal);
}

#[test]
fn mle_inputs_validate_against_case() {
    let (case, _) = common::fixture("case3");
    let bad = FittedInputs {
        omega: fit_mle_gaussian(&ccopf::estimation::Samples::new(1, vec![0.0, 1.0, 2.0]).unwrap())
            .unwrap(),
        eta: vec![],
    };
    assert!(bad.check(&case).is_err());
}

#[test]
fn spread_bound_separates_tame_and_impossible_lines() {
    let (case, ptdf) = common::fixture("case3");
    let spec = gmm_spec(2, 0.05);
    let tame = common::mixture_inputs(&case, &[0.6, 0.4], &[0.0, 0.0], &[1.0, 4.0], 4.0);
    assert!(check_line_spread(&case, &ptdf, &tame, &spec).is_empty());
    let p = build_ci_model(&case, &ptdf, &tame, &spec).unwrap();
    assert_eq!(
        solve(&p, &SolveSettings::default()).unwrap().status,
        SolveStatus::Optimal
    );

    // A 15% component with a standard deviation far beyond every limit.
    let wild = common::mixture_inputs(&case, &[0.85, 0.15], &[0.0, 0.0], &[1.0, 1e4], 400.0);
    assert_eq!(check_line_spread(&case, &ptdf, &wild, &spec), vec![1, 2, 3]);
    let p = build_ci_model(&case, &ptdf, &wild, &spec).unwrap();
    assert_ne!(
        solve(&p, &SolveSettings::default()).unwrap().status,
        SolveStatus::Optimal
    );
    let gaussian = MethodSpec::gaussian(Approach::ConstraintInformed, 0.05).unwrap();
    assert!(check_line_spread(&case, &ptdf, &wild, &gaussian).is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn spread_bound_never_flags_a_solvable_model(
        w in 0.02f64..0.5,
        ratio in 1.0f64..1e3,
        var in 1.0f64..900.0,
        eps in 0.01f64..0.2,
    ) {
        let (case, ptdf) = common::fixture("case3");
        let spec = gmm_spec(2, eps);
        let inputs = common::mixture_inputs(&case, &[1.0 - w, w], &[0.0, 0.0], &[1.0, ratio], var);
        let flagged = !check_line_spread(&case, &ptdf, &inputs, &spec).is_empty();
        let p = build_ci_model(&case, &ptdf, &inputs, &spec).unwrap();
        let status = solve(&p, &SolveSettings::default()).unwrap().status;
        prop_assert!(!(flagged && status == SolveStatus::Optimal));
    }
}

#[test]
fn wind_free_lines_drop_the_wind_direction() {
    let (case, ptdf) = common::fixture("case118_wind");
    let wind = case.wind_buses();
    let c = DMatrix::from_row_slice(2, 2, &[4.0, 0.5, 0.5, 1e-9]);
    let mut free = 0;
    for l in 0..case.n_lines() {
        let eff = line_covariance(&case, &ptdf, l, &c);
        if ptdf.h_wind(l, &wind).iter().all(|h| *h == 0.0) {
            free += 1;
            assert_eq!(eff, DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]));
        } else {
            assert_eq!(eff, c);
        }
    }
    assert!(free > 0);
}
