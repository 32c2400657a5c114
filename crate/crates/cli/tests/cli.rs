use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

fn ccopf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccopf"))
        .args(args)
        .env_remove("CCOPF_BACKEND")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn run_ok(args: &[&str]) -> Output {
    let o = ccopf(args);
    assert_eq!(
        code(&o),
        0,
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn case14() -> String {
    fixture("case14_wind.json").to_string_lossy().into_owned()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn constraint_informed_fit_writes_one_model_per_line_plus_omega() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let case = case14();
    let args = [
        "fit",
        "--case",
        &case,
        "-o",
        s(&out),
        "--distribution",
        "gmm",
        "-K",
        "2",
        "--n-samples",
        "1500",
        "--restarts",
        "2",
    ];
    run_ok(&args);
    let models = files(&out.join("models"));
    assert_eq!(models.len(), 1 + 20);
    assert!(
        models.contains(&"omega.json".to_owned()) && models.contains(&"line-20.json".to_owned())
    );

    // Same seed, second directory: identical bytes.
    let again = dir.path().join("b");
    let mut args2 = args;
    args2[4] = s(&again);
    run_ok(&args2);
    for f in &models {
        assert_eq!(
            fs::read(out.join("models").join(f)).unwrap(),
            fs::read(again.join("models").join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(
        fs::read(out.join("fit-report.json")).unwrap(),
        fs::read(again.join("fit-report.json")).unwrap()
    );
}

#[test]
fn classical_fit_writes_a_single_model() {
    let dir = tempfile::tempdir().unwrap();
    let case = case14();
    run_ok(&[
        "fit",
        "--case",
        &case,
        "-o",
        s(dir.path()),
        "--approach",
        "classical",
        "--n-samples",
        "1000",
    ]);
    assert_eq!(files(&dir.path().join("models")), vec!["xi.json"]);
}

fn solution(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("solution.json")).unwrap()).unwrap()
}

#[test]
fn gaussian_dispatch_is_the_same_for_both_approaches() {
    let dir = tempfile::tempdir().unwrap();
    let case = case14();
    let (a, b) = (dir.path().join("c"), dir.path().join("i"));
    run_ok(&[
        "solve",
        "--case",
        &case,
        "-o",
        s(&a),
        "--approach",
        "classical",
        "--n-samples",
        "2000",
    ]);
    run_ok(&[
        "solve",
        "--case",
        &case,
        "-o",
        s(&b),
        "--approach",
        "constraint-informed",
        "--n-samples",
        "2000",
    ]);
    let (sa, sb) = (solution(&a), solution(&b));
    for key in ["pbar", "alpha"] {
        for (x, y) in sa[key]
            .as_array()
            .unwrap()
            .iter()
            .zip(sb[key].as_array().unwrap())
        {
            assert!(
                (x.as_f64().unwrap() - y.as_f64().unwrap()).abs() < 1e-6,
                "{key}"
            );
        }
    }
    assert_eq!(
        fs::read_to_string(a.join("status.txt")).unwrap(),
        "optimal\n"
    );
    let timing: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("timing.json")).unwrap()).unwrap();
    assert!(timing["solve_time"].as_f64().unwrap() < 1.0);
    assert!(sa.get("solve_time").is_none());
}

#[test]
fn solve_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let case = case14();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&[
            "solve",
            "--case",
            &case,
            "-o",
            s(out),
            "--distribution",
            "gmm",
            "-K",
            "2",
            "--n-samples",
            "1500",
            "--restarts",
            "2",
        ]);
    }
    for f in ["solution.json", "status.txt", "config.toml"] {
        let (x, y) = (
            fs::read_to_string(a.join(f)).unwrap(),
            fs::read_to_string(b.join(f)).unwrap(),
        );
        if f == "config.toml" {
            assert_eq!(x.replace(s(&a), ""), y.replace(s(&b), ""));
        } else {
            assert_eq!(x, y, "{f}");
        }
    }
}

#[test]
fn solve_from_fitted_models_matches_in_process_fit() {
    let dir = tempfile::tempdir().unwrap();
    let case = case14();
    let (f, a, b) = (
        dir.path().join("fit"),
        dir.path().join("a"),
        dir.path().join("b"),
    );
    let common = [
        "--case",
        &case,
        "--distribution",
        "gmm",
        "-K",
        "2",
        "--n-samples",
        "1500",
        "--restarts",
        "2",
    ];
    run_ok(&[&["fit", "-o", s(&f)][..], &common].concat());
    let models = f.join("models");
    run_ok(&[&["solve", "-o", s(&a), "--models", s(&models)][..], &common].concat());
    run_ok(&[&["solve", "-o", s(&b)][..], &common].concat());
    assert_eq!(
        fs::read(a.join("solution.json")).unwrap(),
        fs::read(b.join("solution.json")).unwrap()
    );
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, format!("case = {:?}\n{body}", fixture("case3.json"))).unwrap();
    p
}

#[test]
fn infeasible_model_exits_two_and_records_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "epsilon = 0.01\n[dataset]\nkind = \"synthetic-gaussian\"\nmu = 0.0\nsigma = 10.0\nn_samples = 500\n",
    );
    let out = dir.path().join("o");
    let o = ccopf(&["solve", "--config", s(&cfg), "-o", s(&out)]);
    assert_eq!(
        code(&o),
        2,
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(fs::read_to_string(out.join("status.txt"))
        .unwrap()
        .starts_with("infeasible"));
    assert_eq!(
        code(&ccopf(&["evaluate", "--config", s(&cfg), "-o", s(&out)])),
        2
    );
}

#[test]
fn backend_failure_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[dataset]\nkind = \"synthetic-gaussian\"\nmu = 0.0\nsigma = 0.05\nn_samples = 500\n[solve]\nmax_iter = 1\n",
    );
    let out = dir.path().join("o");
    let o = ccopf(&["solve", "--config", s(&cfg), "-o", s(&out)]);
    assert_eq!(
        code(&o),
        4,
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    assert!(fs::read_to_string(out.join("status.txt"))
        .unwrap()
        .starts_with("numerical-failure"));
}

#[test]
fn invalid_inputs_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let case = case14();
    let o = s(dir.path());
    assert_eq!(
        code(&ccopf(&[
            "solve",
            "--case",
            &case,
            "-o",
            o,
            "--epsilon",
            "0.7"
        ])),
        3
    );
    assert_eq!(
        code(&ccopf(&["solve", "--case", "/no/such/case.json", "-o", o])),
        3
    );
    assert_eq!(code(&ccopf(&["solve", "-o", o])), 3);
    assert_eq!(
        code(&ccopf(&[
            "solve",
            "--case",
            &case,
            "-o",
            o,
            "--approach",
            "sideways"
        ])),
        3
    );
    assert_eq!(
        code(&ccopf(&[
            "solve",
            "--case",
            &case,
            "-o",
            o,
            "--backend",
            "nope"
        ])),
        3
    );
    let bad = write_config(dir.path(), "unknown_field = 1\n");
    assert_eq!(code(&ccopf(&["solve", "--config", s(&bad), "-o", o])), 3);
}

#[test]
fn backend_env_var_is_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let case = case14();
    let o = Command::new(env!("CARGO_BIN_EXE_ccopf"))
        .args([
            "solve",
            "--case",
            &case,
            "-o",
            s(dir.path()),
            "--n-samples",
            "500",
        ])
        .env("CCOPF_BACKEND", "nope")
        .output()
        .unwrap();
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}

#[test]
fn evaluate_reports_rates_below_target() {
    let dir = tempfile::tempdir().unwrap();
    let case = case14();
    let o = run_ok(&[
        "evaluate",
        "--case",
        &case,
        "-o",
        s(dir.path()),
        "--n-samples",
        "5000",
    ]);
    assert!(String::from_utf8_lossy(&o.stdout).contains("worst-case violation"));
    let risk: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("risk.json")).unwrap()).unwrap();
    assert!(risk["worst_case"].as_f64().unwrap() <= 0.05);
    let csv = fs::read_to_string(dir.path().join("risk.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * (3 + 20));
}

#[test]
fn experiment_rows_columns_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let case = case14();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        run_ok(&[
            "experiment",
            "--case",
            &case,
            "-o",
            s(out),
            "--n-samples",
            "1000",
            "--seeds",
            "3,4",
        ]);
    }
    let csv = fs::read_to_string(a.join("runs.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 2 + 1);
    assert!(lines[0].starts_with("seed,ll_classical,ll_constraint_informed,"));
    assert!(lines[3].starts_with("mean,"));
    for f in [
        "runs.csv",
        "summary.json",
        "run-3/run.json",
        "run-4/run.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert!(a.join("timings.csv").exists());
}

#[test]
fn effective_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let case = case14();
    let first = dir.path().join("first");
    run_ok(&[
        "solve",
        "--case",
        &case,
        "-o",
        s(&first),
        "--n-samples",
        "800",
        "--epsilon",
        "0.1",
        "--seeds",
        "5",
    ]);
    let written = fs::read_to_string(first.join("config.toml")).unwrap();
    assert!(written.contains("epsilon = 0.1"));
    let second = dir.path().join("second");
    run_ok(&[
        "solve",
        "--config",
        s(&first.join("config.toml")),
        "-o",
        s(&second),
    ]);
    assert_eq!(
        fs::read_to_string(second.join("config.toml")).unwrap(),
        written.replace(s(&first), s(&second))
    );
    assert_eq!(
        fs::read(first.join("solution.json")).unwrap(),
        fs::read(second.join("solution.json")).unwrap()
    );
}

#[test]
fn pwl_and_ptdf_dumps() {
    let o = run_ok(&["pwl"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["a"].as_array().unwrap().len(), 10);
    let case3 = fixture("case3.json");
    let o = run_ok(&["ptdf", "--case", s(&case3)]);
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "line,1,2,3");
    assert_eq!(text.lines().count(), 4);
    let first: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .skip(1)
        .map(|x| x.parse().unwrap())
        .collect();
    assert!((first[1] + 2.0 / 3.0).abs() < 1e-12);
}
