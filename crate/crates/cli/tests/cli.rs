use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use klap::solver::{solve_with_rule, Monitors, UpdateRule};
use klap::{normalize, write_kernel, Klap};
use klap_cli::corpus::two_state;
use klap_cli::verify::{run_suite, Scale};
use serde_json::Value;
use tempfile::TempDir;

fn klap(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_klap")).args(args).current_dir(dir).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn scenario(kernel: &str, p_data: &str, extra: &str, solver: &str) -> String {
    format!(
        r#"{{
  "klap_config": 1,
  "kernel": {kernel},
  "p_data": {p_data},
  {extra}
  "solver": {solver}
}}"#
    )
}

fn summary(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn trajectory_rows(dir: &Path) -> usize {
    std::fs::read_to_string(dir.join("trajectory.csv")).unwrap().lines().count() - 1
}

#[test]
fn solve_identity_takes_one_step() {
    let dir = TempDir::new().unwrap();
    let cfg = scenario(r#"{"type": "identity", "n": 3}"#, r#"{"weights": [0.2, 0.3, 0.5]}"#, "", r#"{"lambda": 0}"#);
    let out = klap(&["solve", "--config", "s.json"], write(dir.path(), "s.json", &cfg).parent().unwrap());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(trajectory_rows(dir.path()), 2);
    let s = summary(dir.path());
    assert_eq!(s["iterations"], 1);
    assert!(s["tv_to_pdata"].as_f64().unwrap() < 1e-15);
    assert_eq!(s["identifiability"]["injective"], true);
}

#[test]
fn solve_constant_kernel_stops_at_start() {
    let dir = TempDir::new().unwrap();
    let cfg = scenario(
        r#"{"type": "constant", "input_size": 3, "output_size": 2, "target": 1}"#,
        r#"{"weights": [0.2, 0.3, 0.5]}"#,
        "",
        r#"{"lambda": 0}"#,
    );
    write(dir.path(), "s.json", &cfg);
    let out = klap(&["solve", "--config", "s.json"], dir.path());
    assert_eq!(code(&out), 0);
    assert_eq!(trajectory_rows(dir.path()), 1);
    let s = summary(dir.path());
    assert_eq!(s["iterations"], 0);
    assert_eq!(s["final_residual"], 0.0);
    assert_eq!(s["identifiability"]["injective"], false);
    assert_eq!(s["identifiability"]["nullspace_dimension_on_zero_sum_subspace"], 2);
}

#[test]
fn solve_two_state_benchmark_recovers_p_data() {
    let dir = TempDir::new().unwrap();
    let cfg = scenario(
        r#"{"type": "matrix", "rows": [[0.9, 0.2], [0.1, 0.8]]}"#,
        r#"{"weights": [0.3, 0.7]}"#,
        "",
        r#"{"lambda": 0, "init": "uniform"}"#,
    );
    write(dir.path(), "s.json", &cfg);
    let out = klap(&["solve", "--config", "s.json", "--out", "results"], dir.path());
    assert_eq!(code(&out), 0);
    let s = summary(&dir.path().join("results"));
    assert_eq!(s["converged"], true);
    assert!(s["tv_to_pdata"].as_f64().unwrap() <= 1e-7);
}

#[test]
fn solve_reports_non_convergence() {
    let dir = TempDir::new().unwrap();
    let cfg = scenario(
        r#"{"type": "matrix", "rows": [[0.9, 0.2], [0.1, 0.8]]}"#,
        r#"{"weights": [0.3, 0.7]}"#,
        "",
        r#"{"lambda": 0, "max_iterations": 3}"#,
    );
    write(dir.path(), "s.json", &cfg);
    let out = klap(&["solve", "--config", "s.json"], dir.path());
    assert_eq!(code(&out), 2);
    assert_eq!(summary(dir.path())["converged"], false);
}

#[test]
fn config_errors_exit_one_with_line_numbers() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (scenario(r#"{"type": "identity", "n": 2}"#, r#"{"weights": [0.5, 0.5]}"#, "", r#"{"lamda": 0}"#), "line 6"),
        (scenario(r#"{"type": "identity", "n": 2}"#, r#"{"weights": [0.5, 0.5]}"#, "", r#"{"lambda": 0, "weight": 0}"#), "line 6"),
        (scenario(r#"{"type": "identity", "n": 2}"#, r#"{"weights": [0.2, 0.3, 0.5]}"#, "", r#"{"lambda": 0}"#), "line 4"),
        (scenario(r#"{"type": "identity", "n": 2}"#, r#"{"weights": [0.5, 0.5]}"#, "", r#"{"lambda": 0,}"#), "line 6"),
    ];
    for (text, line) in cases {
        write(dir.path(), "bad.json", &text);
        let out = klap(&["solve", "--config", "bad.json"], dir.path());
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert_eq!(code(&out), 1, "{stderr}");
        assert!(stderr.contains(line), "{stderr}");
    }
    let out = klap(&["solve", "--config", "missing.json"], dir.path());
    assert_eq!(code(&out), 1);
    let out = klap(&["solve"], dir.path());
    assert_eq!(code(&out), 1);
}

#[test]
fn identify_exit_codes() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (r#"{"type": "identity", "n": 3}"#, "[0.2, 0.3, 0.5]", 0, 0),
        (r#"{"type": "grayscale"}"#, "[0.1, 0.2, 0.3, 0.4]", 3, 2),
        (r#"{"type": "dropout", "coordinates": 1, "levels": 3, "alpha": 1.0}"#, "[0.2, 0.3, 0.5]", 3, 2),
    ];
    for (kernel, p, expected, nullity) in cases {
        let cfg = scenario(kernel, &format!(r#"{{"weights": {p}}}"#), "", r#"{"lambda": 0}"#);
        write(dir.path(), "k.json", &cfg);
        let out = klap(&["identify", "--config", "k.json"], dir.path());
        assert_eq!(code(&out), expected, "{kernel}");
        let report: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(report["nullspace_dimension_on_zero_sum_subspace"], nullity);
        assert_eq!(report["injective"], expected == 0);
    }
    write(dir.path(), "k.txt", &write_kernel(&two_state()));
    assert_eq!(code(&klap(&["identify", "--kernel", "k.txt"], dir.path())), 0);
    write(dir.path(), "bad.txt", "klap-kernel v1\n2 2\n0.5 0.5\n0.6 0.5\n");
    assert_eq!(code(&klap(&["identify", "--kernel", "bad.txt"], dir.path())), 1);
}

#[test]
fn kernel_files_resolve_relative_to_the_scenario() {
    let dir = TempDir::new().unwrap();
    std::fs::create_dir(dir.path().join("cfg")).unwrap();
    write(&dir.path().join("cfg"), "k.txt", &write_kernel(&two_state()));
    let cfg = scenario(r#"{"type": "file", "path": "k.txt"}"#, r#"{"weights": [0.3, 0.7]}"#, "", r#"{"lambda": 0}"#);
    write(&dir.path().join("cfg"), "s.json", &cfg);
    let out = klap(&["solve", "--config", "cfg/s.json"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
}

fn grayscale_sweep(sweep: &str) -> String {
    scenario(
        r#"{"type": "grayscale"}"#,
        r#"{"weights": [0.05, 0.45, 0.4, 0.1]}"#,
        &format!(
            r#""support_floor": 1e-6,
  "prior": {{"samples": {{"count": 50}}}},
  "observations": {{"samples": {{"count": 10000}}}},
  "sweep": {sweep},"#
        ),
        r#"{"weight": 0.2, "init": "uniform", "seed": 0}"#,
    )
}

fn report(dir: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(dir.join("report.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn weight_sweep_shows_the_interior_optimum() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "s.json", &grayscale_sweep(r#"{"weights": [0.99, 0.0, 0.8, 0.2]}"#));
    let out = klap(&["sweep", "--config", "s.json", "--jobs", "4"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rows = report(dir.path());
    let weights: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert_eq!(weights, vec![0.0, 0.2, 0.8, 0.99]);
    for column in [4, 5] {
        let e: Vec<f64> = rows.iter().map(|r| r[column].parse().unwrap()).collect();
        assert!(e[0] > e[1] && e[3] > e[1], "{e:?}");
    }
}

#[test]
fn sweep_reports_are_byte_identical_across_runs_and_job_counts() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "s.json", &grayscale_sweep(r#"{"weights": [0.0, 0.2, 0.8], "clean_counts": [10, 50], "gammas": [1.0, 0.5]}"#));
    let mut reports = Vec::new();
    for (jobs, out) in [("1", "a"), ("4", "b"), ("4", "c")] {
        assert_eq!(code(&klap(&["sweep", "--config", "s.json", "--jobs", jobs, "--out", out], dir.path())), 0);
        reports.push(std::fs::read(dir.path().join(out).join("report.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[1], reports[2]);
    assert_eq!(report(&dir.path().join("a")).len(), 12);
    for name in ["solve", "sample"] {
        let mut outputs = Vec::new();
        for out in ["x", "y"] {
            assert_eq!(code(&klap(&[name, "--config", "s.json", "--out", out], dir.path())), 0);
            let mut files: Vec<_> = std::fs::read_dir(dir.path().join(out)).unwrap().map(|e| e.unwrap().path()).collect();
            files.sort();
            outputs.push(files.iter().map(|f| (f.file_name().unwrap().to_owned(), std::fs::read(f).unwrap())).collect::<Vec<_>>());
        }
        assert_eq!(outputs[0], outputs[1], "{name}");
    }
}

#[test]
fn degenerate_sweep_matches_solve() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "s.json", &grayscale_sweep("{}"));
    assert_eq!(code(&klap(&["sweep", "--config", "s.json"], dir.path())), 0);
    assert_eq!(code(&klap(&["solve", "--config", "s.json"], dir.path())), 0);
    let rows = report(dir.path());
    assert_eq!(rows.len(), 1);
    let s = summary(dir.path());
    let row = &rows[0];
    assert_eq!(row[0], "50");
    assert_eq!(row[1], "10000");
    assert_eq!(row[4].parse::<f64>().unwrap(), s["kl_to_pdata"].as_f64().unwrap());
    assert_eq!(row[5].parse::<f64>().unwrap(), s["tv_to_pdata"].as_f64().unwrap());
    assert_eq!(row[6].parse::<u64>().unwrap(), s["iterations"].as_u64().unwrap());
    assert_eq!(row[7], s["converged"].to_string());
}

#[test]
fn gamma_sweep_slows_down_but_lands_on_the_same_point() {
    let dir = TempDir::new().unwrap();
    let cfg = scenario(
        r#"{"type": "matrix", "rows": [[0.9, 0.2], [0.1, 0.8]]}"#,
        r#"{"weights": [0.3, 0.7]}"#,
        r#""sweep": {"gammas": [1.0, 0.5, 0.1, 0.01]},"#,
        r#"{"lambda": 0, "init": "uniform", "max_iterations": 1000000}"#,
    );
    write(dir.path(), "s.json", &cfg);
    assert_eq!(code(&klap(&["sweep", "--config", "s.json"], dir.path())), 0);
    let mut rows = report(dir.path());
    rows.sort_by(|a, b| b[3].parse::<f64>().unwrap().total_cmp(&a[3].parse().unwrap()));
    let iterations: Vec<u64> = rows.iter().map(|r| r[6].parse().unwrap()).collect();
    assert!(iterations.windows(2).all(|w| w[1] >= w[0]), "{iterations:?}");
    let errors: Vec<f64> = rows.iter().map(|r| r[5].parse().unwrap()).collect();
    let spread = errors.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - errors.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread <= 1e-6, "{errors:?}");
    assert!(rows.iter().all(|r| r[7] == "true"));
}

#[test]
fn sample_writes_the_batches() {
    let dir = TempDir::new().unwrap();
    write(dir.path(), "s.json", &grayscale_sweep("{}"));
    let out = klap(&["sample", "--config", "s.json"], dir.path());
    assert_eq!(code(&out), 0);
    let json: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(json["corrupted"]["count"], 10000);
    assert_eq!(json["clean"]["empirical"].as_array().unwrap().len(), 4);
    let csv = std::fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 10000 + 50);
    let exact = scenario(r#"{"type": "identity", "n": 2}"#, r#"{"weights": [0.5, 0.5]}"#, "", r#"{"lambda": 0}"#);
    write(dir.path(), "e.json", &exact);
    assert_eq!(code(&klap(&["sample", "--config", "e.json"], dir.path())), 1);
}

/// Normalizes `m + (λ/(1+λ)) h`, dropping the `1/(1+λ)` factor on `m`.
fn mutant(problem: &Klap<'_>, _gamma: f64, state: &klap::IterationState) -> klap::IterationState {
    let lambda = problem.lambda();
    let raw: Vec<f64> = match problem.prior() {
        Some(h) => state.mixture().iter().zip(h.iter()).map(|(m, h)| m + lambda / (1.0 + lambda) * h).collect(),
        None => state.mixture().weights().to_vec(),
    };
    problem.advance(state, normalize(&raw).unwrap())
}

#[test]
fn tampered_update_rule_fails_the_fixed_point_property() {
    let honest = run_suite(Scale::Quick, &klap::solver::standard_update);
    assert!(honest.passed(), "{:?}", honest.outcomes);
    let tampered = run_suite(Scale::Quick, &mutant as &UpdateRule);
    let fixed_point = tampered.outcome("fixed_point").unwrap();
    assert!(!fixed_point.passed, "{fixed_point}");
    assert!(!tampered.passed());

    // The mutant is a genuine fault: it stalls away from the stationary point.
    let k = two_state();
    let q = klap::apply(&k, &klap::FiniteDistribution::new(vec![0.3, 0.7]).unwrap()).unwrap();
    let h = klap::FiniteDistribution::new(vec![0.8, 0.2]).unwrap();
    let cfg = klap::SolverConfig {
        lambda: 1.0,
        max_iterations: 10_000,
        ..klap::SolverConfig::default()
    };
    let run = solve_with_rule(&k, &q, Some(&h), &cfg, &h, &Monitors::default(), &mutant).unwrap();
    assert!(!run.converged && run.final_residual() > 1e-3);
}

#[test]
fn verify_exit_code_and_artifacts() {
    let dir = TempDir::new().unwrap();
    let out = klap(&["verify", "--scale", "quick", "--out", "v"], dir.path());
    assert_eq!(code(&out), 0);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("PASS ")).count(), 8, "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("v/verify_report.csv")).unwrap();
    assert!(csv.starts_with(klap_cli::verify::REPORT_HEADER));
    assert!(dir.path().join("v/rate_bound.csv").exists());
}
