use std::process::{Command, Output};

use biharmonic::study::ConvergenceReport;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_biharmonic")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn data_rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn solve_square_first_eigenvalue() {
    let out = run(&["solve", "--domain", "square", "--num-eigs", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&stdout(&out));
    assert_eq!(rows[0], ["index", "lambda", "residual"]);
    assert_eq!(rows.len(), 2);
    let lambda: f64 = rows[1][1].parse().unwrap();
    let exact = 4.0 * std::f64::consts::PI.powi(4);
    assert!((lambda - exact).abs() / exact < 2e-3, "{lambda}");
    assert!(lambda > exact);
    let residual: f64 = rows[1][2].parse().unwrap();
    assert!(residual <= 1e-8);
    // 10 significant digits
    assert_eq!(rows[1][1].replace('.', "").trim_start_matches('0').len(), 10);
}

#[test]
fn sweep_lshape_writes_report_rates_and_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lshape.csv");
    let out = run(&["sweep", "--domain", "lshape", "--levels", "6", "--output", path.to_str().unwrap(), "--dump-mesh"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());

    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("# corner 1: Q = (0.5, 0.5)"));
    let report = ConvergenceReport::from_csv(&text).unwrap();
    assert!(report.complete);
    assert_eq!(report.rows.iter().map(|r| r.level).collect::<Vec<_>>(), [2, 3, 4, 5, 6]);
    let last = report.rows.last().unwrap().lambdas[0];
    assert!((last - 2619.83).abs() / 2619.83 < 2e-3, "{last}");

    let rates = std::fs::read_to_string(dir.path().join("lshape_rates.csv")).unwrap();
    assert!(rates.starts_with("h,diff_1,rate_1,"));
    assert_eq!(rates.lines().count(), 5);

    let mesh = std::fs::read_to_string(dir.path().join("lshape.mesh")).unwrap();
    let head: Vec<usize> = mesh.lines().next().unwrap().split(' ').map(|v| v.parse().unwrap()).collect();
    assert_eq!(head[2], 6);
    assert_eq!(mesh.lines().count(), 1 + head[0] + head[1]);
}

#[test]
fn compare_slit_flags_usual_first_eigenvalue() {
    let out = run(&["compare", "--domain", "slit"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = data_rows(&stdout(&out));
    assert_eq!(rows[0][0], "method");
    let usual = rows.iter().find(|r| r[0] == "usual").unwrap();
    let flags = usual.last().unwrap();
    assert!(flags.split(' ').any(|f| f == "lambda1"), "{flags}");
    let modified = rows.iter().find(|r| r[0] == "modified").unwrap();
    assert!(modified.last().unwrap().is_empty());
    let u1: f64 = usual[2].parse().unwrap();
    let m1: f64 = modified[2].parse().unwrap();
    assert!(u1 < 0.6 * m1);
}

#[test]
fn output_is_deterministic() {
    let args = ["sweep", "--domain", "ring", "--levels", "2", "--format", "markdown"];
    let a = run(&args);
    let b = run(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert!(text.starts_with("```text\nbiharmonic sweep\n"));
    assert!(text.contains("## Eigenvalues") && text.contains("## Convergence"));
}

#[test]
fn failures_reach_the_exit_code() {
    let out = run(&["solve", "--levels", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("domain"));

    let out = run(&["solve", "--domain", "square", "--levels", "0"]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&["solve", "--domain", "lshape", "--levels", "3", "--linear-tol", "1e-10", "--solver", "pcg", "--eig-tol", "1e-15"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("missing").join("out.csv");
    let out = run(&["solve", "--domain", "square", "--output", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_lists_every_key() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for key in biharmonic_cli::config::KEYS {
        assert!(text.contains(key), "{key}");
        assert!(text.contains(&format!("--{}", key.replace('_', "-"))), "{key}");
    }
    for cmd in ["solve", "sweep", "compare"] {
        assert!(text.contains(cmd));
    }
}
