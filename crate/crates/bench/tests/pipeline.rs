use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spingp::engine::{mll_and_gradient, NoiseModel};
use spingp_bench::co2::ingest_co2_csv;
use spingp_bench::kernel_expr::KernelExpr;
use spingp_bench::synth::{generate_sinusoid_data, SinusoidConfig};
use spingp_bench::BenchError;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spingp-bench"))
        .args(args)
        .output()
        .expect("run spingp-bench")
}

fn read_rows(path: &Path) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|x| x.unwrap()).collect()
}

fn column(path: &Path, name: &str) -> usize {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"))
}

#[test]
fn ingests_tiny_fixture_and_drops_sentinels() {
    let data = ingest_co2_csv(&fixture("co2_tiny.csv")).unwrap();
    assert_eq!(data.len(), 4);
}

#[test]
fn comments_only_file_has_no_valid_rows() {
    let err = ingest_co2_csv(&fixture("co2_comments_only.csv")).unwrap_err();
    assert!(matches!(err, BenchError::NoValidRows { .. }), "{err}");
}

#[test]
fn ingests_full_weekly_record() {
    let data = ingest_co2_csv(&fixture("co2_weekly_1958_2001.csv")).unwrap();
    assert_eq!(data.len(), 2225);
    assert!(data.times().windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn scaling_n_report_has_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = bench(&[
        "scaling-n", "--sweep", "50,100,200", "--method", "spingp,kf", "--repetitions", "1", "--seed", "11", "--out", out,
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = read_rows(&dir.path().join("report.csv"));
    assert_eq!(rows.len(), 6);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["report"]["seed"], 11);
}

#[test]
fn scaling_b_report_has_one_row_per_block_size() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = bench(&["scaling-b", "--sweep", "2,3,5", "--n", "80", "--repetitions", "1", "--out", out]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let path = dir.path().join("report.csv");
    let b = column(&path, "b");
    let rows = read_rows(&path);
    let dims: Vec<&str> = rows.iter().map(|r| &r[b]).collect();
    assert_eq!(dims, ["2", "3", "5"]);
}

#[test]
fn failing_cell_gives_nonzero_exit_but_keeps_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = bench(&[
        "scaling-n", "--sweep", "100,2100", "--method", "dense,spingp", "--repetitions", "1", "--out", out,
    ]);
    assert!(!res.status.success());
    let path = dir.path().join("report.csv");
    let err = column(&path, "error");
    let rows = read_rows(&path);
    assert_eq!(rows.len(), 4);
    assert_eq!(rows.iter().filter(|r| !r[err].is_empty()).count(), 1);
}

#[test]
fn bad_kernel_expression_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let res = bench(&["fit", "--kernel", "matern32 + cosine", "--out", dir.path().to_str().unwrap()]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("column 12"));
}

#[test]
fn report_mll_is_reproducible_from_seed_and_kernel() {
    let dir = tempfile::tempdir().unwrap();
    let kernel = "matern52(var=0.7, len=6) + matern12(var=0.2, len=1.5)";
    let res = bench(&[
        "scaling-n", "--sweep", "150,300", "--kernel", kernel, "--seed", "42", "--repetitions", "1", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let path = dir.path().join("report.csv");
    let (n_col, mll_col, k_col) = (column(&path, "n"), column(&path, "mll"), column(&path, "kernel"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    let seed = json["report"]["seed"].as_u64().unwrap();
    let noise = NoiseModel::new(json["report"]["noise_variance"].as_f64().unwrap()).unwrap();
    for row in read_rows(&path) {
        let n: usize = row[n_col].parse().unwrap();
        let recorded: f64 = row[mll_col].parse().unwrap();
        let expr = KernelExpr::parse(&row[k_col]).unwrap();
        let data = generate_sinusoid_data(n, seed, &SinusoidConfig::default()).unwrap();
        let (mll, _) = mll_and_gradient(&data, &expr.spec(), &expr.theta(), &noise).unwrap();
        assert!((mll - recorded).abs() <= 1e-12 * recorded.abs(), "n={n}: {mll} vs {recorded}");
    }
}

#[test]
fn gen_data_then_fit_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = bench(&["gen-data", "--n", "120", "--seed", "3", "--out", out]);
    assert!(res.status.success());
    let data = dir.path().join("data.csv");
    assert_eq!(read_rows(&data).len(), 120);
    let res = bench(&[
        "fit", "--input", data.to_str().unwrap(), "--kernel", "matern32(var=1, len=5)", "--budget", "60", "--out", out,
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(json["n"], 120);
    assert!(json["mll"].as_f64().unwrap().is_finite());
}

#[test]
fn predict_writes_requested_grid() {
    let dir = tempfile::tempdir().unwrap();
    let res = bench(&[
        "predict", "--n", "90", "--method", "kf", "--kernel", "matern32(var=1, len=5)", "--from", "-10", "--to", "100",
        "--points", "37", "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let path = dir.path().join("forecast.csv");
    let var = column(&path, "variance");
    let rows = read_rows(&path);
    assert_eq!(rows.len(), 37);
    assert!(rows.iter().all(|r| r[var].parse::<f64>().unwrap() >= 0.0));
}

#[test]
fn co2_forecast_covers_holdout_and_future() {
    let dir = tempfile::tempdir().unwrap();
    let res = bench(&[
        "co2", "--input", fixture("co2_weekly_1958_2001.csv").to_str().unwrap(), "--out", dir.path().to_str().unwrap(),
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    let n_holdout = json["n_holdout"].as_u64().unwrap() as usize;
    assert_eq!(json["n_train"].as_u64().unwrap() as usize + n_holdout, 2225);
    let rows = read_rows(&dir.path().join("forecast.csv"));
    assert_eq!(rows.len(), n_holdout + 416);
}

#[test]
fn co2_on_missing_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let res = bench(&["co2", "--input", "/nonexistent/co2.csv", "--out", dir.path().to_str().unwrap()]);
    assert!(!res.status.success());
}
