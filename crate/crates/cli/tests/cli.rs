use std::path::Path;
use std::process::{Command, Output};

fn homocell(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homocell"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn cell_writes_tensor_and_fields() {
    let dir = tempfile::tempdir().unwrap();
    let o = homocell(dir.path(), &["cell", "--coeff-expr", "2 + cos(2*pi*y1)", "--n", "32"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc = json(&dir.path().join("A_hat.json"));
    assert_eq!(doc["schema_version"], 1);
    let a11 = doc["a_hat"][0].as_f64().unwrap();
    assert!((a11 - 3f64.sqrt()).abs() <= 1e-2, "{a11}");
    for f in ["chi.csv", "phi.csv", "psi.csv", "b.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
}

#[test]
fn solve_expand_and_identity_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let o = homocell(dir.path(), &["solve", "--eps", "0.25", "--h", "0.03125"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("solution.csv").exists());
    assert!(json(&dir.path().join("meta.json"))["residual"].as_f64().unwrap() <= 1e-8);

    let o = homocell(dir.path(), &["expand", "--eps", "0.25", "--h", "0.03125", "--norms", "a=0,a=2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let n = json(&dir.path().join("norms.json"));
    assert_eq!(n["schema_version"], 1);
    assert!(n["w"]["l2_volume"].as_f64().unwrap() > 0.0);

    let o = homocell(dir.path(), &["identity", "--eps", "0.25", "--h", "0.015625", "--levels", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(json(&dir.path().join("identity.json"))["schema_version"], 1);
}

#[test]
fn rates_writes_all_formats_and_asserts() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["rates", "--eps-ladder", "1/4,1/8,1/16", "--r", "8"];
    let o = homocell(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("rates.csv")).unwrap();
    assert!(csv.starts_with("eps,h,r,cell_n,coefficient_hash,build_id,field,norm,a,value\r\n"));
    assert_eq!(json(&dir.path().join("rates.json"))["schema_version"], 1);
    assert!(std::fs::read_to_string(dir.path().join("rates.svg")).unwrap().starts_with("<svg"));

    let cfg = dir.path().join("study.toml");
    std::fs::write(&cfg, "[[assert]]\nquantity = \"w.weighted_h1(a=0)\"\nmin = 0.8\nmax = 1.3\n").unwrap();
    let mut with_cfg: Vec<&str> = args.to_vec();
    with_cfg.extend(["--config", cfg.to_str().unwrap(), "--assert"]);
    assert_eq!(code(&homocell(dir.path(), &with_cfg)), 0);

    std::fs::write(&cfg, "[[assert]]\nquantity = \"w.weighted_h1(a=0)\"\nmin = 3.0\n").unwrap();
    let o = homocell(dir.path(), &with_cfg);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn eig_writes_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let o = homocell(dir.path(), &["eig", "--kind", "neumann", "--eps-ladder", "1/4,1/8,1/16", "--r", "8", "--k", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let spectrum = std::fs::read_to_string(dir.path().join("spectrum.csv")).unwrap();
    assert!(spectrum.starts_with("kind,eps,k,lambda,residual\r\n"));
    // Each ladder point contributes k oscillatory rows and k homogenized rows (eps = 0).
    assert_eq!(spectrum.lines().count(), 1 + 3 * 2 * 2);
    assert!(dir.path().join("gaps.csv").exists() && dir.path().join("gaps.svg").exists());
    assert_eq!(json(&dir.path().join("gap_inequality.json"))["schema_version"], 1);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 6] = [
        &["solve"],
        &["solve", "--eps", "0.125", "--h", "0.0625"],
        &["rates", "--eps-ladder", "1/8,1/4"],
        &["rates", "--config", "/nonexistent/study.toml"],
        &["cell", "--coeff-expr", "sin(2*pi*y1)", "--n", "16"],
        &["eig", "--k", "500", "--eps-ladder", "1/4", "--r", "8"],
    ];
    for args in cases {
        let o = homocell(dir.path(), args);
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn numerical_failures_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = homocell(dir.path(), &["solve", "--eps", "0.25", "--h", "0.0625", "--F", "1/0"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}
