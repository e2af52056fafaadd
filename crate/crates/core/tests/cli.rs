use std::path::Path;
use std::process::{Command, Output};

fn fracsheet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracsheet")).args(args).output().unwrap()
}

fn fixture() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/bilinear_65.csv").display().to_string()
}

#[test]
fn norm_of_bilinear_fixture() {
    let out = fracsheet(&["norm", "-i", &fixture(), "--beta1", "0.5", "--beta2", "0.5"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "w1");
    let value: f64 = row[1].parse().unwrap();
    assert!((value - 9.0).abs() < 1e-9, "{value}");
    assert_eq!(&row[6..], ["0", "0", "1", "1"]);
}

#[test]
fn generate_smooth_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("raw.csv").display().to_string();
    let smoothed = dir.path().join("smooth.csv").display().to_string();
    let gen = fracsheet(&["generate", "--field", "fbs", "--n", "9", "--pad", "2", "--seed", "3", "-o", &raw]);
    assert!(gen.status.success(), "{}", String::from_utf8_lossy(&gen.stderr));
    assert_eq!(std::fs::read_to_string(&raw).unwrap().lines().count(), 1 + 11 * 11);
    let sm = fracsheet(&["smooth", "-i", &raw, "-k", "2", "-o", &smoothed]);
    assert!(sm.status.success(), "{}", String::from_utf8_lossy(&sm.stderr));
    assert_eq!(std::fs::read_to_string(&smoothed).unwrap().lines().count(), 1 + 9 * 9);
    let again = dir.path().join("again.csv").display().to_string();
    fracsheet(&["generate", "--field", "fbs", "--n", "9", "--pad", "2", "--seed", "3", "-o", &again]);
    assert_eq!(std::fs::read(&raw).unwrap(), std::fs::read(&again).unwrap());
}

#[test]
fn converge_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.conf");
    std::fs::write(&cfg, "field = fbs\nnmax_exponent = 3\nreplicas = 4\nseed = 7\n").unwrap();
    let out = dir.path().join("out");
    let run = fracsheet(&["converge", "-c", &cfg.display().to_string(), "--out", &out.display().to_string()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let report = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 1 + 3 * 4);
    assert!(out.join("summary.csv").exists());
    assert!(String::from_utf8(run.stdout).unwrap().contains("medians strictly decreasing"));
}

#[test]
fn lemma_check_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fbm1.csv");
    let run = fracsheet(&["lemma-check", "-l", "fbm1", "-o", &csv.display().to_string()]);
    assert!(run.status.success());
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("lemma,t1,t2,h,lhs,rhs,ratio"));
}

#[test]
fn exit_codes() {
    assert_eq!(fracsheet(&["converge", "-c", "/nonexistent/path.conf"]).status.code(), Some(2));
    assert_eq!(fracsheet(&["generate", "--h1", "1.5"]).status.code(), Some(2));
    assert_eq!(fracsheet(&["lemma-check", "-l", "nope"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "colour = blue\n").unwrap();
    let out = fracsheet(&["converge", "-c", &bad.display().to_string()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));
    let unpadded = fracsheet(&["smooth", "-i", &fixture(), "-k", "2", "--pad", "0"]);
    assert_eq!(unpadded.status.code(), Some(2));
}
