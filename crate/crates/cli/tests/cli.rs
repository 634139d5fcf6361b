use std::process::Command;

fn vflprecode(dir: &std::path::Path, args: &[&str]) -> String {
    let out = Command::new(env!("CARGO_BIN_EXE_vflprecode"))
        .args(["--k", "2", "--l-p", "2", "--seeds", "1", "--n-samples", "24", "--n-v", "2", "--n-h", "2"])
        .args(["--max-epochs", "2", "--batch-size", "8", "-o"])
        .arg(dir)
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn config_flags_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let text = vflprecode(dir.path(), &["--schemes", "zf,h-mvmm", "--snr", "-5,10", "--h-mvmm", "all-sensors", "config"]);
    assert!(text.contains("schemes = [\n    \"zf\",\n    \"h-mvmm\",\n]") || text.contains("schemes = [\"zf\", \"h-mvmm\"]"));
    assert!(text.contains("h_mvmm = \"all-sensors\""));
    assert!(text.contains("-5.0"));
}

#[test]
fn train_eval_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path();
    let summary = vflprecode(path, &["--schemes", "uni-pilot,zf", "train"]);
    assert!(summary.contains("uni-pilot") && summary.contains("zf"));
    assert!(path.join("metrics.csv").exists());
    let eval = vflprecode(path, &["--schemes", "uni-pilot", "eval", "--bits", "0"]);
    assert!(eval.contains("sum rate"));
    let report = vflprecode(path, &["report"]);
    assert!(report.contains("MB"));
    assert!(path.join("report.csv").exists());
}

#[test]
fn gen_scene_writes_geometry_and_samples() {
    let dir = tempfile::tempdir().unwrap();
    vflprecode(dir.path(), &["gen-scene"]);
    let point = dir.path().join("scenes").join("k2-snr30-lp2-seed1");
    assert!(point.join("scene.toml").exists());
    let samples = std::fs::read_to_string(point.join("samples.csv")).unwrap();
    assert_eq!(samples.lines().count(), 1 + 24 * 2);
}

#[test]
fn unknown_scheme_is_rejected() {
    let out = Command::new(env!("CARGO_BIN_EXE_vflprecode"))
        .args(["--schemes", "bs-nn", "config"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
