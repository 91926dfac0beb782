use std::path::Path;
use std::process::{Command, Output};

fn bft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bft"))
        .args(args)
        .output()
        .expect("spawn bft")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn verify_filtered_suite_passes() {
    let out = bft(&["verify", "--filter", "butterfly"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().skip(1).filter(|l| !l.contains("checks,")).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|l| l.starts_with("butterfly ")), "{text}");
}

#[test]
fn verify_unknown_suite_fails() {
    let out = bft(&["verify", "--filter", "nothing"]);
    assert_eq!(out.status.code(), Some(1));
}

fn write_sample_weights(dir: &Path) -> std::path::PathBuf {
    use bft_core::butterfly::{ButterflySpec, ButterflyWeights};
    use bft_core::weights_io::{write_weights, ScalarWidth, WeightPayload};
    let spec = ButterflySpec::with_base(16, 4).unwrap();
    let wts = ButterflyWeights::from_fn(spec, |l, r, j| (l + 2 * r + 3 * j) as f64 / 50.0 - 0.4);
    let path = dir.join("fusion.bftw");
    write_weights(&path, &WeightPayload::Butterfly(wts), ScalarWidth::F64).unwrap();
    path
}

#[test]
fn verify_weight_file_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_sample_weights(dir.path());
    let p = path.to_str().unwrap();
    let out = bft(&["verify", "--filter", "weights", "--weights", p, "--json"]);
    assert!(out.status.success(), "{}", stdout(&out));
    let report = json(&out);
    let checks = report["suites"][0]["checks"].as_array().unwrap();
    assert!(checks.iter().any(|c| c["name"] == "sidecar" && c["passed"] == true));

    let mut bytes = std::fs::read(&path).unwrap();
    let len = bytes.len();
    bytes.truncate(len - 5);
    std::fs::write(&path, bytes).unwrap();
    let out = bft(&["verify", "--filter", "weights", "--weights", p]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("weights/decode"), "{err}");
}

#[test]
fn bench_reports_mac_ratio() {
    let out = bft(&[
        "bench", "--n", "1024", "--k", "2", "--hw", "2", "2", "--reps", "1", "--json",
    ]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["bft_macs"], 20480);
    assert_eq!(v["dense_macs"], 1_048_576);
}

#[test]
fn bench_rejects_unfactorable() {
    let out = bft(&["bench", "--n", "1", "--k", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn flops_builtin_and_config_file() {
    let out = bft(&["flops", "--arch", "mobilenetv1-0.25-128", "--json"]);
    assert!(out.status.success());
    let total = json(&out)["total"].as_u64().unwrap() as f64;
    assert!((total - 14e6).abs() / 14e6 < 0.05, "{total}");

    let out = bft(&[
        "flops",
        "--arch",
        "mobilenetv1-1.0-224",
        "--fusion",
        "bft",
        "--base",
        "2",
        "--json",
    ]);
    let share = json(&out)["fusion_share"].as_f64().unwrap();
    assert!((share - 60.0).abs() <= 5.0, "{share}");

    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("arch.json");
    std::fs::write(&cfg, bft_core::flops::mobilenet_v1(0.5, 224).to_json()).unwrap();
    let out = bft(&["flops", "--config", cfg.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("fusion share"));
}

#[test]
fn flops_requires_an_architecture() {
    assert_eq!(bft(&["flops"]).status.code(), Some(1));
    assert_eq!(bft(&["flops", "--arch", "resnet-50"]).status.code(), Some(1));
}

#[test]
fn train_demo_is_deterministic() {
    let args = ["train-demo", "--seed", "3", "--epochs", "4", "--json"];
    let a = json(&bft(&args));
    let b = json(&bft(&args));
    assert_eq!(a, b);
    let runs = a["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 2);
    assert_eq!(runs[0]["fusion"], "bft");
    assert_eq!(runs[1]["fusion"], "pointwise");
    assert_eq!(runs[0]["train_accuracy"].as_array().unwrap().len(), 4);
}

#[test]
fn train_demo_rejects_bad_residual() {
    assert_eq!(bft(&["train-demo", "--residual", "sideways"]).status.code(), Some(1));
}

#[test]
fn audit_export_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let graph = dir.path().join("g.json");
    let g = graph.to_str().unwrap();
    let out = bft(&["audit", "--n", "16", "--k", "2", "--export", g, "--json"]);
    assert!(out.status.success());
    let first = json(&out);
    assert_eq!(first["bottleneck"], 16);
    assert_eq!(first["all_principles"], true);
    let again = json(&bft(&["audit", "--graph", g, "--json"]));
    assert_eq!(first, again);
}
