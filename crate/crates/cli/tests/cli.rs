//! The `segmicro` binary end to end: subcommands, file outputs and exit
//! codes.

use std::path::Path;
use std::process::{Command, Output};

fn segmicro(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segmicro"))
        .current_dir(dir)
        .env_remove("SEGMICRO_THREADS")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const CONFIG: &str = r#"{
  "schema": "segmicro.experiment.v1",
  "seed": 5,
  "model": {"arch": "unet", "filters": [2, 4, 8, 16, 32], "conv_kernel": 3, "deconv_kernel": 2,
            "out_kernel": 1, "num_channels": 1, "num_classes": 3},
  "optimizer": {"kind": "ADAM"},
  "training": {"batch_size": 4, "max_epochs": 2},
  "data": {"synthetic": {"train_count": 6, "test_count": 2, "height": 32, "width": 32}}
}"#;

#[test]
fn params_prints_reference_counts() {
    let dir = tempfile::tempdir().unwrap();
    let o = segmicro(dir.path(), &["params", "--arch", "unet", "--filters", "16,32,64,128,256"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("1940851 parameters"), "{}", stdout(&o));
    let o = segmicro(dir.path(), &["params", "--arch", "fcn", "--filters", "8,16,32,16,8", "--out-kernel", "5"]);
    assert!(stdout(&o).contains("12275 parameters"));
}

#[test]
fn train_evaluate_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("exp.json"), CONFIG).unwrap();
    let o = segmicro(d, &["train", "--config", "exp.json", "--out", "runs"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch   2"));
    let run = std::fs::read_dir(d.join("runs")).unwrap().next().unwrap().unwrap().path();
    assert!(run.file_name().unwrap().to_string_lossy().starts_with("run-"));
    for f in ["config.json", "history.csv", "best.ckpt", "metrics.json", "summary.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let history = std::fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let ckpt = run.join("best.ckpt");

    let o = segmicro(d, &["gen-data", "--synthetic", "3", "--size", "30", "--out", "syn"]);
    assert!(o.status.success());
    let manifest = d.join("syn/manifest.json");
    assert!(manifest.is_file());

    // a 30x30 image cannot pass four poolings directly; predict pads and crops
    let o = segmicro(
        d,
        &["predict", "--checkpoint", ckpt.to_str().unwrap(), "--image", "syn/blob_000.png", "--out", "pred.png"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("(30x30)"));
    let sidecar: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("pred.png.json")).unwrap()).unwrap();
    let total: u64 = sidecar["class_pixels"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(total, 900);

    // evaluation needs inputs the network takes as-is
    let o = segmicro(d, &["gen-data", "--synthetic", "2", "--size", "32", "--out", "eval"]);
    assert!(o.status.success());
    let o = segmicro(
        d,
        &["evaluate", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", "eval/manifest.json", "--out", "scores"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("scores/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["samples"], 2);
    assert!(metrics.get("dice.1").is_some() && metrics.get("dice.2").is_some());
}

#[test]
fn augment_writes_original_plus_count_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(segmicro(d, &["gen-data", "--synthetic", "1", "--size", "40", "--out", "one"]).status.success());
    let o = segmicro(
        d,
        &["augment", "--image", "one/blob_000.png", "--mask", "one/blob_000_mask.png", "--count", "3", "--out", "aug"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let files = std::fs::read_dir(d.join("aug")).unwrap().count();
    assert_eq!(files, 8);
}

#[test]
fn configuration_errors_exit_2_and_leave_nothing_behind() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("bad.json"), CONFIG.replace("\"max_epochs\": 2", "\"max_epochs\": 2, \"typo\": 1")).unwrap();
    let o = segmicro(d, &["train", "--config", "bad.json", "--out", "runs"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo"));
    assert!(!d.join("runs").exists());

    std::fs::write(d.join("odd.json"), CONFIG.replace("\"height\": 32", "\"height\": 30")).unwrap();
    let o = segmicro(d, &["train", "--config", "odd.json", "--out", "runs"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!d.join("runs").join("run").exists());
    let leftovers = d.join("runs").read_dir().map(|r| r.count()).unwrap_or(0);
    assert_eq!(leftovers, 0);
}

#[test]
fn gradcheck_reports_and_fails_on_impossible_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let o = segmicro(dir.path(), &["gradcheck", "--max-coords", "5"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o).matches("PASS").count(), 2);
    let o = segmicro(dir.path(), &["gradcheck", "--max-coords", "5", "--tolerance", "1e-30"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn shipped_configs_parse_and_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        segmicro_cli::ExperimentConfig::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        seen += 1;
    }
    assert!(seen >= 3);
}
