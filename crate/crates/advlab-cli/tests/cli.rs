//! End-to-end checks of the advlab binary: exit codes, artifact layout,
//! and bitwise reproducibility of serial runs.

use std::path::Path;
use std::process::{Command, Output};

fn advlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advlab"))
        .args(args)
        .env_remove("ADVLAB_DATA_DIR")
        .output()
        .expect("binary runs")
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

/// A config small enough that train finishes in well under a second.
const TINY: &str = r#"{
  "dataset": {"source": "synthetic", "classes": 3, "per_class_train": 8, "per_class_test": 8},
  "train": {
    "epochs": 2,
    "batch_size": 8,
    "schedule": {"kind": "one_cycle", "max_lr": 0.05, "total_epochs": 2},
    "attack": {"epsilon": 0.03137254901960784, "alpha": 0.00784313725490196, "steps": 3},
    "eval": {"max_samples": 12, "strong_restarts": 1},
    "augment": {"ops": []}
  }
}"#;

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn train_writes_the_full_artifact_set() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY);
    let out_dir = dir.path().join("run");
    let out = advlab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--serial",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    for name in ["config.json", "metrics.csv", "best.ckpt", "final.ckpt", "summary.json"] {
        assert!(out_dir.join(name).exists(), "missing {name}");
    }
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "epoch,lr,train_loss,nat_acc,fgsm_acc,pgd_acc,cw_acc,strong_acc,wall_s"
    );
    assert_eq!(lines.count(), 2);
    // Serial mode keeps the wall column at zero.
    for line in csv.lines().skip(1) {
        assert!(line.ends_with(",0.00000"), "wall_s not zeroed: {line}");
    }
    // The echoed config parses back and renames nothing.
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("config.json")).unwrap())
            .unwrap();
    assert_eq!(echoed["train"]["epochs"], 2);
    assert_eq!(echoed["train"]["optimizer"]["momentum"], 0.9);
}

#[test]
fn two_serial_runs_are_bitwise_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY);
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = advlab(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--serial",
        ]);
        assert!(out.status.success(), "{}", stderr_of(&out));
        out_dir
    };
    let a = run("a");
    let b = run("b");
    for name in ["metrics.csv", "summary.json", "best.ckpt", "final.ckpt", "config.json"] {
        let x = std::fs::read(a.join(name)).unwrap();
        let y = std::fs::read(b.join(name)).unwrap();
        assert_eq!(x, y, "{name} differs between identical serial runs");
    }
}

#[test]
fn zero_epochs_gives_a_header_only_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY);
    let out_dir = dir.path().join("run");
    let out = advlab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--epochs",
        "0",
        "--serial",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let csv = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(
        csv,
        "epoch,lr,train_loss,nat_acc,fgsm_acc,pgd_acc,cw_acc,strong_acc,wall_s\n"
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap())
            .unwrap();
    assert_eq!(summary["epochs_run"], 0);
    assert!(summary.get("overfit_gap").is_none());
    // Checkpoints of the untouched init still load.
    assert!(out_dir.join("best.ckpt").exists());
}

#[test]
fn malformed_config_exits_2_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, "{\"train\": {\"epochs\": }");
    let out_dir = dir.path().join("run");
    let out = advlab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(!out_dir.exists(), "output dir created despite config error");
    assert!(stderr_of(&out).starts_with("error:"));
}

#[test]
fn unknown_config_key_exits_2_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, r#"{"train": {"optimizer": {"momentun": 0.9}}}"#);
    let out = advlab(&["train", "--config", cfg.to_str().unwrap(), "--out-dir", "x"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_of(&out);
    assert!(err.contains("momentun"), "{err}");
    assert!(err.contains("train.optimizer"), "{err}");
}

#[test]
fn missing_out_dir_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY);
    let out = advlab(&["train", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr_of(&out).contains("--out-dir"));
}

#[test]
fn eval_prints_json_to_stdout_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY);
    let out_dir = dir.path().join("run");
    let out = advlab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--serial",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let ckpt = out_dir.join("best.ckpt");
    let out = advlab(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).expect("stdout is json");
    for key in ["natural_acc", "fgsm_acc", "pgd_acc", "cw_acc", "strong_acc"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    // Robustness never beats the PGD and CW upper bounds from shared restarts.
    let strong = report["strong_acc"].as_f64().unwrap();
    assert!(strong <= report["pgd_acc"].as_f64().unwrap() + 1e-12);
    assert!(strong <= report["cw_acc"].as_f64().unwrap() + 1e-12);
}

#[test]
fn eval_at_zero_epsilon_collapses_to_natural_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY);
    let out_dir = dir.path().join("run");
    let out = advlab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--serial",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    // Same dataset and checkpoint, but the eval suite budget drops to zero.
    let zero_cfg = dir.path().join("zero.json");
    let mut doc: serde_json::Value = serde_json::from_str(TINY).unwrap();
    doc["train"]["eval"]["epsilon"] = serde_json::json!(0.0);
    write(&zero_cfg, &serde_json::to_string(&doc).unwrap());
    let out = advlab(&[
        "eval",
        "--checkpoint",
        out_dir.join("final.ckpt").to_str().unwrap(),
        "--config",
        zero_cfg.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let nat = report["natural_acc"].as_f64().unwrap();
    for key in ["fgsm_acc", "pgd_acc", "cw_acc", "strong_acc"] {
        assert_eq!(report[key].as_f64().unwrap(), nat, "{key} differs at epsilon 0");
    }
}

#[test]
fn corrupt_checkpoint_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY);
    let ckpt = dir.path().join("bad.ckpt");
    std::fs::write(&ckpt, b"XXXXXXXXnot a checkpoint").unwrap();
    let out = advlab(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("checkpoint"), "{}", stderr_of(&out));
}

#[test]
fn architecture_mismatch_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY);
    let out_dir = dir.path().join("run");
    let out = advlab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--epochs",
        "0",
        "--serial",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    // Evaluate against a config that names a different architecture.
    let other = dir.path().join("other.json");
    let mut doc: serde_json::Value = serde_json::from_str(TINY).unwrap();
    doc["train"]["arch"] = serde_json::json!({
        "arch": "small_conv_net", "in_channels": 3, "height": 8, "width": 8, "classes": 3
    });
    write(&other, &serde_json::to_string(&doc).unwrap());
    let out = advlab(&[
        "eval",
        "--checkpoint",
        out_dir.join("final.ckpt").to_str().unwrap(),
        "--config",
        other.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("architecture"), "{}", stderr_of(&out));
}

#[test]
fn plot_is_deterministic_and_validates_columns() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("m.csv");
    write(
        &csv,
        "epoch,lr,train_loss,nat_acc,fgsm_acc,pgd_acc,cw_acc,strong_acc,wall_s\n\
         0,0.100000,1.00000,0.500000,0.400000,0.300000,0.300000,0.290000,1.00000\n\
         1,0.0500000,0.800000,0.700000,0.500000,0.450000,0.440000,0.430000,1.00000\n",
    );
    let svg1 = dir.path().join("a.svg");
    let svg2 = dir.path().join("b.svg");
    for svg in [&svg1, &svg2] {
        let out = advlab(&["plot", csv.to_str().unwrap(), svg.to_str().unwrap()]);
        assert!(out.status.success(), "{}", stderr_of(&out));
    }
    assert_eq!(
        std::fs::read(&svg1).unwrap(),
        std::fs::read(&svg2).unwrap(),
        "plot bytes differ between runs"
    );
    let text = std::fs::read_to_string(&svg1).unwrap();
    assert_eq!(text.matches("<polyline").count(), 5);

    // A renamed column is refused before anything is written.
    let bad = dir.path().join("bad.csv");
    write(
        &bad,
        "epoch,lr,train_loss,nat_acc,fgsm_acc,pgd_acc,cw_acc,robust_acc,wall_s\n\
         0,0.1,1.0,0.5,0.4,0.3,0.3,0.29,1.0\n",
    );
    let missing = dir.path().join("c.svg");
    let out = advlab(&["plot", bad.to_str().unwrap(), missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("strong_acc"), "{}", stderr_of(&out));
    assert!(!missing.exists());
}

#[test]
fn bvdecomp_writes_csv_and_svg() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    let mut doc: serde_json::Value = serde_json::from_str(TINY).unwrap();
    doc["train"]["epochs"] = serde_json::json!(1);
    doc["bv"] = serde_json::json!({"sweep_eps": [0.0, 0.03137254901960784]});
    write(&cfg, &serde_json::to_string(&doc).unwrap());
    let out_dir = dir.path().join("bv");
    let out = advlab(&[
        "bvdecomp",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let csv = std::fs::read_to_string(out_dir.join("bv.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "sweep_eps,nat_risk,nat_bias,nat_var,adv_risk,adv_bias,adv_var"
    );
    assert_eq!(lines.count(), 2);
    assert!(out_dir.join("bv.svg").exists());
    // Each data row decomposes: risk = bias + variance up to rounding.
    for line in csv.lines().skip(1) {
        let v: Vec<f64> = line.split(',').map(|s| s.parse().unwrap()).collect();
        assert!((v[1] - (v[2] + v[3])).abs() < 1e-4, "natural identity broken: {line}");
        assert!((v[4] - (v[5] + v[6])).abs() < 1e-4, "adversarial identity broken: {line}");
    }
}

#[test]
fn corrupt_eval_needs_its_config_section() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY);
    let out_dir = dir.path().join("run");
    let out = advlab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--epochs",
        "0",
        "--serial",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    let ckpt = out_dir.join("final.ckpt");
    // No corruption section: a config error.
    let out = advlab(&[
        "corrupt-eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("corruption"), "{}", stderr_of(&out));

    // With the section, a corruption.json lands in the output directory.
    let with = dir.path().join("with.json");
    let mut doc: serde_json::Value = serde_json::from_str(TINY).unwrap();
    doc["corruption"] = serde_json::json!({
        "kinds": [{"kind": "gaussian_noise", "sigma": 0.02}],
        "severities": [1, 2],
        "seed": 7
    });
    write(&with, &serde_json::to_string(&doc).unwrap());
    let out = advlab(&[
        "corrupt-eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--config",
        with.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(out.stdout.is_empty(), "corrupt-eval wrote to stdout");
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("corruption.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["cells"].as_array().unwrap().len(), 2);
}

#[test]
fn seed_flag_changes_the_run_and_echoes_into_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    write(&cfg, TINY);
    let run = |name: &str, seed: &str| {
        let out_dir = dir.path().join(name);
        let out = advlab(&[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--seed",
            seed,
            "--serial",
        ]);
        assert!(out.status.success(), "{}", stderr_of(&out));
        out_dir
    };
    let a = run("a", "1");
    let b = run("b", "2");
    assert_ne!(
        std::fs::read(a.join("final.ckpt")).unwrap(),
        std::fs::read(b.join("final.ckpt")).unwrap(),
        "different seeds trained identical models"
    );
    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("config.json")).unwrap()).unwrap();
    assert_eq!(echoed["train"]["seed"], 1);
}

#[test]
fn relative_dataset_paths_resolve_against_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    // One 3073-byte record is a valid single-image CIFAR-style file.
    let mut record = vec![2u8];
    record.extend(std::iter::repeat_n(128u8, 3072));
    std::fs::write(dir.path().join("part.bin"), &record).unwrap();
    let cfg = dir.path().join("cfg.json");
    write(
        &cfg,
        r#"{
          "dataset": {"source": "cifar_binary", "train": ["part.bin"], "test": ["part.bin"], "classes": 3},
          "train": {
            "arch": {"arch": "small_conv_net", "in_channels": 3, "height": 32, "width": 32, "classes": 3},
            "epochs": 0,
            "eval": {"max_samples": 1, "strong_restarts": 1}
          }
        }"#,
    );
    let out_dir = dir.path().join("run");
    // Without a data dir the path cannot resolve.
    let out = advlab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("ADVLAB_DATA_DIR"), "{}", stderr_of(&out));
    // With --data-dir it loads.
    let out = advlab(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--data-dir",
        dir.path().to_str().unwrap(),
        "--serial",
    ]);
    assert!(out.status.success(), "{}", stderr_of(&out));
}
