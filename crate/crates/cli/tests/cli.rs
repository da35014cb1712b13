//! Drives the binary through a full tiny workflow.

use std::{
    path::Path,
    process::{Command, Output},
};

fn camalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camalign"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = camalign(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fails(args: &[&str]) -> String {
    let out = camalign(args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn synth(name: &str, seed: u64, splits: [usize; 3], objectives: &str, strength: f64) -> String {
    format!(
        r#"{{"name": "{name}", "seed": {seed}, "image_size": [32, 32],
        "splits": {{"train": {}, "validation": {}, "test": {}}},
        "objectives": {objectives},
        "shortcut": {{"strength": {strength}, "size": 3, "intensity": 0.8}},
        "style": {{"background": 0.06, "body": 0.22, "lung": 0.48, "contrast": 1.0, "brightness": 0.0,
                  "noise_std": 0.015, "texture_amplitude": 0.05, "texture_sigma": 1.5, "geometry_jitter": 0.03}}}}"#,
        splits[0], splits[1], splits[2]
    )
}

const ONE: &str = r#"[{"name": "active", "positive_rate": 0.3,
    "lesion": {"kind": "blob", "count": [1, 1], "sigma": [1.2, 2.0], "amplitude": [0.2, 0.3]}}]"#;
const TWO: &str = r#"[{"name": "a", "positive_rate": 0.3,
    "lesion": {"kind": "blob", "count": [1, 1], "sigma": [1.2, 2.0], "amplitude": [0.2, 0.3]}},
    {"name": "b", "positive_rate": 0.5,
    "lesion": {"kind": "ring", "count": [1, 1], "sigma": [1.0, 1.4], "amplitude": [0.2, 0.3]}}]"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let p = |s: &str| d.join(s).to_str().unwrap().to_string();

    let proxy_cfg = write(d, "proxy.json", &synth("proxy", 1, [24, 8, 4], TWO, 0.0));
    let target_cfg = write(d, "target.json", &synth("target", 2, [24, 10, 10], ONE, 0.9));
    let ext_cfg = write(d, "external.json", &synth("external", 3, [0, 0, 10], ONE, 0.0));
    assert!(ok(&["datagen", "--config", &proxy_cfg, "--out", &p("proxy")]).contains("36 samples (2 objectives)"));
    ok(&["datagen", "--config", &target_cfg, "--out", &p("target")]);
    ok(&["datagen", "--config", &ext_cfg, "--out", &p("external")]);
    assert!(d.join("target/manifest.json").exists());

    let train_cfg = write(
        d,
        "train.json",
        r#"{"epochs": 2, "batch_size": 8, "learning_rate": 0.001, "seed": 4,
            "blocks": [{"name": "conv1", "out_channels": 4, "stride": 1, "pool": true},
                       {"name": "last_conv", "out_channels": 4, "stride": 1, "pool": true}]}"#,
    );
    let out = ok(&["pretrain", "--config", &train_cfg, "--data", &p("proxy"), "--balanced", "--out", &p("pre")]);
    assert!(out.contains("selected epoch"), "{out}");
    assert!(d.join("pre/trainlog.json").exists());

    ok(&[
        "finetune", "--config", &train_cfg, "--data", &p("target"), "--from", &p("pre/checkpoint.bin"),
        "--balanced", "--out", &p("runs/M_BB"),
    ]);
    ok(&["finetune", "--config", &train_cfg, "--data", &p("target"), "--from", "none", "--unbalanced", "--out", &p("runs/M_U")]);

    for m in ["M_BB", "M_U"] {
        let table = ok(&[
            "evaluate", "--model", &p(&format!("runs/{m}/checkpoint.bin")), "--target", &p("target"),
            "--external", &p("external"), "--out", &p(&format!("runs/{m}/report.json")),
        ]);
        assert!(table.contains(m), "{table}");
    }
    let table = ok(&["report", "--run", &p("runs")]);
    let rows: Vec<&str> = table.lines().skip(2).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("M_U") && rows[1].starts_with("M_BB"), "{table}");

    let out = ok(&[
        "saliency", "--model", &p("runs/M_U/checkpoint.bin"), "--data", &p("target"), "--method", "scorecam",
        "--out", &p("maps"), "--overlay",
    ]);
    assert!(out.contains("wrote 10 scorecam maps"), "{out}");
    let files = std::fs::read_dir(d.join("maps")).unwrap().count();
    assert!(files >= 20, "{files} files");
}

#[test]
fn argument_errors_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let p = |s: &str| d.join(s).to_str().unwrap().to_string();
    let target_cfg = write(d, "target.json", &synth("target", 2, [12, 6, 6], ONE, 0.9));
    ok(&["datagen", "--config", &target_cfg, "--out", &p("target")]);

    let err = fails(&["finetune", "--data", &p("target"), "--unbalanced", "--seed", "1", "--out", &p("x")]);
    assert!(err.contains("--from"), "{err}");
    let err = fails(&["pretrain", "--data", &p("target"), "--balanced", "--unbalanced", "--seed", "1", "--out", &p("x")]);
    assert!(err.contains("cannot be used with"), "{err}");
    let err = fails(&["pretrain", "--data", &p("target"), "--unbalanced", "--out", &p("x")]);
    assert!(err.contains("--seed"), "{err}");
    let err = fails(&["datagen", "--preset", "nope", "--out", &p("y")]);
    assert!(err.contains("unknown preset"), "{err}");
    let err = fails(&["experiment", "--models", "M_XX"]);
    assert!(err.contains("M_XX"), "{err}");
    let err = fails(&["report", "--run", &p("target")]);
    assert!(err.contains("no report.json"), "{err}");
}
