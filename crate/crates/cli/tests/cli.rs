use std::path::Path;
use std::process::{Command, Output};

fn vdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vdm"))
        .args(args)
        .env_remove("VDM_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = vdm(args);
    assert!(out.status.success(), "vdm {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_config(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    std::fs::write(
        &p,
        r#"{
  "corpus": { "synthetic": { "counts": { "train": 6, "validation": 4, "test": 4 }, "duration_s": 1.0, "seed": 5 } },
  "dataset": { "duration_s": 0.5, "counts": { "train": 4, "validation": 2, "test": 3 } },
  "network": { "hidden_freq": 4, "hidden_time": 4 },
  "train": { "epochs": 1, "batch_size": 2 },
  "eval": { "trials": 1, "duration_s": 0.5, "heatmap_step_deg": 90, "pattern_step_deg": 30 }
}"#,
    )
    .unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn pattern_eval_prints_six_decimals() {
    assert_eq!(ok(&["pattern", "eval", "--preset", "cardioid", "--theta", "180"]).trim(), "0.000000");
    assert_eq!(ok(&["pattern", "eval", "--preset", "cardioid", "--theta", "0"]).trim(), "1.000000");
    assert_eq!(
        ok(&["pattern", "eval", "--preset", "third-order-dma", "--theta", "-90"]).trim(),
        "0.000000"
    );
    assert_eq!(
        ok(&["pattern", "eval", "--preset", "cardioid", "--theta", "270", "--steer", "90"]).trim(),
        "0.000000"
    );
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    assert_eq!(vdm(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(vdm(&["pattern", "eval", "--preset", "hypercardioid", "--theta", "0"]).status.code(), Some(2));
}

#[test]
fn missing_seed_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = vdm(&["corpus", "synth", "--out", dir.path().join("c").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn bad_config_fails_with_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"dataset": {"n_max": 2, "colour": "blue"}}"#).unwrap();
    let out = vdm(&["dataset", "generate", "--config", cfg.to_str().unwrap(), "--seed", "1", "--out", dir.path().join("d").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn end_to_end_tiny_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    ok(&["dataset", "generate", "--config", &cfg, "--seed", "2", "--out", &p("data")]);
    assert!(dir.path().join("data/manifest.json").is_file());
    assert!(dir.path().join("data/test/00002/mics.wav").is_file());

    ok(&["design-ls", "--config", &cfg, "--seed", "2", "--out", &p("ls")]);
    let weights = std::fs::read_dir(dir.path().join("ls"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "vdmw"))
        .expect("weights file");

    ok(&["baseline", "parametric", "--config", &cfg, "--seed", "2", "--data", &p("data"), "--out", &p("par")]);
    ok(&["train", "--config", &cfg, "--seed", "2", "--data", &p("data"), "--out", &p("train")]);
    let history = std::fs::read_to_string(dir.path().join("train/history.csv")).unwrap();
    assert_eq!(history.lines().next(), Some("epoch,train_loss,val_loss"));
    assert_eq!(history.lines().count(), 2);
    let ckpt = p("train/best.vdmn");

    for (name, extra) in [
        ("sdr-ls", vec!["--system", "ls", "--weights", weights.to_str().unwrap()]),
        ("sdr-nn", vec!["--system", "neural", "--checkpoint", &ckpt]),
    ] {
        let data = p("data");
        let mut args = vec!["eval", "sdr", "--config", &cfg, "--seed", "2", "--data", &data];
        let out = p(name);
        args.extend(["--out", &out]);
        args.extend(extra);
        ok(&args);
        let table = std::fs::read_to_string(dir.path().join(name).join("table.csv")).unwrap();
        assert!(table.lines().any(|l| l.contains("av")), "{table}");
    }

    ok(&["eval", "pattern", "--config", &cfg, "--seed", "2", "--system", "parametric", "--out", &p("pat")]);
    let polar = std::fs::read_to_string(dir.path().join("pat/polar.csv")).unwrap();
    assert_eq!(polar.lines().count(), 1 + 12);
    ok(&["eval", "heatmap", "--config", &cfg, "--seed", "2", "--system", "reference-mic", "--out", &p("heat")]);
    assert!(dir.path().join("heat/heatmap.csv").is_file());

    ok(&["infer", "--config", &cfg, "--seed", "2", "--checkpoint", &ckpt, "--input", &p("data/test/00000/mics.wav"), "--out", &p("inf")]);
    assert!(std::fs::read_dir(dir.path().join("inf")).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "wav")));
    for d in ["data", "ls", "par", "train", "pat", "heat", "inf"] {
        assert!(dir.path().join(d).join("manifest.json").is_file() || d == "data", "{d} manifest");
    }
}

#[test]
fn neural_without_checkpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = vdm(&["eval", "pattern", "--seed", "1", "--system", "neural", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}
