//! End-to-end contract tests of the `hcmen` binary: flags, exit codes,
//! determinism, and output formats.

use std::path::Path;
use std::process::{Command, Output};

fn hcmen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcmen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn hcmen_env(args: &[&str], key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hcmen"))
        .args(args)
        .env(key, value)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_tiny_config(path: &Path) {
    let json = r#"{
        "seq_len": 8, "dim": 16, "state_dim": 4, "inner_dim": 32,
        "fusion_blocks": 1, "batch_size": 8, "epochs": 2, "seed": 42
    }"#;
    std::fs::write(path, json).unwrap();
}

fn dir_digest(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut entries = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                entries.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    entries.sort();
    entries
}

#[test]
fn synth_split_counts_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let out = hcmen(&["synth", "--out", a.to_str().unwrap(), "--n", "100", "--seed", "5"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("train=70 valid=10 test=20"));

    let out = hcmen(&["synth", "--out", b.to_str().unwrap(), "--n", "100", "--seed", "5"]);
    assert_eq!(code(&out), 0);
    assert_eq!(dir_digest(&a), dir_digest(&b), "same seed must give byte-identical files");
}

#[test]
fn synth_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = hcmen(&["synth", "--out", dir.path().join("d").to_str().unwrap(), "--n", "0", "--seed", "1"]);
    assert_eq!(code(&out), 1);

    // unknown flag rejected by the parser
    let out = hcmen(&["synth", "--out", "/tmp/x", "--n", "5", "--seed", "1", "--bogus"]);
    assert_eq!(code(&out), 1);
}

#[test]
fn train_eval_cycle_with_toggles() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = hcmen(&["synth", "--out", data.to_str().unwrap(), "--n", "30", "--seed", "2"]);
    assert_eq!(code(&out), 0);
    let config = dir.path().join("config.json");
    write_tiny_config(&config);

    // smoke train, exit 0, prints the resolved config
    let ckpt = dir.path().join("full.ckpt");
    let out = hcmen(&[
        "train", "--data", data.to_str().unwrap(), "--config", config.to_str().unwrap(),
        "--out", ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("\"seq_len\": 8"));
    assert!(ckpt.exists());
    let metrics = dir.path().join("full.ckpt.metrics.csv");
    assert!(metrics.exists());

    // --disable-cmea logs loss_c = 0 every epoch
    let ckpt2 = dir.path().join("nocmea.ckpt");
    let out = hcmen(&[
        "train", "--data", data.to_str().unwrap(), "--config", config.to_str().unwrap(),
        "--out", ckpt2.to_str().unwrap(), "--disable-cmea",
    ]);
    assert_eq!(code(&out), 0);
    let csv = std::fs::read_to_string(dir.path().join("nocmea.ckpt.metrics.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let loss_c: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(loss_c, 0.0, "line: {line}");
    }

    // repeated eval is identical; a rate list produces one report row per rate
    let run_eval = || {
        hcmen(&[
            "eval", "--data", data.to_str().unwrap(), "--ckpt", ckpt.to_str().unwrap(),
            "--missing-rate", "0.0,0.3,0.5,0.7", "--seed", "11",
            "--report", dir.path().join("report.csv").to_str().unwrap(),
        ])
    };
    let e1 = run_eval();
    let e2 = run_eval();
    assert_eq!(code(&e1), 0, "{}", String::from_utf8_lossy(&e1.stderr));
    assert_eq!(stdout(&e1), stdout(&e2));
    let report = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 5, "header + 4 rate rows:\n{report}");
    assert!(report.starts_with("missing_rate,"));
}

#[test]
fn train_rejects_bad_config_fields_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    hcmen(&["synth", "--out", data.to_str().unwrap(), "--n", "10", "--seed", "3"]);
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"seq_len": 8, "made_up_field": 3}"#).unwrap();
    let out = hcmen(&[
        "train", "--data", data.to_str().unwrap(), "--config", config.to_str().unwrap(),
        "--out", dir.path().join("x.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("made_up_field"));

    let config2 = dir.path().join("bad2.json");
    std::fs::write(&config2, r#"{"temperature": 0.0}"#).unwrap();
    let out = hcmen(&[
        "train", "--data", data.to_str().unwrap(), "--config", config2.to_str().unwrap(),
        "--out", dir.path().join("x.ckpt").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("temperature"));
}

#[test]
fn ablation_trio_produces_smaller_distinct_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    hcmen(&["synth", "--out", data.to_str().unwrap(), "--n", "20", "--seed", "4"]);
    let config = dir.path().join("config.json");
    write_tiny_config(&config);

    let mut sizes = Vec::new();
    for (tag, flag) in [
        ("full", None),
        ("nocnn", Some("--disable-cnn")),
        ("nomamba", Some("--disable-mamba")),
        ("nocmea", Some("--disable-cmea")),
    ] {
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let mut args = vec![
            "train", "--data", data.to_str().unwrap(), "--config", config.to_str().unwrap(),
            "--out",
        ];
        let ckpt_str = ckpt.to_str().unwrap().to_owned();
        args.push(&ckpt_str);
        args.push("--epochs");
        args.push("1");
        if let Some(f) = flag {
            args.push(f);
        }
        let out = hcmen(&args);
        assert_eq!(code(&out), 0, "{tag}: {}", String::from_utf8_lossy(&out.stderr));
        let (_, store) = hcmen::checkpoint::load(&ckpt).unwrap();
        sizes.push((tag, store.total_elements()));
    }
    let full = sizes[0].1;
    for (tag, count) in &sizes[1..] {
        assert!(*count < full, "{tag} must have strictly fewer parameters ({count} vs {full})");
    }
    // distinct architectures → distinct parameter counts across the trio
    assert_ne!(sizes[1].1, sizes[2].1);
}

#[test]
fn eval_corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    hcmen(&["synth", "--out", data.to_str().unwrap(), "--n", "10", "--seed", "6"]);
    let fake = dir.path().join("fake.ckpt");
    std::fs::write(&fake, b"not a checkpoint at all").unwrap();
    let out = hcmen(&[
        "eval", "--data", data.to_str().unwrap(), "--ckpt", fake.to_str().unwrap(),
        "--missing-rate", "0.0", "--seed", "1",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn gradcheck_passes_and_perturbation_exits_2() {
    let out = hcmen(&["gradcheck", "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    for component in ["tensor.matmul", "ssm.selective_scan", "cmea.infonce", "model.total_loss"] {
        assert!(text.contains(component), "missing {component} in:\n{text}");
    }

    let out = hcmen_env(
        &["gradcheck", "--seed", "3"],
        "HCMEN_GRADCHECK_PERTURB",
        "ssm.selective_scan",
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("ssm.selective_scan"));
}

#[test]
fn bench_csv_shape_and_usage_errors() {
    let out = hcmen(&["bench", "--lengths", "64,128,256", "--trials", "2"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let rows: Vec<&str> = text.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).collect();
    assert_eq!(rows.len(), 3, "one CSV row per length:\n{text}");
    assert!(text.contains("# loglog_slope:"));

    let out = hcmen(&["bench", "--lengths", "256,128", "--trials", "2"]);
    assert_eq!(code(&out), 1);
}
