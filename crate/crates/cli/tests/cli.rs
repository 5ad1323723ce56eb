use std::path::Path;
use std::process::{Command, Output};

fn menet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_menet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout_ok(args: &[&str], cwd: &Path) -> String {
    let out = menet(args, cwd);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn line<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).map(str::trim))
        .unwrap_or_else(|| panic!("no `{key}` in\n{text}"))
}

const TINY: &[&str] = &[
    "--model",
    "24-MENet-4x1",
    "--groups",
    "2",
    "--input-size",
    "8",
    "--stem-channels",
    "8",
    "--no-stem-pool",
    "--repeats",
    "1,1,1",
    "--classes",
    "2",
];

#[test]
fn shuffle_demo_nine_by_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout_ok(&["shuffle-demo", "--channels", "9", "--groups", "3"], dir.path());
    assert_eq!(out, "0 3 6 1 4 7 2 5 8\n");
}

#[test]
fn analyze_nine_by_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout_ok(&["analyze", "--channels", "9", "--groups", "3"], dir.path());
    assert_eq!(line(&out, "n_total"), "27");
    assert_eq!(line(&out, "n_actual"), "9");
    assert_eq!(line(&out, "lost"), "2/3 (66.7%)");
}

#[test]
fn flops_of_352_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout_ok(&["flops", "--model", "352-MENet-12x1", "--groups", "8"], dir.path());
    let flops: f64 = line(&out, "flops").split(' ').next().unwrap().parse().unwrap();
    assert!((flops / 144e6 - 1.0).abs() <= 0.05, "{flops}");
}

#[test]
fn both_multiplication_signs_name_the_same_model() {
    let dir = tempfile::tempdir().unwrap();
    let a = stdout_ok(&["flops", "--model", "228-MENet-12x1", "--groups", "3"], dir.path());
    let b = stdout_ok(&["flops", "--model", "228-MENet-12×1", "--groups", "3"], dir.path());
    assert_eq!(a, b);
}

#[test]
fn flops_json_is_parseable() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout_ok(
        &["flops", "--json", "--model", "256-MENet-12x1", "--groups", "4"],
        dir.path(),
    );
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert!(v["total_macs"].as_u64().unwrap() > 100_000_000);
}

#[test]
fn build_prints_a_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout_ok(&["build", "--model", "256-MENet-12x1", "--groups", "4"], dir.path());
    assert!(out.starts_with("model 256-MENet-12×1 groups 4\n"));
    assert!(out.contains("classifier.fc"));
}

#[test]
fn gradcheck_unit_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = stdout_ok(&["gradcheck", "--unit", "depthwise", "--seed", "3"], dir.path());
    assert_eq!(line(&out, "status"), "pass");
}

#[test]
fn synth_train_eval_round_trip_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    stdout_ok(&["make-synth", "--out", "data/train.json", "--seed", "5"], p);
    let mut metrics = Vec::new();
    let mut blobs = Vec::new();
    for run in ["a", "b"] {
        let w = format!("{run}/weights.json");
        let m = format!("{run}/metrics.txt");
        let mut args = vec![
            "train",
            "--data",
            "data/train.json",
            "--epochs",
            "12",
            "--weights",
            &w,
            "--metrics",
            &m,
        ];
        args.extend_from_slice(TINY);
        let printed = stdout_ok(&args, p);
        let written = std::fs::read_to_string(p.join(&m)).unwrap();
        assert_eq!(printed, written);
        assert_eq!(written.lines().count(), 12);
        metrics.push(written);
        blobs.push(std::fs::read(p.join(format!("{run}/weights.bin"))).unwrap());
    }
    assert_eq!(metrics[0], metrics[1]);
    assert_eq!(blobs[0], blobs[1]);

    let acc: f64 = metrics[0]
        .lines()
        .last()
        .unwrap()
        .split(' ')
        .nth(3)
        .unwrap()
        .parse()
        .unwrap();
    let out = stdout_ok(&["eval", "--weights", "a/weights.json", "--data", "data/train.json"], p);
    let reported: f64 = line(&out, "accuracy").split(' ').next().unwrap().parse().unwrap();
    assert_eq!(reported, acc);
}

#[test]
fn run_config_file_drives_training() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    stdout_ok(&["make-synth", "--out", "synth.json", "--count", "16"], p);
    let cfg = r#"{
        "model": {"residual_width": 24, "fusion_width": 4, "groups": 2, "stage_repeats": [1, 1, 1],
                  "num_classes": 2, "input_size": 8, "stem_channels": 8, "stem_pool": false},
        "train": {"epochs": 2, "batch_size": 8},
        "data": {"train": "synth.json"},
        "output": {"metrics": "out/metrics.txt"}
    }"#;
    std::fs::write(p.join("run.json"), cfg).unwrap();
    let sub = p.join("elsewhere");
    std::fs::create_dir(&sub).unwrap();
    stdout_ok(&["train", "--config", "../run.json"], &sub);
    let m = std::fs::read_to_string(p.join("out/metrics.txt")).unwrap();
    assert_eq!(m.lines().count(), 2);
}

fn assert_json_error(out: &Output, kind: &str) {
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    let v: serde_json::Value = serde_json::from_str(&err).unwrap();
    assert_eq!(v["error"], kind, "{err}");
    assert!(v["message"].as_str().is_some_and(|m| !m.is_empty()));
}

#[test]
fn bad_inputs_exit_nonzero_with_one_json_line() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    std::fs::write(p.join("bad.json"), r#"{"model": {"groups": 3, "widht": 5}}"#).unwrap();
    assert_json_error(&menet(&["build", "--config", "bad.json"], p), "config");
    assert_json_error(&menet(&["build", "--config", "missing.json"], p), "io");
    assert_json_error(
        &menet(&["build", "--model", "230-MENet-12x1", "--groups", "3"], p),
        "model",
    );
    assert_json_error(
        &menet(&["shuffle-demo", "--channels", "9", "--groups", "2"], p),
        "model",
    );
    assert_json_error(&menet(&["analyze"], p), "usage");
}

#[test]
fn tampered_weights_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    stdout_ok(&["make-synth", "--out", "d.json", "--count", "8"], p);
    let mut args = vec![
        "train",
        "--data",
        "d.json",
        "--epochs",
        "1",
        "--batch-size",
        "4",
        "--weights",
        "w.json",
    ];
    args.extend_from_slice(TINY);
    stdout_ok(&args, p);
    let mut blob = std::fs::read(p.join("w.bin")).unwrap();
    blob[100] ^= 1;
    std::fs::write(p.join("w.bin"), blob).unwrap();
    assert_json_error(
        &menet(&["eval", "--weights", "w.json", "--data", "d.json"], p),
        "archive",
    );
}
