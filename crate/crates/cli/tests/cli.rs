use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mutdet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mutdet"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn mutdet")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = "\
epochs = 2
batch_size = 2
learning_rate = 1e-3
lr_decay_epoch = 2
warmup_iters = 2
image_size = 16
dim = 8
n_heads = 2
n_queries = 6
k_cls = 3
a_bins = 18
decoder_layers = 1
enhancement_layers = 2
";

#[test]
fn full_pipeline_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let labels = dir.path().join("labels.jsonl");
    let config = dir.path().join("run.cfg");
    let ckpt = dir.path().join("model.ckpt");
    let metrics = dir.path().join("metrics.jsonl");
    let curves = dir.path().join("curves.csv");
    let report = dir.path().join("report.json");
    fs::write(&config, TINY).unwrap();

    let text = ok(&mutdet(&[
        "gen-data", "--seed", "3", "--count", "6", "--objects", "3", "--size", "16", "--out", s(&data),
    ]));
    assert!(text.contains("wrote 6 images"));

    ok(&mutdet(&[
        "prepare-labels", "--data", s(&data), "--clusters", "3", "--dim", "8", "--out", s(&labels),
    ]));
    assert_eq!(fs::read_to_string(&labels).unwrap().lines().count(), 6);

    ok(&mutdet(&[
        "pretrain", "--data", s(&data), "--labels", s(&labels), "--config", s(&config),
        "--calibration", "decoder-distill", "--enhance", "on", "--out", s(&ckpt), "--metrics", s(&metrics),
    ]));
    assert!(ckpt.exists());

    let text = ok(&mutdet(&[
        "eval-alignment", "--ckpt", s(&ckpt), "--data", s(&data), "--labels", s(&labels), "--out", s(&report),
    ]));
    let mean_line = text.lines().last().unwrap();
    assert!(mean_line.starts_with("mean\t"));
    let mean: f64 = mean_line["mean\t".len()..].parse().unwrap();
    assert!((-1.0..=1.0).contains(&mean));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!(json.get("mean").is_some());

    ok(&mutdet(&["plot-losses", "--metrics", s(&metrics), "--out", s(&curves)]));
    let csv = fs::read_to_string(&curves).unwrap();
    assert!(csv.lines().next().unwrap().contains("total"));
    assert!(csv.lines().count() > 1);
}

#[test]
fn invalid_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.cfg");
    fs::write(&config, "dim = 7\nn_heads = 2\n").unwrap();
    let out = mutdet(&[
        "pretrain", "--data", s(dir.path()), "--labels", s(&dir.path().join("x")), "--config", s(&config),
        "--out", s(&dir.path().join("m")), "--metrics", s(&dir.path().join("k")),
    ]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(&config, "no_such_key = 1\n").unwrap();
    let out = mutdet(&[
        "pretrain", "--data", s(dir.path()), "--labels", s(&dir.path().join("x")), "--config", s(&config),
        "--out", s(&dir.path().join("m")), "--metrics", s(&dir.path().join("k")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_exit_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = mutdet(&[
        "eval-alignment", "--ckpt", s(&dir.path().join("none.ckpt")), "--data", s(dir.path()),
        "--labels", s(&dir.path().join("none.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(3));

    let out = mutdet(&["plot-losses", "--metrics", s(&dir.path().join("none")), "--out", s(&dir.path().join("c.csv"))]);
    assert_eq!(out.status.code(), Some(3));
}
