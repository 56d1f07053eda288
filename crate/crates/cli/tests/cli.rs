//! End-to-end tests of the `bricklab` binary: exit codes, reproducibility,
//! and a dataset -> plan -> render round trip.

use std::io::Write;
use std::process::{Command, Output};

fn bricklab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bricklab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

#[test]
fn enumerate_two_bricks_prints_24() {
    let out = bricklab(&["enumerate", "--bricks", "2"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().last(), Some("24"));
    assert!(text.contains("bricks,count"));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = bricklab(&["enumerate", "--bricks", "2", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_subcommand_is_usage_error() {
    let out = bricklab(&[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn multiple_jobs_rejected_as_domain_error() {
    let out = bricklab(&["--jobs", "2", "enumerate", "--bricks", "2"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn enumerate_memory_guard_trips() {
    let out = bricklab(&["enumerate", "--bricks", "4", "--max-mem-gb", "0.000001"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dataset_plan_render_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    let out = bricklab(&[
        "gen-assemblies",
        "--count", "3",
        "--min-bricks", "4",
        "--max-bricks", "6",
        "--out-dir", ds.to_str().unwrap(),
        "--seed", "7",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ds.join("index.jsonl").exists());
    assert!(ds.join("asm00000.view0.pgm").exists());
    assert!(ds.join("asm00000.vox").exists());

    let rec = dir.path().join("rec.jsonl");
    let out = bricklab(&[
        "plan",
        "--method", "greedy",
        "--target", ds.to_str().unwrap(),
        "--out", rec.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let prefix = dir.path().join("render");
    let out = bricklab(&[
        "render",
        "--record", rec.to_str().unwrap(),
        "--target", ds.to_str().unwrap(),
        "--out-prefix", prefix.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(prefix.with_extension("ldr").exists());
    assert!(prefix.with_extension("view0.pgm").exists());
}

#[test]
fn plan_rejects_unknown_method() {
    let dir = tempfile::tempdir().unwrap();
    let ds = dir.path().join("ds");
    assert!(bricklab(&[
        "gen-assemblies", "--count", "1", "--min-bricks", "3", "--max-bricks", "3",
        "--out-dir", ds.to_str().unwrap(),
    ])
    .status
    .success());
    let out = bricklab(&["plan", "--method", "dijkstra", "--target", ds.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn avn_training_is_seed_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("val.json");
    assert!(bricklab(&[
        "gen-validity",
        "--count", "12",
        "--min-bricks", "1",
        "--max-bricks", "4",
        "--out", data.to_str().unwrap(),
        "--seed", "9",
    ])
    .status
    .success());
    let train = |name: &str| {
        let ckpt = dir.path().join(name);
        let out = bricklab(&[
            "train-avn",
            "--data", data.to_str().unwrap(),
            "--out", ckpt.to_str().unwrap(),
            "--epochs", "1",
            "--batch-size", "6",
            "--hidden-dim", "8",
            "--seed", "11",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(ckpt).unwrap()
    };
    assert_eq!(train("a.ckpt"), train("b.ckpt"));

    let out = bricklab(&[
        "eval-avn",
        "--data", data.to_str().unwrap(),
        "--model", dir.path().join("a.ckpt").to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("head,roc_auc,precision,recall,threshold"), "{text}");
    assert!(text.lines().count() >= 3);
}

#[test]
fn oracle_bench_emits_csv() {
    let out = bricklab(&["oracle-bench", "--sizes", "3,6", "--repeats", "1"]);
    assert!(out.status.success());
    let text = stdout(&out);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,naive_ms,accelerated_ms");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("3,"));
}

/// Minimal IDX image/label pair: magic, dims, then raw bytes.
fn write_idx(dir: &std::path::Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let images = dir.join("images.idx");
    let labels = dir.join("labels.idx");
    let mut img = Vec::new();
    img.extend_from_slice(&0x0000_0803u32.to_be_bytes());
    img.extend_from_slice(&2u32.to_be_bytes());
    img.extend_from_slice(&28u32.to_be_bytes());
    img.extend_from_slice(&28u32.to_be_bytes());
    // Image 0: solid 8x8 block near the center; image 1: empty.
    let mut a = [0u8; 784];
    for r in 10..18 {
        for c in 10..18 {
            a[r * 28 + c] = 255;
        }
    }
    img.extend_from_slice(&a);
    img.extend_from_slice(&[0u8; 784]);
    std::fs::File::create(&images).unwrap().write_all(&img).unwrap();

    let mut lab = Vec::new();
    lab.extend_from_slice(&0x0000_0801u32.to_be_bytes());
    lab.extend_from_slice(&2u32.to_be_bytes());
    lab.extend_from_slice(&[7u8, 3u8]);
    std::fs::File::create(&labels).unwrap().write_all(&lab).unwrap();
    (images, labels)
}

#[test]
fn mnist_targets_converts_and_skips_empty() {
    let dir = tempfile::tempdir().unwrap();
    let (images, labels) = write_idx(dir.path());
    let ds = dir.path().join("mnist");
    let out = bricklab(&[
        "mnist-targets",
        "--images", images.to_str().unwrap(),
        "--labels", labels.to_str().unwrap(),
        "--count", "5",
        "--out-dir", ds.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // The empty image is skipped, so exactly one target exists.
    let index = std::fs::read_to_string(ds.join("index.jsonl")).unwrap();
    assert_eq!(index.lines().count(), 1);
    assert!(index.contains("mnist00000_d7"));

    // Digit filtering via labels.
    let ds2 = dir.path().join("mnist3");
    let out = bricklab(&[
        "mnist-targets",
        "--images", images.to_str().unwrap(),
        "--labels", labels.to_str().unwrap(),
        "--digit", "3",
        "--count", "5",
        "--out-dir", ds2.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    // The only digit-3 image is empty, so nothing is written.
    let index = std::fs::read_to_string(ds2.join("index.jsonl")).unwrap();
    assert_eq!(index.lines().count(), 0);
}

#[test]
fn config_file_with_unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[ppo]\nlerning_rate = 0.1\n").unwrap();
    let data = dir.path().join("val.json");
    assert!(bricklab(&[
        "gen-validity", "--count", "2", "--max-bricks", "3",
        "--out", data.to_str().unwrap(),
    ])
    .status
    .success());
    let out = bricklab(&[
        "train-avn",
        "--data", data.to_str().unwrap(),
        "--out", dir.path().join("m.ckpt").to_str().unwrap(),
        "--config", cfg.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lerning_rate"));
}
