use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rtsr_bench::image_io::save_png;
use rtsr_bench::report::{parse_report, ReportFormat};
use rtsr_core::Tensor;

fn rtsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rtsr")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn hr_dir(n: usize, side: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for i in 0..n {
        save_png(&Tensor::rand_uniform([1, 3, side, side], 0.0, 1.0, &mut rng), &dir.path().join(format!("h{i}.png"))).unwrap();
    }
    dir
}

#[test]
fn score_prints_the_formula() {
    let out = rtsr(&["score", "--delta", "0.205", "--runtime-ms", "0.468"]);
    assert!(out.status.success());
    let v: f64 = String::from_utf8(out.stdout).unwrap().trim().parse().unwrap();
    assert!((v - 33.70).abs() < 0.05);
    let neg = rtsr(&["score", "--delta", "-0.5", "--runtime-ms", "1", "--c", "1"]);
    let v: f64 = String::from_utf8(neg.stdout).unwrap().trim().parse().unwrap();
    assert!((v - 2.0 * 2f64.powf(-0.5)).abs() < 1e-4);
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(rtsr(&["score", "--delta", "0.1"]).status.code(), Some(1));
    assert_eq!(rtsr(&["score", "--delta", "0.1", "--runtime-ms", "0"]).status.code(), Some(1));
    assert_eq!(rtsr(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(rtsr(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_codec_exits_3() {
    let hr = hr_dir(1, 16);
    let out = tempfile::tempdir().unwrap();
    let o = rtsr(&["prepare", "--hr", s(hr.path()), "--out", s(out.path()), "--codec-cmd", "no-such-encoder {input} {output}"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no-such-encoder {input} {output}"));
}

#[test]
fn bad_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bogus = dir.path().join("w.rtsr");
    std::fs::write(&bogus, b"nope").unwrap();
    assert_eq!(rtsr(&["fuse", "--in", s(&bogus), "--out", s(&dir.path().join("o"))]).status.code(), Some(2));
}

#[test]
fn prepare_train_fuse_verify_eval() {
    let hr = hr_dir(2, 32);
    let work = tempfile::tempdir().unwrap();
    let data = work.path().join("data");
    let o = rtsr(&["prepare", "--hr", s(hr.path()), "--out", s(&data), "--no-codec"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("h0_4x.png").exists());

    let plan = work.path().join("plan.json");
    std::fs::write(
        &plan,
        r#"{"stages": [{"name": "warm", "patch": 16, "batch": 2, "iterations": 3,
            "loss": {"terms": [{"name": "l1", "weight": 1.0}]},
            "schedule": {"kind": "cosine", "lr_max": 0.001}}]}"#,
    )
    .unwrap();
    let train_w = work.path().join("train.rtsr");
    let log = work.path().join("log.jsonl");
    let o = rtsr(&[
        "train", "--spec", "reptcn", "--width", "4", "--plan", s(&plan), "--data", s(&data), "--out", s(&train_w), "--log", s(&log),
        "--anchor-bilinear",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 2);

    let deploy_w = work.path().join("deploy.rtsr");
    assert!(rtsr(&["fuse", "--in", s(&train_w), "--out", s(&deploy_w)]).status.success());
    let o = rtsr(&["verify", "--in", s(&train_w), "--trials", "5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));

    for (fmt, f) in [("csv", ReportFormat::Csv), ("json", ReportFormat::Json)] {
        let report = work.path().join(format!("r.{fmt}"));
        let o = rtsr(&[
            "eval", "--weights", s(&deploy_w), "--manifest", s(&data.join("manifest.json")), "--runs", "2", "--warmup", "1",
            "--report", s(&report), "--format", fmt,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let rows = parse_report(&std::fs::read_to_string(&report).unwrap(), f).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].model, "reptcn");
        assert!(rows[0].score.is_some());
    }
    let o = rtsr(&["eval", "--weights", s(&deploy_w), "--manifest", s(&data.join("manifest.json")), "--runs", "1", "--format", "table"]);
    assert!(String::from_utf8(o.stdout).unwrap().starts_with("model"));
}

#[test]
fn unknown_model_is_a_usage_error() {
    let p = PathBuf::from("/nonexistent");
    let o = rtsr(&["train", "--spec", "nope", "--plan", s(&p), "--data", s(&p), "--out", s(&p)]);
    assert_eq!(o.status.code(), Some(1));
}
