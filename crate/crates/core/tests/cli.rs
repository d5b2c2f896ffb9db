mod common;

use std::path::Path;
use std::process::{Command, Output};

fn fast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fast")).args(args).env_remove("FAST_CKPT_DIR").output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn input_png(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("in.png");
    common::samples(1, 3)[0].i_a.resize(48, 160).save_rgb(&p).unwrap();
    p
}

#[test]
fn edit_writes_an_image_of_the_input_size() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    common::write_random_checkpoint(&ckpt);
    let input = input_png(dir.path());
    let out = dir.path().join("out.png");
    let debug = dir.path().join("debug");
    let o = fast(&["edit", "--image", s(&input), "--text", "WORD", "--ckpt", s(&ckpt), "--out", s(&out), "--debug-dir", s(&debug)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let img = image::open(&out).unwrap();
    assert_eq!((img.height(), img.width()), (48, 160));
    let mut names: Vec<String> = std::fs::read_dir(&debug).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["m_a.png", "m_b.png", "m_f.png"]);
}

#[test]
fn checkpoint_falls_back_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("ckpt");
    common::write_random_checkpoint(&ckpt);
    let input = input_png(dir.path());
    let out = dir.path().join("out.png");
    let o = Command::new(env!("CARGO_BIN_EXE_fast"))
        .args(["edit", "--image", s(&input), "--text", "A", "--out", s(&out), "--raw-mask"])
        .env("FAST_CKPT_DIR", &ckpt)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let input = input_png(dir.path());
    let out = dir.path().join("out.png");
    let o = fast(&["edit", "--image", s(&input), "--text", "WORD", "--ckpt", "/nonexistent/ckpt", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("checkpoint"));
    assert!(!out.exists());

    let ckpt = dir.path().join("ckpt");
    common::write_random_checkpoint(&ckpt);
    let o = fast(&["edit", "--image", s(&input), "--text", "", "--ckpt", s(&ckpt), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn synth_then_eval_writes_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let o = fast(&["synth", "--count", "3", "--seed", "4", "--out", s(&data), "--procedural-backgrounds", "4"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report = dir.path().join("report.json");
    let o = fast(&["eval", "--dataset", s(&data), "--generated", s(&data.join("i_t")), "--out", s(&report)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(v["n_samples"], 3);
    assert_eq!(v["psnr_db"], 100.0);
    assert_eq!(v["msssim_scales"], 3);
    assert!(v["lpips"].is_null());
}

#[test]
fn train_rejects_a_stage_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"stage": "IMAGE"}"#).unwrap();
    let o = fast(&["train", "--stage", "mask", "--config", s(&cfg), "--data", s(dir.path()), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
}
