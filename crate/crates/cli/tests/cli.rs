use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn msan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msan"))
        .args(args)
        .env("MSAN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn missing_data_dir_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let out = msan(&["train", "--data", p(&d.path().join("nope")), "--out", p(&d.path().join("m.json"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
}

#[test]
fn bad_flag_exits_2() {
    assert_eq!(msan(&["caption", "--beam", "x"]).status.code(), Some(2));
}

#[test]
fn bad_thread_count_exits_2() {
    let out = Command::new(env!("CARGO_BIN_EXE_msan"))
        .args(["selfcheck"])
        .env("MSAN_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gen_synth_writes_the_split() {
    let d = tempfile::tempdir().unwrap();
    let out = msan(&["gen-synth", "--out", p(d.path()), "--videos", "10", "--modalities", "f"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let count = |f: &str| fs::read_to_string(d.path().join(f)).unwrap().lines().count();
    assert_eq!((count("train.jsonl"), count("val.jsonl"), count("test.jsonl")), (6, 2, 2));
    let first = fs::read_to_string(d.path().join("train.jsonl")).unwrap();
    let rec: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(rec["streams"].as_object().unwrap().keys().collect::<Vec<_>>(), ["frames"]);
}

#[test]
fn train_caption_evaluate_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let data = d.path().join("data");
    let ckpt = d.path().join("model.json");
    assert!(msan(&["gen-synth", "--out", p(&data), "--videos", "15"]).status.success());
    let out = msan(&[
        "train", "--data", p(&data), "--out", p(&ckpt), "--set", "max_epochs=2", "--modalities", "f,o", "--quiet",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = fs::read_to_string(d.path().join("model.json.log.jsonl")).unwrap();
    assert!(!log.trim().is_empty());

    let caps = msan(&["caption", "--ckpt", p(&ckpt), "--data", p(&data)]);
    assert!(caps.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8(caps.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 3);
    assert!(lines.iter().all(|l| l["logprob"].as_f64().unwrap() <= 0.0 && l["id"].is_string()));

    let report = d.path().join("report");
    let ev = msan(&["evaluate", "--ckpt", p(&ckpt), "--data", p(&data), "--out", p(&report)]);
    assert!(ev.status.success(), "{}", String::from_utf8_lossy(&ev.stderr));
    for f in ["report.json", "report.txt", "per_video.csv", "captions.jsonl", "manifest.json"] {
        assert!(report.join(f).exists(), "{f}");
    }
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(report.join("report.json")).unwrap()).unwrap();
    assert!(json["cider_d"].is_number());
}

#[test]
fn corrupt_checkpoint_exits_2() {
    let d = tempfile::tempdir().unwrap();
    let ckpt = d.path().join("bad.json");
    fs::write(&ckpt, "{}").unwrap();
    assert!(msan(&["gen-synth", "--out", p(d.path()), "--videos", "5"]).status.success());
    assert_eq!(msan(&["caption", "--ckpt", p(&ckpt), "--data", p(d.path())]).status.code(), Some(2));
}

#[test]
fn selfcheck_passes_and_catches_the_injected_fault() {
    let ok = msan(&["selfcheck"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let bad = msan(&["selfcheck", "--inject-fault", "flip-hidden-factor"]);
    assert_eq!(bad.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.contains("[FAIL] factorization-equivalence"), "{stdout}");
    assert!(String::from_utf8_lossy(&bad.stderr).contains("factorization-equivalence"));
}
