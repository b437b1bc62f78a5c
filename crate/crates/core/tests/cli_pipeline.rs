//! End-to-end runs of the command line through `mtsm::cli::run`.

use std::path::{Path, PathBuf};

use mtsm::cli::{run, RunManifest};

fn mtsm(args: &[&str]) -> i32 {
    run(std::iter::once("mtsm").chain(args.iter().copied()))
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Pipeline {
    det: PathBuf,
    cap: PathBuf,
    vocab: PathBuf,
    ckpt: PathBuf,
    out: PathBuf,
}

fn pipeline(dir: &Path, tag: &str) -> Pipeline {
    let f = |name: &str| dir.join(format!("{tag}-{name}"));
    let pl = Pipeline { det: f("det.jsonl"), cap: f("cap.jsonl"), vocab: f("vocab.txt"), ckpt: f("ck.json"), out: f("gen.jsonl") };
    let synth = ["synth", "--scenes", "12", "--seed", "4", "--first_caption_only", "--out", p(&pl.det), p(&pl.cap)];
    assert_eq!(mtsm(&synth), 0);
    assert_eq!(mtsm(&["build-vocab", "--captions", p(&pl.cap), "--min_count", "1", "--out", p(&pl.vocab)]), 0);
    let train = [
        "train", "--detections", p(&pl.det), "--captions", p(&pl.cap), "--vocab", p(&pl.vocab), "--epochs", "6",
        "--batch_size", "4", "--seed", "2", "--out", p(&pl.ckpt),
    ];
    assert_eq!(mtsm(&train), 0);
    let caption = ["caption", "--checkpoint", p(&pl.ckpt), "--detections", p(&pl.det), "--beam_width", "2", "--out", p(&pl.out)];
    assert_eq!(mtsm(&caption), 0);
    pl
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn full_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = pipeline(dir.path(), "a");
    let b = pipeline(dir.path(), "b");
    for (x, y) in [(&a.det, &b.det), (&a.cap, &b.cap), (&a.vocab, &b.vocab), (&a.ckpt, &b.ckpt), (&a.out, &b.out)] {
        assert_eq!(read(x), read(y), "{} differs from {}", x.display(), y.display());
        assert!(RunManifest::path_for(x).exists());
    }
    // One generated caption per image.
    let generated = String::from_utf8(read(&a.out)).unwrap();
    assert_eq!(generated.lines().count(), 12);

    // Scoring references against themselves is perfect.
    let report = dir.path().join("self.json");
    assert_eq!(mtsm(&["eval", "--cand", p(&a.cap), "--refs", p(&a.cap), "--out", p(&report)]), 0);
    let v: serde_json::Value = serde_json::from_slice(&read(&report)).unwrap();
    assert_eq!(v["candidates"]["bleu_4"].as_f64(), Some(100.0));

    // Checkpoint mode reports greedy and beam rows.
    let report = dir.path().join("model.json");
    let eval = ["eval", "--checkpoint", p(&a.ckpt), "--detections", p(&a.det), "--refs", p(&a.cap), "--out", p(&report)];
    assert_eq!(mtsm(&eval), 0);
    let v: serde_json::Value = serde_json::from_slice(&read(&report)).unwrap();
    for row in ["greedy", "beam-3"] {
        assert!((0.0..=100.0).contains(&v[row]["bleu_4"].as_f64().unwrap()), "{v}");
    }
}

#[test]
fn resume_matches_straight_training() {
    let dir = tempfile::tempdir().unwrap();
    let (det, cap) = (dir.path().join("d.jsonl"), dir.path().join("c.jsonl"));
    assert_eq!(mtsm(&["synth", "--scenes", "6", "--out", p(&det), p(&cap)]), 0);
    let common = ["train", "--detections", p(&det), "--captions", p(&cap), "--min_count", "1", "--dropout_rate", "0.1"];
    let straight = dir.path().join("straight.json");
    let half = dir.path().join("half.json");
    let resumed = dir.path().join("resumed.json");
    let with = |extra: &[&str]| mtsm(&[common.as_slice(), extra].concat());
    assert_eq!(with(&["--epochs", "4", "--out", p(&straight)]), 0);
    assert_eq!(with(&["--epochs", "2", "--out", p(&half)]), 0);
    assert_eq!(with(&["--epochs", "4", "--resume", p(&half), "--out", p(&resumed)]), 0);
    assert_eq!(read(&straight), read(&resumed));
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc.json");
    assert_eq!(mtsm(&["gradcheck", "--seed", "3", "--out", p(&out)]), 0);
    let v: serde_json::Value = serde_json::from_slice(&read(&out)).unwrap();
    assert!(v.is_object());
    // An impossible tolerance fails with a check error.
    assert_eq!(mtsm(&["gradcheck", "--seed", "3", "--tolerance", "0"]), 1);
}

#[test]
fn errors_map_to_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(mtsm(&["bogus"]), 2);
    assert_eq!(mtsm(&["eval", "--refs", "x"]), 2);
    assert_eq!(mtsm(&["train", "--detections", "a", "--captions", "b", "--clip_norm", "1", "--no_clip", "--out", "c"]), 2);
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(mtsm(&["build-vocab", "--captions", p(&missing), "--out", p(&dir.path().join("v.txt"))]), 1);
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "nope\n").unwrap();
    assert_eq!(mtsm(&["eval", "--cand", p(&bad), "--refs", p(&bad)]), 1);
    assert_eq!(mtsm(&["--help"]), 0);
}
