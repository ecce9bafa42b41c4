use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boundary-spot"))
        .args(args)
        .output()
        .expect("spawn boundary-spot")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let (ds, run_dir) = (tmp.path().join("ds"), tmp.path().join("run"));
    let out = ok(&["gen-data", "--out", s(&ds), "--count", "8", "--seed", "3"]);
    assert!(out.contains("wrote 8 images"), "{out}");
    assert!(ds.join("images/0007.png").is_file());

    ok(&[
        "train", "--data", s(&ds), "--out", s(&run_dir), "--seed", "1", "--epochs", "2", "--rec-channels", "8",
        "--hidden", "16", "--attention", "16",
    ]);
    let metrics = std::fs::read_to_string(run_dir.join("metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = metrics.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[1]["epoch"], 2);
    assert!(lines[0]["l_bp"].as_f64().unwrap().is_finite());

    let ckpt = run_dir.join("model.ckpt");
    let spots = tmp.path().join("spots.jsonl");
    ok(&["spot", "--ckpt", s(&ckpt), "--data", s(&ds), "--out", s(&spots)]);
    let first = std::fs::read(&spots).unwrap();
    ok(&["spot", "--ckpt", s(&ckpt), "--data", s(&ds), "--out", s(&spots)]);
    assert_eq!(first, std::fs::read(&spots).unwrap());

    let report = tmp.path().join("r.jsonl");
    let out = ok(&["eval", "--spots", s(&spots), "--data", s(&ds), "--mode", "full", "--report", s(&report)]);
    assert!(out.contains("detection") && out.contains("e2e"), "{out}");
    let recs: Vec<serde_json::Value> = std::fs::read_to_string(&report)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(recs.len(), 2);
    assert!(recs[1]["true_positives"].as_u64() <= recs[0]["true_positives"].as_u64());

    let gt = ds.join("annotations.jsonl");
    let png = tmp.path().join("o.png");
    let img = ds.join("images/0002.png");
    ok(&["overlay", "--image", s(&img), "--spots", s(&gt), "--out", s(&png)]);
    ok(&["overlay", "--image", s(&img), "--spots", s(&spots), "--out", s(&png)]);
    let drawn = image::open(&png).unwrap().to_luma8();
    let orig = image::open(&img).unwrap().to_luma8();
    assert_eq!(drawn.dimensions(), orig.dimensions());
    assert_ne!(drawn, orig);
}

#[test]
fn bad_inputs_fail_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nope");
    let out = run(&["spot", "--ckpt", s(&missing), "--data", s(&missing), "--out", s(&missing)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("does not exist"));
    let out = run(&["gen-data", "--out", s(&missing), "--seed", "1", "--image-size", "8x8"]);
    assert!(!out.status.success());
    assert!(!run(&["gen-data", "--out", s(&missing)]).status.success(), "seed is required");
}

#[test]
fn gradcheck_exit_code() {
    let out = ok(&["gradcheck"]);
    assert!(out.contains("gradcheck passed"), "{out}");
}
