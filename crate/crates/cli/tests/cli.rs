use std::path::Path;
use std::process::{Command, Output};

fn sparsemo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparsemo")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> serde_json::Value {
    let out = sparsemo(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.trim()).unwrap_or(serde_json::Value::Null)
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let (data, ckpt, rec, stream, srec) =
        (p(dir.path(), "d.bin"), p(dir.path(), "m.ckpt"), p(dir.path(), "r.ndjson"), p(dir.path(), "s.ndjson"), p(dir.path(), "sr.ndjson"));

    let d = ok(&["datagen", "--kinds", "gait,stationary", "--trials", "2", "--seconds", "4", "--seed", "1", "--out", &data]);
    assert_eq!(d["trials"], 2);

    let t = ok(&["train", "--data", &data, "--size", "1/16/32", "--steps", "3", "--batch", "2", "--diffusion-steps", "50", "--out", &ckpt]);
    assert_eq!(t["steps"], 3);

    ok(&["reconstruct", "--ckpt", &ckpt, "--config", "six", "--spread", "3", "--in", &data, "--trial", "1", "--out", &rec]);
    let lines = std::fs::read_to_string(&rec).unwrap().lines().count();
    assert!(lines > 60, "{lines} frames");

    let e = ok(&["evaluate", "--gt", &data, "--trial", "1", "--rec", &rec]);
    assert!(e["aggregate"]["mean"]["ga"].as_f64().unwrap().is_finite());

    let s = ok(&["simulate", "--kind", "gait", "--seconds", "2", "--insoles", "--out", &stream]);
    let height = s["height"].as_f64().unwrap().to_string();
    ok(&["reconstruct", "--ckpt", &ckpt, "--config", "shanks,insoles", "--spread", "2", "--in", &stream, "--height", &height, "--out", &srec]);
    let first: serde_json::Value = serde_json::from_str(std::fs::read_to_string(&srec).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["t_ms"], 100.0);
    assert_eq!(first["quats"].as_array().unwrap().len(), 24);

    let sw = ok(&["sweep", "--ckpt", &ckpt, "--data", &data, "--configs", "six;none", "--objectives", "ga", "--spread", "2", "--trials", "1"]);
    assert_eq!(sw["entries"].as_array().unwrap().len(), 2);

    let b = ok(&["bench", "--ckpt", &ckpt, "--spread", "2", "--frames", "10"]);
    assert_eq!(b["frames"], 10);
}

#[test]
fn skeleton_validation() {
    let dir = tempfile::tempdir().unwrap();
    let good = p(dir.path(), "good.toml");
    std::fs::write(&good, sparsemo::kinematics::KinematicTree::default_source()).unwrap();
    assert_eq!(ok(&["skeleton", "validate", &good])["segments"], 24);

    let bad = p(dir.path(), "bad.toml");
    std::fs::write(&bad, "segments = 3").unwrap();
    let out = sparsemo(&["skeleton", "validate", &bad]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn exit_codes() {
    assert_eq!(sparsemo(&["datagen", "--bogus"]).status.code(), Some(2));
    assert_eq!(sparsemo(&[]).status.code(), Some(2));
    let missing = sparsemo(&["evaluate", "--gt", "/nonexistent/d.bin", "--rec", "/nonexistent/r"]);
    assert_eq!(missing.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("io"));
    let dir = tempfile::tempdir().unwrap();
    let stream = p(dir.path(), "s.ndjson");
    std::fs::write(&stream, "").unwrap();
    let ckpt = p(dir.path(), "junk.ckpt");
    std::fs::write(&ckpt, b"not a checkpoint").unwrap();
    let out = sparsemo(&["reconstruct", "--ckpt", &ckpt, "--in", &stream, "--height", "1.7"]);
    assert_eq!(out.status.code(), Some(5));
    let out = sparsemo(&["bench", "--size", "1/16/32", "--spread", "2000/0", "--frames", "3"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}
