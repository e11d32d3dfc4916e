use std::path::Path;
use std::process::{Command, Output};

fn fuplab(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fuplab"));
    cmd.args(args).env_remove("FUPLAB_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gen_then_porosity_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("c.gset");
    let out = fuplab(&["gen", "--generator", "cantor", "--dim", "1", "--depth", "5", "--out", s(&set)], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rep = dir.path().join("p.json");
    let out = fuplab(&["porosity", "--kind", "ball", "--input", s(&set), "--out", s(&rep)], &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert!(v["nu_max"].as_f64().unwrap() > 0.0);
}

#[test]
fn failed_certificate_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("c.gset");
    let w = dir.path().join("w.json");
    let args = ["gen", "--generator", "cantor", "--depth", "3", "--scale", "6", "--out", s(&set)];
    assert_eq!(fuplab(&args, &[]).status.code(), Some(0));
    let args = ["weight-build", "--input", s(&set), "--nu", "0.05", "--mu", "14.15", "--alpha", "0.9", "--modify", "--out", s(&w)];
    let out = fuplab(&args, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = dir.path().join("cert.json");
    let args = ["psh-check", "--weight", s(&w), "--C", "0", "--samples", "100", "--lines", "20", "--out", s(&cert)];
    let out = fuplab(&args, &[]);
    assert_eq!(out.status.code(), Some(1));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    assert_eq!(v["pass"], serde_json::Value::Bool(false));
}

#[test]
fn malformed_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "name = \"x\"\n[[stage]]\nkind = \"teleport\"\n").unwrap();
    let out = fuplab(&["run", s(&cfg), "--out", s(&dir.path().join("o"))], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_thread_count_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let set = dir.path().join("c.gset");
    for bad in ["0", "many"] {
        let out = fuplab(&["gen", "--generator", "sierpinski", "--depth", "2", "--out", s(&set)], &[("FUPLAB_THREADS", bad)]);
        assert_eq!(out.status.code(), Some(2));
    }
    let out = fuplab(&["gen", "--generator", "sierpinski", "--depth", "2", "--out", s(&set)], &[("FUPLAB_THREADS", "1")]);
    assert_eq!(out.status.code(), Some(0));
}
