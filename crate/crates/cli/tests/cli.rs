use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "\
synth_flow = moving-vortices
synth_domain = -40,-25,40,25
synth_seeding = random:300
synth_ring_spacing = 4
months = 5
k = 4
grid_spacing = 2
";

fn dynlap(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dynlap"));
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("DYNLAP_")) {
        cmd.env_remove(k);
    }
    cmd.args(args).output().unwrap()
}

fn write_config(dir: &Path) -> String {
    let p = dir.join("small.conf");
    std::fs::write(&p, SMALL).unwrap();
    p.display().to_string()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "manifest.json" {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                v.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    v.sort();
    v
}

#[test]
fn subcommands_in_sequence_match_run() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path());
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let a_s = a.display().to_string();
    let out = dynlap(&["run", "-c", &conf, "--output-dir", &a_s]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for sub in ["synth", "ingest", "mesh", "assemble", "solve", "seba", "sets", "diag"] {
        let out = dynlap(&[sub, "-c", &conf, "--output-dir", &b.display().to_string()]);
        assert!(out.status.success(), "{sub}: {}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(files(&a), files(&b));
    assert!(a.join("manifest.json").is_file());
}

#[test]
fn validation_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path());
    let out_dir = tmp.path().join("o").display().to_string();
    assert_eq!(dynlap(&["run", "-c", &conf, "--output-dir", &out_dir, "--set", "k=0"]).status.code(), Some(2));
    assert_eq!(dynlap(&["run", "-c", &conf, "--set", "no_such_key=1"]).status.code(), Some(2));
    assert_eq!(dynlap(&["run", "-c", "/nonexistent/run.conf"]).status.code(), Some(2));
    assert_eq!(dynlap(&["show-config", "--set", "k"]).status.code(), Some(2));
}

#[test]
fn missing_artifact_exits_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path());
    let out_dir = tmp.path().join("o");
    let out = dynlap(&["sets", "-c", &conf, "--output-dir", &out_dir.display().to_string()]);
    assert_eq!(out.status.code(), Some(4));
    let failed = std::fs::read_to_string(out_dir.join("FAILED")).unwrap();
    assert!(failed.starts_with("sets:"));
}

#[test]
fn show_config_applies_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let conf = write_config(tmp.path());
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dynlap"));
    let out = cmd
        .args(["show-config", "-c", &conf, "--set", "grid_spacing=0.5"])
        .env("DYNLAP_K", "6")
        .env("DYNLAP_MONTHS", "9")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let value = |key: &str| {
        text.lines()
            .find_map(|l| l.split_once('=').filter(|(k, _)| k.trim() == key).map(|(_, v)| v.trim().to_string()))
            .unwrap()
    };
    assert_eq!(value("k"), "6");
    assert_eq!(value("months"), "9");
    assert_eq!(value("grid_spacing"), "0.5");
    assert_eq!(value("synth_flow"), "moving-vortices");
}

#[test]
fn keys_lists_every_key() {
    let out = dynlap(&["keys"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["k", "months", "seba_mu", "grid_spacing", "c_step", "output_dir"] {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(key)), "missing {key}");
    }
}
