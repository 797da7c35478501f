use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn loopfloer(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_loopfloer"))
        .args(args)
        .env("LOOPFLOER_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&fs::read(path).unwrap()).unwrap()
}

#[test]
fn circle_complex_has_circle_homology() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c");
    let run = loopfloer(&["complex", "--n", "1", "--alpha", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let homology = fs::read_to_string(out.join("homology.txt")).unwrap();
    assert!(homology.contains("H0 = Z\n"));
    assert!(homology.contains("H1 = Z\n"));
    assert_eq!(read_json(&out.join("manifest.json"))["status"], "pass");
}

#[test]
fn sharp_profile_is_vacuous_and_succeeds() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r");
    let profile = configs().join("sharp.json");
    let run = loopfloer(&[
        "radial",
        "--profile",
        profile.to_str().unwrap(),
        "--alpha",
        "1",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&run.stdout).contains("VACUOUS"));
    let report = read_json(&out.join("radial.json"));
    assert_eq!(report["existence"]["verdict"], "VACUOUS");
}

#[test]
fn bad_config_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{ "command": "critical", "unknown_key": 1 }"#).unwrap();
    let out = dir.path().join("o");
    let run = loopfloer(&["critical", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));

    let run = loopfloer(&["critical", "--n", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn command_mismatch_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("critical.json");
    let out = dir.path().join("o");
    let run = loopfloer(&["complex", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("complex_perturbed.json");
    let mut manifests = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let run = loopfloer(&["complex", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(run.status.code(), Some(0));
        manifests.push(fs::read(out.join("manifest.json")).unwrap());
    }
    assert_eq!(manifests[0], manifests[1]);
    assert_eq!(
        fs::read(dir.path().join("a/complex.json")).unwrap(),
        fs::read(dir.path().join("b/complex.json")).unwrap()
    );
}

#[test]
fn manifest_lists_every_written_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("f");
    let run = loopfloer(&[
        "flow",
        "--config",
        configs().join("flow.json").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0));
    let manifest = read_json(&out.join("manifest.json"));
    let files = manifest["files"].as_array().unwrap();
    let mut listed: Vec<String> = files.iter().map(|f| f["path"].as_str().unwrap().to_string()).collect();
    listed.sort();
    let mut present: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "manifest.json")
        .collect();
    present.sort();
    assert_eq!(listed, present);
    for f in files {
        let bytes = fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
    }
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
}
