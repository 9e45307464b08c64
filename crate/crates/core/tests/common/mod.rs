#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn forge(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .env("FORGE_LOG", "warn")
        .output()
        .expect("forge binary runs")
}

pub fn forge_ok(args: &[&str]) -> Output {
    let out = forge(args);
    assert!(
        out.status.success(),
        "forge {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every file under `root` except `run.log`, keyed by relative path.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else if path.file_name().unwrap() != "run.log" {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

/// Writes a small fixture under `root` and a fast run config next to it.
pub fn small_fixture(root: &Path) -> PathBuf {
    let s = root.to_str().unwrap();
    forge_ok(&[
        "fixture",
        "--train-identities",
        "6",
        "--test-identities",
        "5",
        "--images-per-identity",
        "4",
        "--out",
        s,
    ]);
    let cfg = root.join("fast.toml");
    let base = fs::read_to_string(root.join("forge.toml")).unwrap();
    let fast = base.replace("epochs = 60", "epochs = 3").replace("lr_decay_epoch = 40", "lr_decay_epoch = 2");
    assert_ne!(fast, base);
    fs::write(&cfg, fast).unwrap();
    cfg
}
