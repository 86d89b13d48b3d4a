#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn ados(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ados"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .expect("spawn ados")
}

pub fn ados_env(args: &[&str], cwd: &Path, env: &[(&str, &str)]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ados"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .envs(env.iter().copied())
        .output()
        .expect("spawn ados")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[track_caller]
pub fn ok(o: Output) -> Output {
    assert!(o.status.success(), "exit {:?}\nstdout:\n{}\nstderr:\n{}", o.status.code(), stdout(&o), stderr(&o));
    o
}

/// Workspace with `corpus/` generated by `ados synth` and `cfg.json`.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new(seed: u64, config: &str) -> Self {
        Self::with_profile(seed, config, None)
    }

    pub fn with_profile(seed: u64, config: &str, profile: Option<&str>) -> Self {
        let dir = tempfile::tempdir().expect("tempdir");
        let seed_s = seed.to_string();
        let mut args = vec!["synth", "--out", "corpus", "--seed", &seed_s];
        if let Some(p) = profile {
            fs::write(dir.path().join("profile.json"), p).unwrap();
            args.extend(["--profile", "profile.json"]);
        }
        ok(ados(&args, dir.path()));
        fs::write(dir.path().join("cfg.json"), config).unwrap();
        Workspace { dir }
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn run(&self, args: &[&str]) -> Output {
        let mut full = vec!["--config", "cfg.json"];
        full.extend_from_slice(args);
        ados(&full, self.path())
    }

    pub fn read(&self, rel: &str) -> String {
        fs::read_to_string(self.path().join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
    }

    pub fn json(&self, rel: &str) -> serde_json::Value {
        serde_json::from_str(&self.read(rel)).unwrap()
    }
}

pub const BASIC_CONFIG: &str = r#"{"paths": {"corpus": "corpus"}, "rules": {"grid": "default"}, "seed": 5}"#;

/// Every regular file under `dir`, relative path to bytes.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}
