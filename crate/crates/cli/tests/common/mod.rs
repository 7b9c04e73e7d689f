#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// Budgets small enough that every command finishes in seconds.
pub const TINY: &str = r#"
seeds = [0, 1]

[gen]
count = 2

[benchmark]
configs = 20

[ppo]
horizon = 16
n_envs = 2
hidden = [8, 8]
estimator_hidden = 8
supervision_every = 4

[train]
stage1_updates = 2
stage2_updates = 2
stage3_updates = 2

[ablation]
updates = 2
eval_episodes = 2

[generalize]
updates = 2
episodes = 2

[track]
updates = 2
"#;

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_stairtoken"));
    c.env_remove("STAIRTOKEN_OUT");
    c
}

pub fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

/// Runs `stairtoken --config <cfg> --out <out> <args>`.
pub fn run(cfg: &Path, out: &Path, args: &[&str]) -> Output {
    bin()
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

pub fn run_ok(cfg: &Path, out: &Path, args: &[&str]) -> String {
    let o = run(cfg, out, args);
    assert!(
        o.status.success(),
        "stairtoken {args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

/// Every file under `dir` with its bytes, sorted by path.
pub fn snapshot(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let bytes = std::fs::read(&p).unwrap();
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}
