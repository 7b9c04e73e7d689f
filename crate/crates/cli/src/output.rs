//! Output root resolution, CSV files with a trailing manifest comment, and
//! per-command manifest files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::config::ExperimentConfig;

/// Environment variable overriding the configured output root.
pub const OUT_ENV: &str = "STAIRTOKEN_OUT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutSource {
    Flag,
    Env,
    Config,
    Default,
}

impl OutSource {
    pub fn describe(&self) -> String {
        match self {
            OutSource::Flag => "--out flag".into(),
            OutSource::Env => format!("environment variable {OUT_ENV}"),
            OutSource::Config => "config file".into(),
            OutSource::Default => "default".into(),
        }
    }
}

/// Precedence: `--out`, then `STAIRTOKEN_OUT`, then the config's `out`,
/// then `./out`.
pub fn resolve_out_root(flag: Option<&Path>, env: Option<String>, cfg: &ExperimentConfig) -> (PathBuf, OutSource) {
    if let Some(p) = flag {
        return (p.to_path_buf(), OutSource::Flag);
    }
    if let Some(v) = env.filter(|v| !v.is_empty()) {
        return (PathBuf::from(v), OutSource::Env);
    }
    if let Some(p) = &cfg.out {
        return (p.clone(), OutSource::Config);
    }
    (PathBuf::from("out"), OutSource::Default)
}

/// Shared context of one command invocation.
#[derive(Debug, Clone)]
pub struct Run {
    pub command: String,
    pub cfg: ExperimentConfig,
    pub root: PathBuf,
    pub source: OutSource,
}

impl Run {
    pub fn new(command: &str, cfg: ExperimentConfig, root: PathBuf, source: OutSource) -> Self {
        Self {
            command: command.into(),
            cfg,
            root,
            source,
        }
    }

    /// `<root>/<command>`, created if missing.
    pub fn dir(&self) -> Result<PathBuf> {
        let d = self.root.join(&self.command);
        fs::create_dir_all(&d).with_context(|| format!("creating {}", d.display()))?;
        Ok(d)
    }

    pub fn seeds_field(&self) -> String {
        self.cfg
            .seeds
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }

    pub fn manifest_line(&self) -> String {
        format!(
            "# manifest config_sha256={} seeds={}",
            self.cfg.hash(),
            self.seeds_field()
        )
    }

    /// Header, rows, then the manifest comment line.
    pub fn write_csv<I, S>(&self, path: &Path, header: &str, rows: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut text = String::new();
        text.push_str(header);
        text.push('\n');
        for r in rows {
            text.push_str(r.as_ref());
            text.push('\n');
        }
        text.push_str(&self.manifest_line());
        text.push('\n');
        write_file(path, text.as_bytes())
    }

    /// `manifest.txt`: command, hash, seeds, output root and the resolved
    /// configuration.
    pub fn write_manifest(&self, dir: &Path) -> Result<()> {
        let mut text = String::new();
        let _ = writeln!(text, "command = {}", self.command);
        let _ = writeln!(text, "config_sha256 = {}", self.cfg.hash());
        let _ = writeln!(text, "seeds = {}", self.seeds_field());
        let _ = writeln!(text, "out_root = {}", self.root.display());
        let _ = writeln!(text, "out_root_source = {}", self.source.describe());
        if self.source == OutSource::Env {
            let _ = writeln!(text, "{OUT_ENV} = {}", self.root.display());
        }
        text.push_str("\n# resolved configuration\n");
        text.push_str(&self.cfg.canonical_toml());
        write_file(&dir.join("manifest.txt"), text.as_bytes())
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

/// Strips the trailing manifest line and parses the remaining CSV rows.
pub fn read_csv_rows(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines
        .next()
        .map(|h| h.split(',').map(String::from).collect())
        .unwrap_or_default();
    let rows = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    (header, rows)
}
