//! Artifact persistence. File contents depend only on the resolved config, so
//! reruns overwrite them with identical bytes.

use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use serde_json::json;

use crate::commands::Outcome;
use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";
pub const RERUN_CONFIG: &str = "run.toml";

/// Writes the artifacts, `run.toml` and `manifest.json`; returns the paths.
pub fn write_run(cfg: &RunConfig, outcome: &Outcome) -> Result<Vec<PathBuf>> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let mut written = Vec::new();
    let mut write = |name: &str, contents: &str| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display()))?;
        written.push(path);
        Ok(())
    };
    for a in &outcome.artifacts {
        write(&a.name, &a.contents)?;
    }
    write(RERUN_CONFIG, &cfg.to_toml())?;
    let manifest = json!({
        "tool": "locdep",
        "version": env!("CARGO_PKG_VERSION"),
        "command": cfg.command.name(),
        "config": cfg,
        "overrides": cfg.overrides,
        "artifacts": outcome.artifacts.iter().map(|a| &a.name).collect::<Vec<_>>(),
        "verified": outcome.verified,
        "rerun": format!("locdep --config {}", dir.join(RERUN_CONFIG).display()),
    });
    write(MANIFEST, &(serde_json::to_string_pretty(&manifest)? + "\n"))?;
    Ok(written)
}
