//! Self-describing run directories: configs copied in, artifacts and
//! digests recorded in a manifest.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunContext;
use crate::error::{runtime, validation, CliResult};

/// One recorded output file.
#[derive(Debug, Clone, Serialize)]
pub struct Artifact {
    pub kind: String,
    pub path: String,
    /// Content digest where the artifact format defines one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
}

/// Replay record written as `manifest.json`.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool_version: &'static str,
    pub command: String,
    pub seed: u64,
    pub eval_seed: u64,
    pub env_digest: String,
    pub artifacts: Vec<Artifact>,
    /// Held-out episode seeds, recorded by evaluation commands.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub eval_episode_seeds: Vec<u64>,
}

/// A freshly created output directory.
pub struct RunDir {
    root: PathBuf,
    manifest: Manifest,
}

impl RunDir {
    /// Create the directory, refusing to touch an existing non-empty one
    /// so reruns can never silently mix artifacts.
    pub fn create(root: PathBuf, command: &str, ctx: &RunContext) -> CliResult<RunDir> {
        match std::fs::read_dir(&root) {
            Ok(mut entries) => {
                if entries.next().is_some() {
                    return Err(validation(format!(
                        "output directory {} already exists and is not empty; \
                         pick a fresh one with --out",
                        root.display()
                    )));
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                std::fs::create_dir_all(&root)
                    .map_err(|e| validation(format!("{}: {e}", root.display())))?;
            }
            Err(e) => return Err(validation(format!("{}: {e}", root.display()))),
        }

        let mut dir = RunDir {
            root,
            manifest: Manifest {
                tool_version: env!("CARGO_PKG_VERSION"),
                command: command.to_string(),
                seed: ctx.config.seed,
                eval_seed: ctx.config.eval_seed,
                env_digest: bidlab::data::env_digest(&ctx.env, &ctx.roster),
                artifacts: Vec::new(),
                eval_episode_seeds: Vec::new(),
            },
        };
        dir.write("config.toml", "config", &ctx.config_text, None)?;
        dir.write("env.toml", "env", &ctx.env_text, None)?;
        dir.write("roster.toml", "roster", &ctx.roster_text, None)?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Write a text artifact and record it.
    pub fn write(
        &mut self,
        name: &str,
        kind: &str,
        content: &str,
        digest: Option<String>,
    ) -> CliResult<PathBuf> {
        let path = self.root.join(name);
        std::fs::write(&path, content).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        self.record(name, kind, digest);
        Ok(path)
    }

    /// Record an artifact some other writer already produced.
    pub fn record(&mut self, name: &str, kind: &str, digest: Option<String>) {
        self.manifest.artifacts.push(Artifact {
            kind: kind.to_string(),
            path: name.to_string(),
            digest,
        });
    }

    pub fn set_eval_seeds(&mut self, seeds: Vec<u64>) {
        self.manifest.eval_episode_seeds = seeds;
    }

    /// Write the manifest; call last, once every artifact is recorded.
    pub fn finish(self) -> CliResult<PathBuf> {
        let json = serde_json::to_string_pretty(&self.manifest)
            .map_err(|e| runtime(format!("manifest: {e}")))?;
        let path = self.root.join("manifest.json");
        std::fs::write(&path, json + "\n")
            .map_err(|e| runtime(format!("{}: {e}", path.display())))?;
        Ok(path)
    }
}
