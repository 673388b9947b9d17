//! The run configuration file: one strict TOML document per experiment.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use bidlab::model::ModelConfig;
use bidlab::pipeline::{IterateConfig, NoiseConfig, TrainParams};
use bidlab::sim::{EnvParams, OpportunityModel, Roster};

use crate::error::{validation, CliResult};

/// Scalar knobs of the self-training loop; the nested train and noise
/// configs live in their own top-level sections.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IterateSection {
    pub rounds: u32,
    pub episodes_per_policy: usize,
    pub episodes_per_advertiser: usize,
    pub select_percentile: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub episodes_per_advertiser: usize,
}

/// Everything an experiment needs, versionable as one file. Relative paths
/// resolve against the config file's own directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: PathBuf,
    pub roster: PathBuf,
    /// Default parent directory for run outputs; `--out` and the
    /// `BIDLAB_OUT_ROOT` environment variable override it.
    #[serde(default = "default_out_root")]
    pub out_root: PathBuf,
    pub seed: u64,
    pub eval_seed: u64,
    pub model: ModelConfig,
    pub train: TrainParams,
    #[serde(default)]
    pub noise: NoiseConfig,
    pub iterate: IterateSection,
    pub eval: EvalSection,
}

fn default_out_root() -> PathBuf {
    PathBuf::from("runs")
}

/// A parsed, validated config plus the loaded environment and roster.
pub struct RunContext {
    pub config: RunConfig,
    pub config_text: String,
    pub env: OpportunityModel,
    pub env_text: String,
    pub roster: Roster,
    pub roster_text: String,
}

impl RunConfig {
    /// Assemble the loop config from the iterate section plus the shared
    /// train and noise sections.
    pub fn iterate_config(&self) -> IterateConfig {
        IterateConfig {
            rounds: self.iterate.rounds,
            episodes_per_policy: self.iterate.episodes_per_policy,
            episodes_per_advertiser: self.iterate.episodes_per_advertiser,
            select_percentile: self.iterate.select_percentile,
            noise: self.noise,
            train: self.train,
        }
    }
}

pub fn load_context(config_path: &Path) -> CliResult<RunContext> {
    let config_text = std::fs::read_to_string(config_path)
        .map_err(|e| validation(format!("{}: {e}", config_path.display())))?;
    let config: RunConfig = toml::from_str(&config_text)
        .map_err(|e| validation(format!("{}: {e}", config_path.display())))?;

    let base = config_path.parent().unwrap_or(Path::new("."));
    let env_path = base.join(&config.env);
    let roster_path = base.join(&config.roster);

    let env_text = std::fs::read_to_string(&env_path)
        .map_err(|e| validation(format!("env file {}: {e}", env_path.display())))?;
    let roster_text = std::fs::read_to_string(&roster_path)
        .map_err(|e| validation(format!("roster file {}: {e}", roster_path.display())))?;
    let env = EnvParams::from_path(&env_path)
        .map_err(validation)?
        .opportunity;
    let roster = Roster::from_path(&roster_path).map_err(validation)?;

    config.model.validate().map_err(validation)?;
    config.train.validate().map_err(validation)?;
    config.noise.validate().map_err(validation)?;
    config.iterate_config().validate().map_err(validation)?;
    if config.eval.episodes_per_advertiser == 0 {
        return Err(validation(
            "eval.episodes_per_advertiser must be at least 1",
        ));
    }

    Ok(RunContext {
        config,
        config_text,
        env,
        env_text,
        roster,
        roster_text,
    })
}
