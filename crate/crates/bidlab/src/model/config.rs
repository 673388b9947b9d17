//! Model hyperparameters and the train-mode taxonomy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-timestep token layout fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenOrder {
    /// (state, RTG, action): the RTG is predicted from the state token.
    Sra,
    /// (RTG, state, action): the traditional layout with a preset RTG input.
    Rsa,
}

/// Which objective a checkpoint was trained with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// RTG regression (MSE) plus action regression.
    Rdt,
    /// Quantile RTG upper bound plus action regression.
    Rhat,
    /// Action regression only, RTG tokens zeroed.
    Bc,
    /// Traditional token order, action regression only, RTG supplied at
    /// inference from a schedule.
    DtBaseline,
}

impl TrainMode {
    pub fn token_order(self) -> TokenOrder {
        match self {
            TrainMode::DtBaseline => TokenOrder::Rsa,
            _ => TokenOrder::Sra,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Rdt => "rdt",
            TrainMode::Rhat => "rhat",
            TrainMode::Bc => "bc",
            TrainMode::DtBaseline => "dt_baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rdt" => Ok(TrainMode::Rdt),
            "rhat" => Ok(TrainMode::Rhat),
            "bc" => Ok(TrainMode::Bc),
            "dt_baseline" => Ok(TrainMode::DtBaseline),
            other => Err(Error::Config(format!(
                "unknown train mode {other:?}; expected rdt, rhat, bc, or dt_baseline"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub embed_dim: usize,
    /// Timesteps per context window; each contributes three tokens.
    pub context_steps: usize,
    pub state_dim: usize,
    #[serde(default = "default_action_dim")]
    pub action_dim: usize,
    pub max_timestep: usize,
    /// Quantile-loss asymmetry; the fitted constant approaches the
    /// in-sample maximum as lambda approaches 0.
    pub lambda: f32,
    #[serde(default)]
    pub dropout: f32,
}

fn default_action_dim() -> usize {
    1
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            n_layers: 3,
            n_heads: 2,
            embed_dim: 64,
            context_steps: 20,
            state_dim: 6,
            action_dim: 1,
            max_timestep: 48,
            lambda: 0.05,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.embed_dim == 0 {
            return Err(Error::Config(
                "n_layers, n_heads, and embed_dim must be positive".into(),
            ));
        }
        if self.embed_dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} is not divisible by n_heads {}",
                self.embed_dim, self.n_heads
            )));
        }
        if self.context_steps == 0 || self.state_dim == 0 || self.max_timestep == 0 {
            return Err(Error::Config(
                "context_steps, state_dim, and max_timestep must be positive".into(),
            ));
        }
        if self.action_dim != 1 {
            return Err(Error::Config(format!(
                "action_dim must be 1 (scalar bid coefficient), got {}",
                self.action_dim
            )));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Config(format!(
                "lambda must lie strictly inside (0,1), got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0,1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ModelConfig::default().validate().unwrap();
    }

    #[test]
    fn lambda_bounds_are_strict() {
        for bad in [0.0, 1.0, -0.1, 1.5] {
            let cfg = ModelConfig {
                lambda: bad,
                ..ModelConfig::default()
            };
            assert!(cfg.validate().is_err(), "lambda {bad} accepted");
        }
    }

    #[test]
    fn head_split_must_divide() {
        let cfg = ModelConfig {
            embed_dim: 10,
            n_heads: 3,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn mode_round_trips_and_orders() {
        for mode in [
            TrainMode::Rdt,
            TrainMode::Rhat,
            TrainMode::Bc,
            TrainMode::DtBaseline,
        ] {
            assert_eq!(TrainMode::parse(mode.as_str()).unwrap(), mode);
        }
        assert_eq!(TrainMode::Rhat.token_order(), TokenOrder::Sra);
        assert_eq!(TrainMode::DtBaseline.token_order(), TokenOrder::Rsa);
        assert!(TrainMode::parse("iql").is_err());
    }
}
