//! Environment parameters and the advertiser roster, loadable from TOML.

use std::path::Path;

use rand::Rng;
use rand_distr::{Beta, Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters of the log of the opponent price (natural-log space).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalParams {
    pub mu: f64,
    pub sigma: f64,
}

/// Per-opportunity predicted conversion rate distribution.
///
/// `Fixed` pins every opportunity to one value, which turns conversion
/// counts into plain binomials for tests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PcvrDist {
    Beta { alpha: f64, beta: f64 },
    Fixed { value: f64 },
}

impl PcvrDist {
    pub fn validate(&self) -> Result<()> {
        match *self {
            PcvrDist::Beta { alpha, beta } => {
                if alpha <= 0.0 || beta <= 0.0 {
                    return Err(Error::Config(format!(
                        "pcvr_dist beta parameters must be positive, got alpha={alpha} beta={beta}"
                    )));
                }
            }
            PcvrDist::Fixed { value } => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::Config(format!(
                        "pcvr_dist fixed value must lie in [0,1], got {value}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            PcvrDist::Beta { alpha, beta } => Beta::new(alpha, beta)
                .expect("validated beta parameters")
                .sample(rng),
            PcvrDist::Fixed { value } => {
                // Burn one draw so Fixed and Beta consume the same stream length.
                let _: f64 = rng.random();
                value
            }
        }
    }
}

/// Market model: how many opportunities arrive per step and how they behave.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpportunityModel {
    /// Poisson rate of opportunities per decision step.
    pub opportunities_per_step: f64,
    pub opponent_ecpm: LogNormalParams,
    pub p_exposure: f64,
    pub pcvr_dist: PcvrDist,
    /// Base seed for everything derived from this environment.
    pub seed: u64,
}

impl Default for OpportunityModel {
    fn default() -> Self {
        OpportunityModel {
            opportunities_per_step: 30.0,
            opponent_ecpm: LogNormalParams {
                mu: -2.12,
                sigma: 0.5,
            },
            p_exposure: 0.85,
            pcvr_dist: PcvrDist::Beta {
                alpha: 2.0,
                beta: 48.0,
            },
            seed: 17,
        }
    }
}

impl OpportunityModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.opportunities_per_step > 0.0) {
            return Err(Error::Config(format!(
                "opportunities_per_step must be > 0, got {}",
                self.opportunities_per_step
            )));
        }
        if !(self.opponent_ecpm.sigma > 0.0) {
            return Err(Error::Config(format!(
                "opponent_ecpm.sigma must be > 0, got {}",
                self.opponent_ecpm.sigma
            )));
        }
        if !(0.0..=1.0).contains(&self.p_exposure) {
            return Err(Error::Config(format!(
                "p_exposure must lie in [0,1], got {}",
                self.p_exposure
            )));
        }
        self.pcvr_dist.validate()
    }

    pub(crate) fn price_dist(&self) -> LogNormal<f64> {
        LogNormal::new(self.opponent_ecpm.mu, self.opponent_ecpm.sigma)
            .expect("validated log-normal parameters")
    }
}

/// One advertiser's budget and CPA constraints for an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvertiserConfig {
    pub name: String,
    pub budget: f64,
    pub target_cpa: f64,
    #[serde(default = "default_episode_steps")]
    pub episode_steps: usize,
    /// Target-CPA variant knob; the effective constraint is
    /// `target_cpa * cpa_multiplier`.
    #[serde(default = "default_cpa_multiplier")]
    pub cpa_multiplier: f64,
}

fn default_episode_steps() -> usize {
    48
}

fn default_cpa_multiplier() -> f64 {
    1.0
}

impl AdvertiserConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.budget > 0.0) {
            return Err(Error::Config(format!(
                "advertiser {}: budget must be > 0, got {}",
                self.name, self.budget
            )));
        }
        if !(self.target_cpa > 0.0) {
            return Err(Error::Config(format!(
                "advertiser {}: target_cpa must be > 0, got {}",
                self.name, self.target_cpa
            )));
        }
        if !(self.cpa_multiplier > 0.0) {
            return Err(Error::Config(format!(
                "advertiser {}: cpa_multiplier must be > 0, got {}",
                self.name, self.cpa_multiplier
            )));
        }
        if self.episode_steps == 0 {
            return Err(Error::Config(format!(
                "advertiser {}: episode_steps must be > 0",
                self.name
            )));
        }
        Ok(())
    }

    pub fn effective_cpa(&self) -> f64 {
        self.target_cpa * self.cpa_multiplier
    }

    /// Grouping key for selection thresholds: advertisers with the same
    /// budget and CPA constraint share a bucket.
    pub fn bucket(&self) -> BucketKey {
        BucketKey {
            budget_bits: self.budget.to_bits(),
            target_cpa_bits: self.target_cpa.to_bits(),
            multiplier_bits: self.cpa_multiplier.to_bits(),
        }
    }

    /// Copy with a different CPA variant multiplier.
    pub fn with_multiplier(&self, m: f64) -> AdvertiserConfig {
        AdvertiserConfig {
            cpa_multiplier: m,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BucketKey {
    budget_bits: u64,
    target_cpa_bits: u64,
    multiplier_bits: u64,
}

/// Top-level env parameter file: `[opportunity]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvParams {
    pub opportunity: OpportunityModel,
}

impl EnvParams {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let params: EnvParams = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        params.opportunity.validate()?;
        Ok(params)
    }
}

/// Advertiser roster file: repeated `[[advertisers]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Roster {
    pub advertisers: Vec<AdvertiserConfig>,
}

impl Roster {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let roster: Roster = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        roster.validate()?;
        Ok(roster)
    }

    pub fn validate(&self) -> Result<()> {
        if self.advertisers.is_empty() {
            return Err(Error::Config("roster has no advertisers".into()));
        }
        for adv in &self.advertisers {
            adv.validate()?;
        }
        let mut names: Vec<&str> = self.advertisers.iter().map(|a| a.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.advertisers.len() {
            return Err(Error::Config("advertiser names must be unique".into()));
        }
        Ok(())
    }

    /// Same roster with every advertiser switched to CPA multiplier `m`.
    pub fn with_multiplier(&self, m: f64) -> Roster {
        Roster {
            advertisers: self
                .advertisers
                .iter()
                .map(|a| a.with_multiplier(m))
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_model_validates() {
        OpportunityModel::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = "[opportunity]\nopportunities_per_step = 5.0\nbogus = 1\n";
        assert!(toml::from_str::<EnvParams>(text).is_err());
    }

    #[test]
    fn roster_round_trips_through_toml() {
        let roster = Roster {
            advertisers: vec![AdvertiserConfig {
                name: "a".into(),
                budget: 70.0,
                target_cpa: 3.0,
                episode_steps: 48,
                cpa_multiplier: 1.0,
            }],
        };
        let text = toml::to_string(&roster).unwrap();
        let back: Roster = toml::from_str(&text).unwrap();
        assert_eq!(roster, back);
    }

    #[test]
    fn bucket_distinguishes_multiplier() {
        let a = AdvertiserConfig {
            name: "a".into(),
            budget: 70.0,
            target_cpa: 3.0,
            episode_steps: 48,
            cpa_multiplier: 1.0,
        };
        let b = a.with_multiplier(1.5);
        assert_ne!(a.bucket(), b.bucket());
        assert_eq!(a.bucket(), a.clone().bucket());
    }

    #[test]
    fn invalid_configs_name_the_field() {
        let mut m = OpportunityModel::default();
        m.p_exposure = 1.2;
        let err = m.validate().unwrap_err();
        assert!(err.to_string().contains("p_exposure"), "{err}");
    }
}
