//! Constraint-penalized scoring of bidding episodes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{AdvertiserConfig, AuctionEvent};

/// CPA-overrun penalty: quadratic shrink once the realized cost per
/// acquisition `c_a` exceeds the target `c_t`, and no reward for staying
/// under it. An episode without acquisitions has no realized CPA; by
/// convention `c_a = 0` means unpenalized.
pub fn penalty(c_a: f64, c_t: f64) -> Result<f64> {
    if !(c_t > 0.0 && c_t.is_finite()) {
        return Err(Error::Config(format!(
            "target CPA must be positive and finite, got {c_t}"
        )));
    }
    if !(c_a >= 0.0 && c_a.is_finite()) {
        return Err(Error::Contract(format!(
            "realized CPA must be non-negative and finite, got {c_a}"
        )));
    }
    if c_a == 0.0 {
        return Ok(1.0);
    }
    Ok((c_t / c_a).powi(2).min(1.0))
}

/// Outcome metrics of one scored episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeScore {
    /// Penalized conversions, the quantity methods compete on.
    pub score: f64,
    pub conversions: f64,
    pub spend: f64,
    /// Realized cost per acquisition; 0 when nothing converted.
    pub c_a: f64,
    /// Spend over budget, in [0, 1] for any legal episode.
    pub budget_ratio: f64,
    pub penalty: f64,
}

/// Score an episode's auction log under the advertiser's constraints.
///
/// Conversions and spend are recomputed from the win/exposure/conversion
/// flags rather than read from aggregate counters, so the score stands on
/// its own against the raw log.
pub fn score_episode<'a>(
    events: impl IntoIterator<Item = &'a AuctionEvent>,
    adv: &AdvertiserConfig,
) -> Result<EpisodeScore> {
    adv.validate()?;
    let mut conversions = 0.0f64;
    let mut spend = 0.0f64;
    for event in events {
        let won = f64::from(u8::from(event.won));
        let exposed = f64::from(u8::from(event.exposed));
        let converted = f64::from(u8::from(event.converted));
        conversions += won * exposed * converted;
        spend += event.bid * won * exposed;
    }
    let c_a = if conversions > 0.0 {
        spend / conversions
    } else {
        0.0
    };
    let penalty = penalty(c_a, adv.effective_cpa())?;
    Ok(EpisodeScore {
        score: penalty * conversions,
        conversions,
        spend,
        c_a,
        budget_ratio: spend / adv.budget,
        penalty,
    })
}
