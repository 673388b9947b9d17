//! Elite-trajectory selection against per-bucket return thresholds.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::data::types::{TrainingSet, Trajectory};
use crate::error::{Error, Result};
use crate::sim::{AdvertiserConfig, BucketKey};

/// Linear-interpolation percentile of `values`, `p` in percent.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 100.0) {
        return Err(Error::Config(format!(
            "percentile must lie strictly inside (0,100), got {p}"
        )));
    }
    if values.is_empty() {
        return Err(Error::Contract("percentile of an empty set".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite returns"));
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// One selection threshold and where it came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketStat {
    pub label: String,
    pub threshold: f64,
    /// True when the bucket had no reference returns and the global
    /// percentile stood in.
    pub fallback: bool,
}

/// Kept trajectories plus the thresholds and warnings behind the cut.
#[derive(Debug, Clone)]
pub struct Selection {
    pub kept: Vec<Trajectory>,
    /// Stats per advertiser bucket, in candidate encounter order.
    pub stats: Vec<BucketStat>,
    pub warnings: Vec<String>,
}

fn bucket_label(adv: &AdvertiserConfig) -> String {
    format!(
        "budget={} target_cpa={} multiplier={}",
        adv.budget, adv.target_cpa, adv.cpa_multiplier
    )
}

/// Keep the candidates whose episode return strictly exceeds the p-th
/// percentile of the reference returns in their advertiser bucket.
///
/// A bucket with no reference trajectories falls back to the global
/// percentile and records a warning.
pub fn select_top(
    candidates: Vec<Trajectory>,
    reference: &TrainingSet,
    p: f64,
) -> Result<Selection> {
    if candidates.is_empty() {
        return Err(Error::Contract("select_top needs candidates".into()));
    }
    if reference.is_empty() {
        return Err(Error::Contract(
            "select_top needs a non-empty reference set".into(),
        ));
    }

    let mut by_bucket: HashMap<BucketKey, Vec<f64>> = HashMap::new();
    for t in &reference.trajectories {
        by_bucket
            .entry(t.adv.bucket())
            .or_default()
            .push(f64::from(t.episode_return));
    }
    let global: Vec<f64> = reference.returns().collect();

    let mut thresholds: HashMap<BucketKey, f64> = HashMap::new();
    let mut stats = Vec::new();
    let mut warnings = Vec::new();
    for c in &candidates {
        let key = c.adv.bucket();
        if thresholds.contains_key(&key) {
            continue;
        }
        let label = bucket_label(&c.adv);
        let (threshold, fallback) = match by_bucket.get(&key) {
            Some(returns) => (percentile(returns, p)?, false),
            None => {
                warnings.push(format!(
                    "bucket {label} has no reference trajectories; using the global threshold"
                ));
                (percentile(&global, p)?, true)
            }
        };
        thresholds.insert(key, threshold);
        stats.push(BucketStat {
            label,
            threshold,
            fallback,
        });
    }

    let kept = candidates
        .into_iter()
        .filter(|c| f64::from(c.episode_return) > thresholds[&c.adv.bucket()])
        .collect();
    Ok(Selection {
        kept,
        stats,
        warnings,
    })
}
