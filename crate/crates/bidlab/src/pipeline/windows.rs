//! Context-window sampling and token-batch construction from training sets.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::TrainingSet;
use crate::error::Result;
use crate::model::{ModelConfig, TokenBatch};
use crate::sim::A_MAX;

/// RTG normalization constant of a dataset: its maximum episode return,
/// or 1 when no trajectory has earned anything yet.
pub fn rtg_scale(set: &TrainingSet) -> f32 {
    let max = set.returns().fold(0.0f64, f64::max);
    if max > 0.0 {
        max as f32
    } else {
        1.0
    }
}

/// One uniformly drawn (trajectory, start offset) window.
pub fn sample_window(
    set: &TrainingSet,
    context_steps: usize,
    rng: &mut ChaCha8Rng,
) -> (usize, usize) {
    let ti = rng.random_range(0..set.len());
    let max_start = set.trajectories[ti].steps.len().saturating_sub(context_steps);
    (ti, rng.random_range(0..=max_start))
}

/// Fixed probe windows: up to `n` evenly spaced trajectories, offset 0.
/// Deterministic, so the same probe can follow a model across rounds.
pub fn probe_windows(set: &TrainingSet, n: usize) -> Vec<(usize, usize)> {
    let n = n.min(set.len()).max(1);
    (0..n).map(|i| (i * set.len() / n, 0)).collect()
}

/// Tokenize the given windows into one batch.
///
/// RTGs are divided by `scale`, actions by the bid-coefficient bound, and
/// windows shorter than the context are padded at the tail. `zero_rtg`
/// blanks every RTG token, which is how behavior cloning unconditions the
/// model.
pub fn batch_from_windows(
    set: &TrainingSet,
    windows: &[(usize, usize)],
    config: &ModelConfig,
    scale: f32,
    zero_rtg: bool,
) -> Result<TokenBatch> {
    let b = windows.len();
    let k = config.context_steps;
    let mut states = Vec::with_capacity(b * k * config.state_dim);
    let mut rtgs = Vec::with_capacity(b * k);
    let mut actions = Vec::with_capacity(b * k);
    let mut timesteps = Vec::with_capacity(b * k);
    let mut pad_mask = Vec::with_capacity(b * k);

    for &(ti, start) in windows {
        let steps = &set.trajectories[ti].steps;
        for j in 0..k {
            match steps.get(start + j) {
                Some(step) => {
                    states.extend_from_slice(&step.state);
                    rtgs.push(if zero_rtg { 0.0 } else { step.rtg / scale });
                    actions.push(step.action / A_MAX as f32);
                    timesteps.push(start + j);
                    pad_mask.push(true);
                }
                None => {
                    states.extend(std::iter::repeat_n(0.0, config.state_dim));
                    rtgs.push(0.0);
                    actions.push(0.0);
                    timesteps.push(0);
                    pad_mask.push(false);
                }
            }
        }
    }

    let batch = TokenBatch {
        batch: b,
        steps: k,
        states,
        rtgs,
        actions,
        timesteps,
        pad_mask,
    };
    batch.validate(config)?;
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Provenance, Step, Trajectory};
    use crate::seeding::rng_for;
    use crate::sim::AdvertiserConfig;

    fn set_with_lengths(lengths: &[usize]) -> TrainingSet {
        let trajectories = lengths
            .iter()
            .enumerate()
            .map(|(i, &len)| {
                let steps: Vec<Step> = (0..len)
                    .rev()
                    .map(|remaining| Step {
                        state: [0.5; 6],
                        action: 2.0,
                        reward: 1.0,
                        rtg: remaining as f32 + 1.0,
                    })
                    .collect();
                Trajectory {
                    adv: AdvertiserConfig {
                        name: format!("a{i}"),
                        budget: 10.0,
                        target_cpa: 2.0,
                        episode_steps: len,
                        cpa_multiplier: 1.0,
                    },
                    seed: i as u64,
                    provenance: Provenance::Behavior {
                        policy: "w".into(),
                    },
                    episode_return: len as f32,
                    steps,
                }
            })
            .collect();
        let set = TrainingSet {
            iteration: 1,
            parent_digest: String::new(),
            env_digest: String::new(),
            trajectories,
        };
        set.validate().unwrap();
        set
    }

    fn tiny_config(k: usize) -> ModelConfig {
        ModelConfig {
            n_layers: 1,
            n_heads: 1,
            embed_dim: 4,
            context_steps: k,
            state_dim: 6,
            max_timestep: 16,
            lambda: 0.05,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn scale_is_the_max_return_with_a_floor_of_one() {
        assert_eq!(rtg_scale(&set_with_lengths(&[3, 8, 5])), 8.0);
        let zero = set_with_lengths(&[]);
        assert_eq!(rtg_scale(&zero), 1.0);
    }

    #[test]
    fn windows_cover_all_start_offsets() {
        let set = set_with_lengths(&[8, 8]);
        let mut rng = rng_for(1, "windows-test", &[0]);
        let mut seen = std::collections::HashSet::new();
        for _ in 0..500 {
            let (ti, start) = sample_window(&set, 3, &mut rng);
            assert!(start + 3 <= set.trajectories[ti].steps.len());
            seen.insert((ti, start));
        }
        // Two trajectories, offsets 0..=5 each.
        assert_eq!(seen.len(), 12);
    }

    #[test]
    fn batch_normalizes_and_pads() {
        let set = set_with_lengths(&[8, 2]);
        let config = tiny_config(4);
        let scale = rtg_scale(&set);
        let batch = batch_from_windows(&set, &[(0, 3), (1, 0)], &config, scale, false).unwrap();
        assert_eq!((batch.batch, batch.steps), (2, 4));
        // Window into the length-8 trajectory at offset 3: rtg 5,4,3,2.
        assert_eq!(&batch.rtgs[..4], &[5.0 / 8.0, 4.0 / 8.0, 3.0 / 8.0, 2.0 / 8.0]);
        assert_eq!(&batch.timesteps[..4], &[3, 4, 5, 6]);
        assert!(batch.pad_mask[..4].iter().all(|&m| m));
        // The length-2 trajectory fills half the window, rest is padding;
        // its RTGs still use the set-wide scale.
        assert_eq!(&batch.rtgs[4..6], &[2.0 / 8.0, 1.0 / 8.0]);
        assert_eq!(&batch.pad_mask[4..], &[true, true, false, false]);
        assert_eq!(&batch.actions[..2], &[0.5, 0.5], "2.0 over the bound 4.0");
        assert_eq!(batch.real_count(), 6);
    }

    #[test]
    fn zero_rtg_blanks_only_the_rtg_lane() {
        let set = set_with_lengths(&[8]);
        let config = tiny_config(4);
        let batch = batch_from_windows(&set, &[(0, 0)], &config, 8.0, true).unwrap();
        assert!(batch.rtgs.iter().all(|&r| r == 0.0));
        assert!(batch.actions.iter().all(|&a| a == 0.5));
    }

    #[test]
    fn probe_is_deterministic_and_in_range() {
        let set = set_with_lengths(&[8; 10]);
        let probe = probe_windows(&set, 4);
        assert_eq!(probe, vec![(0, 0), (2, 0), (5, 0), (7, 0)]);
        assert_eq!(probe_windows(&set, 100).len(), 10);
    }
}
