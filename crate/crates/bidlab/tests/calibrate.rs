//! Throwaway calibration harness (not part of the suite).

use std::collections::HashSet;
use std::time::Instant;

use bidlab::data::generate_behavior_dataset;
use bidlab::eval::{dt_baseline_sweep, evaluate_policy, training_seeds, Variant};
use bidlab::model::{ModelConfig, TrainMode};
use bidlab::pipeline::{iterate, train, IterateConfig, NoiseConfig, TrainParams};
use bidlab::seeding::{derive_seed, rng_for};
use bidlab::sim::{run_episode, AdvertiserConfig, ConstantPolicy, OpportunityModel, Roster};

fn desk_env() -> OpportunityModel {
    OpportunityModel::default()
}

fn desk_roster() -> Roster {
    let adv = |name: &str, budget: f64, cpa: f64| AdvertiserConfig {
        name: name.into(),
        budget,
        target_cpa: cpa,
        episode_steps: 48,
        cpa_multiplier: 1.0,
    };
    Roster {
        advertisers: vec![
            adv("retail", 70.0, 3.0),
            adv("travel", 55.0, 2.5),
            adv("gaming", 85.0, 3.5),
            adv("finance", 45.0, 2.0),
        ],
    }
}

#[test]
#[ignore]
fn constant_sweep_profile() {
    let env = desk_env();
    for adv in &desk_roster().advertisers {
        println!("--- {} budget {} cpa {}", adv.name, adv.budget, adv.target_cpa);
        for &a in &[0.3f64, 0.5, 0.7, 0.9, 1.0, 1.1, 1.3, 1.5, 2.0, 3.0] {
            let mut returns = Vec::new();
            let mut spends = Vec::new();
            for rep in 0..20u64 {
                let mut rng = rng_for(999, "calibrate", &[a.to_bits(), rep]);
                let ep = run_episode(&mut ConstantPolicy(a), &env, adv, &mut rng).unwrap();
                returns.push(ep.episode_return());
                spends.push(ep.final_state.cum_cost);
            }
            let mean_r = returns.iter().sum::<f64>() / 20.0;
            let mean_s = spends.iter().sum::<f64>() / 20.0;
            println!(
                "a={a:4.1}  conv {mean_r:6.2}  spend {mean_s:6.2}  ({:4.0}% budget)  cpa {:5.2}",
                100.0 * mean_s / adv.budget,
                if mean_r > 0.0 { mean_s / mean_r } else { 0.0 }
            );
        }
    }
}

#[test]
#[ignore]
fn timing_profile() {
    let env = desk_env();
    let roster = desk_roster();

    let t0 = Instant::now();
    let set = generate_behavior_dataset(&env, &roster, 2, 4242).unwrap();
    println!("behavior dataset: {} trajectories in {:?}", set.len(), t0.elapsed());

    let model = ModelConfig::default();
    let hp = TrainParams {
        epochs: 5,
        batch_size: 16,
        learning_rate: 1e-3,
        weight_decay: 0.0,
    };
    let t0 = Instant::now();
    let (run, ck) = bidlab::pipeline::train(
        bidlab::model::TrainMode::Rhat,
        &model,
        &hp,
        &set,
        1,
    )
    .unwrap();
    let dt = t0.elapsed();
    let steps = 5 * set.len().div_ceil(16);
    println!(
        "train 5 epochs ({} steps): {:?}  ({:?}/step)  final {:.4}",
        steps,
        dt,
        dt / steps as u32,
        run.final_loss
    );

    let t0 = Instant::now();
    let noise = NoiseConfig::default();
    let cands =
        bidlab::pipeline::generate_trajectories(&ck, &env, &roster, 2, &noise, 1, 77).unwrap();
    println!(
        "generate {} episodes: {:?} ({:?}/episode)",
        cands.len(),
        t0.elapsed(),
        t0.elapsed() / cands.len() as u32
    );
}

#[test]
#[ignore]
fn one_loop_profile() {
    let env = desk_env();
    let roster = desk_roster();
    let config = IterateConfig {
        rounds: 3,
        episodes_per_policy: 1,
        episodes_per_advertiser: 12,
        select_percentile: 70.0,
        noise: NoiseConfig::default(),
        train: TrainParams {
            epochs: 16,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.0,
        },
    };
    for seed in [5u64, 6, 7] {
        let t0 = Instant::now();
        let outcome = iterate(&env, &roster, &ModelConfig::default(), &config, None, seed).unwrap();
        println!(
            "seed {seed}: {:?}, initial median {:.1} mean {:.1} size {}",
            t0.elapsed(),
            outcome.log.initial.median,
            outcome.log.initial.mean,
            outcome.log.initial.size
        );
        for r in &outcome.log.rounds {
            println!(
                "  k={} loss {:.4} probe {:.2} sigma {:.3} kept {}/{} size {} median {:.1} mean {:.1}",
                r.k,
                r.train_loss,
                r.probe_rhat,
                r.sigma,
                r.selected,
                r.generated,
                r.dataset.size,
                r.dataset.median,
                r.dataset.mean
            );
        }
    }
}

#[test]
#[ignore]
fn method_ordering_dry_run() {
    let env = desk_env();
    let roster = desk_roster();
    let train_hp = TrainParams {
        epochs: 40,
        batch_size: 16,
        learning_rate: 1e-3,
        weight_decay: 0.0,
    };
    let config = IterateConfig {
        rounds: 3,
        episodes_per_policy: 1,
        episodes_per_advertiser: 12,
        select_percentile: 70.0,
        noise: NoiseConfig::default(),
        train: train_hp,
    };
    let model = ModelConfig::default();
    let eval_seed = 90_001u64;
    let episodes = 6usize;

    for seed in [11u64, 12, 13] {
        let t0 = Instant::now();
        let outcome = iterate(&env, &roster, &model, &config, None, seed).unwrap();
        let t_loop = t0.elapsed();
        let t1 = &outcome.sets[0];
        let forbidden: HashSet<u64> = training_seeds(outcome.sets.iter());

        let t0 = Instant::now();
        let mut scores = Vec::new();
        for mode in [TrainMode::Bc, TrainMode::Rdt] {
            let (_, ck) = train(
                mode,
                &model,
                &config.train,
                t1,
                derive_seed(seed, "iterate-train", &[1]),
            )
            .unwrap();
            let r = evaluate_policy(&ck, &env, &roster, &[Variant::Ds1], episodes, eval_seed, &forbidden, None)
                .unwrap();
            scores.push((mode.as_str(), r[0].mean_score, r[0].mean_conversions));
        }
        // rhat on T1 is the loop's first-round model; retrain to get it.
        let (_, rhat_ck) = train(
            TrainMode::Rhat,
            &model,
            &config.train,
            t1,
            derive_seed(seed, "iterate-train", &[1]),
        )
        .unwrap();
        let r = evaluate_policy(&rhat_ck, &env, &roster, &[Variant::Ds1], episodes, eval_seed, &forbidden, None)
            .unwrap();
        scores.push(("rhat", r[0].mean_score, r[0].mean_conversions));
        let r = evaluate_policy(&outcome.final_checkpoint, &env, &roster, &[Variant::Ds1], episodes, eval_seed, &forbidden, None)
            .unwrap();
        scores.push(("rstar", r[0].mean_score, r[0].mean_conversions));

        let (_, dt_ck) = train(
            TrainMode::DtBaseline,
            &model,
            &config.train,
            t1,
            derive_seed(seed, "iterate-train", &[1]),
        )
        .unwrap();
        let points = dt_baseline_sweep(&dt_ck, &env, &roster, &[Variant::Ds1], episodes, eval_seed, &forbidden)
            .unwrap();
        let best = points
            .iter()
            .map(|p| p.reports[0].mean_score)
            .fold(f64::NEG_INFINITY, f64::max);
        scores.push(("dt_best", best, 0.0));
        let t_eval = t0.elapsed();

        println!("seed {seed}: loop {t_loop:?}, train+eval {t_eval:?}");
        for (name, score, conv) in &scores {
            println!("  {name:8} score {score:6.2} conv {conv:5.1}");
        }
    }
}
