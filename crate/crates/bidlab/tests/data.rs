//! Dataset pipeline tests: generation, selection, merging, persistence,
//! and the CSV interchange path.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use bidlab::data::{
    behavior_palette, env_digest, export_csv, generate_behavior_dataset, generate_with_palette,
    import_external, load, merge, save, select_top, verify_nesting, BehaviorKind, PaletteEntry,
    Provenance, SchemaMap, Step, TrainingSet, Trajectory,
};
use bidlab::sim::{AdvertiserConfig, OpportunityModel, Roster};
use bidlab::Error;

fn adv(name: &str, budget: f64, target_cpa: f64) -> AdvertiserConfig {
    AdvertiserConfig {
        name: name.into(),
        budget,
        target_cpa,
        episode_steps: 48,
        cpa_multiplier: 1.0,
    }
}

fn four_advertisers() -> Roster {
    Roster {
        advertisers: vec![
            adv("alpha", 70.0, 3.0),
            adv("beta", 55.0, 2.5),
            adv("gamma", 40.0, 2.0),
            adv("delta", 70.0, 3.5),
        ],
    }
}

/// Single-step trajectory whose return is exactly `ret`.
fn toy_traj(adv: &AdvertiserConfig, seed: u64, provenance: Provenance, ret: f32) -> Trajectory {
    let mut adv = adv.clone();
    adv.episode_steps = 1;
    Trajectory {
        adv,
        seed,
        provenance,
        episode_return: ret,
        steps: vec![Step {
            state: [0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
            action: 1.0,
            reward: ret,
            rtg: ret,
        }],
    }
}

fn toy_set(adv: &AdvertiserConfig, returns: &[f32]) -> TrainingSet {
    let trajectories = returns
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            toy_traj(
                adv,
                i as u64 + 1,
                Provenance::Behavior { policy: "ref".into() },
                r,
            )
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

fn small_generated_set() -> (OpportunityModel, Roster, TrainingSet) {
    let env = OpportunityModel::default();
    let roster = Roster {
        advertisers: vec![adv("alpha", 70.0, 3.0), adv("beta", 55.0, 2.5)],
    };
    let palette = vec![
        PaletteEntry {
            name: "const-0.8".into(),
            kind: BehaviorKind::Constant(0.8),
            noise_sigma: 0.0,
        },
        PaletteEntry {
            name: "pacer-noisy".into(),
            kind: BehaviorKind::Pacer,
            noise_sigma: 0.3,
        },
    ];
    let set = generate_with_palette(&env, &roster, &palette, 1, 99).unwrap();
    (env, roster, set)
}

#[test]
fn six_policies_four_advertisers_make_twenty_four_trajectories() {
    let env = OpportunityModel::default();
    let roster = four_advertisers();
    let mut palette = behavior_palette();
    palette.truncate(6);
    let set = generate_with_palette(&env, &roster, &palette, 1, 7).unwrap();

    assert_eq!(set.len(), 24);
    assert_eq!(set.iteration, 1);
    assert!(set.parent_digest.is_empty());
    assert_eq!(set.env_digest, env_digest(&env, &roster));
    for t in &set.trajectories {
        assert_eq!(t.steps.len(), 48);
        assert!(matches!(t.provenance, Provenance::Behavior { .. }));
    }
    let returns: Vec<f64> = set.returns().collect();
    let spread = returns.iter().cloned().fold(f64::MIN, f64::max)
        - returns.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread > 0.0, "palette returns all identical: {returns:?}");
}

#[test]
fn default_palette_spans_clean_and_noisy_variants() {
    let palette = behavior_palette();
    assert_eq!(palette.len(), 8);
    let mut names: Vec<&str> = palette.iter().map(|p| p.name.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), 8, "palette names must be unique");
    assert_eq!(palette.iter().filter(|p| p.noise_sigma == 0.0).count(), 4);
    assert_eq!(palette.iter().filter(|p| p.noise_sigma > 0.0).count(), 4);
}

#[test]
fn generation_is_seed_deterministic() {
    let env = OpportunityModel::default();
    let roster = Roster {
        advertisers: vec![adv("alpha", 70.0, 3.0)],
    };
    let palette = &behavior_palette()[..2];
    let a = generate_with_palette(&env, &roster, palette, 2, 1).unwrap();
    let b = generate_with_palette(&env, &roster, palette, 2, 1).unwrap();
    let c = generate_with_palette(&env, &roster, palette, 2, 2).unwrap();
    assert_eq!(a.digest(), b.digest());
    assert_ne!(a.digest(), c.digest());
}

#[test]
fn zero_coefficient_policy_earns_nothing() {
    let env = OpportunityModel::default();
    let roster = Roster {
        advertisers: vec![adv("alpha", 70.0, 3.0)],
    };
    let palette = vec![PaletteEntry {
        name: "const-0".into(),
        kind: BehaviorKind::Constant(0.0),
        noise_sigma: 0.0,
    }];
    let set = generate_with_palette(&env, &roster, &palette, 1, 3).unwrap();
    let t = &set.trajectories[0];
    assert_eq!(t.episode_return, 0.0);
    assert!(t.steps.iter().all(|s| s.reward == 0.0 && s.rtg == 0.0));
    assert!(t.steps.iter().all(|s| s.state[1] == 1.0), "budget must stay whole");
}

#[test]
fn select_top_keeps_strict_exceeders_of_the_p70_threshold() {
    let a = adv("alpha", 70.0, 3.0);
    let reference = toy_set(&a, &(1..=10).map(|r| r as f32).collect::<Vec<_>>());
    let candidates: Vec<Trajectory> = [10.0, 3.0, 8.0]
        .iter()
        .enumerate()
        .map(|(i, &r)| toy_traj(&a, 100 + i as u64, Provenance::Generated { iter: 1 }, r))
        .collect();

    let selection = select_top(candidates, &reference, 70.0).unwrap();
    let kept: Vec<f32> = selection.kept.iter().map(|t| t.episode_return).collect();
    assert_eq!(kept, vec![10.0, 8.0]);
    assert_eq!(selection.stats.len(), 1);
    assert!((selection.stats[0].threshold - 7.3).abs() < 1e-12);
    assert!(!selection.stats[0].fallback);
    assert!(selection.warnings.is_empty());
}

#[test]
fn select_top_excludes_boundary_and_falls_back_on_unknown_buckets() {
    // Eleven returns 0..=10 put the 70th percentile at exactly 7.
    let a = adv("alpha", 70.0, 3.0);
    let reference = toy_set(&a, &(0..=10).map(|r| r as f32).collect::<Vec<_>>());
    let other = adv("other", 99.0, 3.0);
    let candidates = vec![
        toy_traj(&a, 101, Provenance::Generated { iter: 1 }, 7.0),
        toy_traj(&a, 102, Provenance::Generated { iter: 1 }, 7.5),
        toy_traj(&other, 103, Provenance::Generated { iter: 1 }, 8.0),
    ];

    let selection = select_top(candidates, &reference, 70.0).unwrap();
    let kept: Vec<u64> = selection.kept.iter().map(|t| t.seed).collect();
    assert_eq!(kept, vec![102, 103], "7.0 sits on the threshold and must drop");
    assert_eq!(selection.warnings.len(), 1);
    assert!(selection.warnings[0].contains("budget=99"), "{:?}", selection.warnings);
    let fallback = selection.stats.iter().find(|s| s.fallback).unwrap();
    assert_eq!(fallback.threshold, 7.0);
}

#[test]
fn selection_ignores_reference_order() {
    let a = adv("alpha", 70.0, 3.0);
    let forward = toy_set(&a, &(1..=10).map(|r| r as f32).collect::<Vec<_>>());
    let mut backward = forward.clone();
    backward.trajectories.reverse();
    let candidates: Vec<Trajectory> = (0..5)
        .map(|i| toy_traj(&a, 200 + i, Provenance::Generated { iter: 1 }, 5.0 + i as f32))
        .collect();

    let kf: Vec<u64> = select_top(candidates.clone(), &forward, 70.0)
        .unwrap()
        .kept
        .iter()
        .map(|t| t.seed)
        .collect();
    let kb: Vec<u64> = select_top(candidates, &backward, 70.0)
        .unwrap()
        .kept
        .iter()
        .map(|t| t.seed)
        .collect();
    assert_eq!(kf, kb);
}

#[test]
fn merge_appends_and_preserves_nesting() {
    let a = adv("alpha", 70.0, 3.0);
    let parent = toy_set(&a, &[4.0, 6.0, 8.0]);
    let selected = vec![
        toy_traj(&a, 301, Provenance::Generated { iter: 1 }, 9.0),
        toy_traj(&a, 302, Provenance::Generated { iter: 1 }, 7.0),
    ];

    let child = merge(&parent, selected).unwrap();
    assert_eq!(child.iteration, 2);
    assert_eq!(child.len(), 5);
    assert_eq!(child.parent_digest, parent.digest());
    assert_eq!(&child.trajectories[..3], &parent.trajectories[..]);
    verify_nesting(&parent, &child).unwrap();

    let mut tampered = child.clone();
    tampered.trajectories.remove(0);
    assert!(verify_nesting(&parent, &tampered).is_err());
    let mut rehashed = child.clone();
    rehashed.parent_digest = "feed".into();
    assert!(verify_nesting(&parent, &rehashed).is_err());
}

#[test]
fn merge_rejects_wrong_provenance_and_duplicates() {
    let a = adv("alpha", 70.0, 3.0);
    let parent = toy_set(&a, &[4.0, 6.0]);

    let behavior = toy_traj(&a, 400, Provenance::Behavior { policy: "x".into() }, 1.0);
    assert!(matches!(
        merge(&parent, vec![behavior]),
        Err(Error::Contract(_))
    ));

    let wrong_iter = toy_traj(&a, 401, Provenance::Generated { iter: 2 }, 1.0);
    assert!(matches!(
        merge(&parent, vec![wrong_iter]),
        Err(Error::Contract(_))
    ));

    let dup = toy_traj(&a, 402, Provenance::Generated { iter: 1 }, 1.0);
    assert!(matches!(
        merge(&parent, vec![dup.clone(), dup]),
        Err(Error::Duplicate(_))
    ));

    let mut parent_with_generated = parent.clone();
    parent_with_generated
        .trajectories
        .push(toy_traj(&a, 403, Provenance::Generated { iter: 1 }, 2.0));
    let clash = toy_traj(&a, 403, Provenance::Generated { iter: 1 }, 3.0);
    assert!(matches!(
        merge(&parent_with_generated, vec![clash]),
        Err(Error::Duplicate(_))
    ));
}

#[test]
fn merge_with_empty_selection_bumps_iteration_only() {
    let a = adv("alpha", 70.0, 3.0);
    let parent = toy_set(&a, &[4.0, 6.0]);
    let child = merge(&parent, vec![]).unwrap();
    assert_eq!(child.iteration, 2);
    assert_eq!(child.trajectories, parent.trajectories);
    verify_nesting(&parent, &child).unwrap();
}

#[test]
fn dataset_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, set) = small_generated_set();

    let path = dir.path().join("t1.jsonl");
    save(&set, &path).unwrap();
    let loaded = load(&path).unwrap();
    assert_eq!(loaded, set);

    let again = dir.path().join("t1-again.jsonl");
    save(&loaded, &again).unwrap();
    assert_eq!(
        fs::read(&path).unwrap(),
        fs::read(&again).unwrap(),
        "re-saving a loaded set must reproduce the bytes"
    );

    let first_line = fs::read_to_string(&path).unwrap();
    assert!(first_line.starts_with("{\"kind\":\"header\""));
}

#[test]
fn empty_and_merged_sets_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let empty = TrainingSet {
        iteration: 1,
        parent_digest: String::new(),
        env_digest: "e".into(),
        trajectories: vec![],
    };
    let path = dir.path().join("empty.jsonl");
    save(&empty, &path).unwrap();
    assert_eq!(load(&path).unwrap(), empty);

    let a = adv("alpha", 70.0, 3.0);
    let parent = toy_set(&a, &[4.0, 6.0]);
    let child = merge(
        &parent,
        vec![toy_traj(&a, 500, Provenance::Generated { iter: 1 }, 9.0)],
    )
    .unwrap();
    let child_path = dir.path().join("t2.jsonl");
    save(&child, &child_path).unwrap();
    let loaded = load(&child_path).unwrap();
    assert_eq!(loaded, child);
    verify_nesting(&parent, &loaded).unwrap();
}

#[test]
fn load_rejects_tampered_files() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, set) = small_generated_set();
    let path = dir.path().join("t1.jsonl");
    save(&set, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    let write = |name: &str, content: &str| {
        let p = dir.path().join(name);
        fs::write(&p, content).unwrap();
        p
    };

    // Truncating the final step leaves the last trajectory short.
    let mut lines: Vec<&str> = text.lines().collect();
    lines.pop();
    let truncated = write("trunc.jsonl", &(lines.join("\n") + "\n"));
    let err = load(&truncated).unwrap_err();
    assert!(err.to_string().contains("steps"), "{err}");

    // A flipped action keeps the records valid but breaks the digest.
    let action = format!("\"action\":{:.8e}", 0.8f64 as f32);
    let flipped = text.replacen(&action, "\"action\":7.00000000e-1", 1);
    assert_ne!(flipped, text, "expected a const-0.8 action to rewrite");
    let err = load(&write("flip.jsonl", &flipped)).unwrap_err();
    assert!(err.to_string().contains("digest"), "{err}");
    assert!(matches!(err, Error::Load { line: 1, .. }));

    // Header trajectory count out of step with the body.
    let recount = text.replacen("\"trajectories\":4", "\"trajectories\":5", 1);
    assert_ne!(recount, text);
    let err = load(&write("recount.jsonl", &recount)).unwrap_err();
    assert!(err.to_string().contains("trajectories"), "{err}");

    // Records before the header, or a stray second header.
    let headerless = text.lines().nth(1).unwrap().to_string();
    assert!(load(&write("headerless.jsonl", &headerless)).is_err());
    let doubled = format!("{text}{}", text.lines().next().unwrap());
    let err = load(&write("doubled.jsonl", &doubled)).unwrap_err();
    assert!(err.to_string().contains("header"), "{err}");

    assert!(load(&write("garbage.jsonl", "not json\n")).is_err());
    assert!(load(&write("empty.jsonl", "")).is_err());
}

#[test]
fn csv_export_then_import_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let (_, roster, set) = small_generated_set();
    let path = dir.path().join("t1.csv");
    export_csv(&set, &path).unwrap();

    let outcome = import_external(&path, &SchemaMap::identity(), &roster).unwrap();
    assert_eq!(outcome.skipped, 0);
    assert!(outcome.warnings.is_empty(), "{:?}", outcome.warnings);
    assert_eq!(outcome.set, set);
}

#[test]
fn csv_import_derives_states_from_raw_counters() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    fs::write(
        &path,
        "ep,st,who,act,rew,cost,conv,wr,price\n\
         e1,0,x,0.5,1,0,0,0,0\n\
         e1,1,x,0.7,0,4,1,0.5,0.3\n",
    )
    .unwrap();
    let schema = SchemaMap::from_pairs(
        [
            ("ep", "episode"),
            ("st", "step"),
            ("who", "advertiser"),
            ("act", "action"),
            ("rew", "reward"),
            ("cost", "cum_cost"),
            ("conv", "cum_conversions"),
            ("wr", "recent_win_rate"),
            ("price", "recent_price"),
        ]
        .iter()
        .map(|&(c, f)| (c.to_string(), f.to_string()))
        .collect::<HashMap<_, _>>(),
    )
    .unwrap();
    let roster = Roster {
        advertisers: vec![AdvertiserConfig {
            name: "x".into(),
            budget: 10.0,
            target_cpa: 2.0,
            episode_steps: 2,
            cpa_multiplier: 1.0,
        }],
    };

    let outcome = import_external(&path, &schema, &roster).unwrap();
    assert_eq!(outcome.set.len(), 1);
    assert_eq!(outcome.skipped, 0);
    let t = &outcome.set.trajectories[0];
    assert_eq!(t.provenance, Provenance::Behavior { policy: "import".into() });
    assert_eq!(t.steps[0].state, [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let want = [0.5, 0.6, 0.8, 2.0, 0.5, 0.15];
    for (i, (&got, &expect)) in t.steps[1].state.iter().zip(&want).enumerate() {
        assert!(
            (f64::from(got) - expect).abs() < 1e-6,
            "state[{i}] = {got}, want {expect}"
        );
    }
    assert_eq!(t.steps[0].rtg, 1.0);
    assert_eq!(t.steps[1].rtg, 0.0);
    assert_eq!(t.episode_return, 1.0);

    // The derived seed must be a pure function of the episode id.
    let again = import_external(&path, &schema, &roster).unwrap();
    assert_eq!(again.set.trajectories[0].seed, t.seed);
}

fn direct_csv_header() -> String {
    "episode,step,advertiser,seed,provenance,env_digest,cpa_multiplier,action,reward,\
     state0,state1,state2,state3,state4,state5"
        .to_string()
}

fn direct_row(
    episode: &str,
    step: usize,
    advertiser: &str,
    seed: u64,
    state0: f64,
) -> String {
    format!(
        "{episode},{step},{advertiser},{seed},behavior:manual,,1.0,0.1,0,{state0},1,0,0,0,0"
    )
}

fn write_csv(path: &Path, rows: &[String]) {
    let mut text = direct_csv_header();
    for r in rows {
        text.push('\n');
        text.push_str(r);
    }
    text.push('\n');
    fs::write(path, text).unwrap();
}

#[test]
fn incomplete_and_unknown_episodes_are_skipped_with_warnings() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let roster = Roster {
        advertisers: vec![AdvertiserConfig {
            name: "x".into(),
            budget: 10.0,
            target_cpa: 2.0,
            episode_steps: 2,
            cpa_multiplier: 1.0,
        }],
    };
    write_csv(
        &path,
        &[
            direct_row("e0", 0, "x", 5, 0.0),
            direct_row("e0", 1, "x", 5, 0.5),
            // One of two steps: dropped.
            direct_row("e1", 0, "x", 6, 0.0),
            // Advertiser missing from the roster: dropped.
            direct_row("e2", 0, "nope", 7, 0.0),
            direct_row("e2", 1, "nope", 7, 0.5),
            // Seed disagrees between rows: dropped.
            direct_row("e3", 0, "x", 8, 0.0),
            direct_row("e3", 1, "x", 9, 0.5),
        ],
    );

    let outcome = import_external(&path, &SchemaMap::identity(), &roster).unwrap();
    assert_eq!(outcome.set.len(), 1);
    assert_eq!(outcome.set.trajectories[0].seed, 5);
    assert_eq!(outcome.skipped, 3);
    assert_eq!(outcome.warnings.len(), 3);
    assert!(outcome.warnings[0].contains("e1"), "{:?}", outcome.warnings);
    assert!(outcome.warnings[1].contains("nope"), "{:?}", outcome.warnings);
    assert!(outcome.warnings[2].contains("e3"), "{:?}", outcome.warnings);
}

#[test]
fn conflicting_env_digests_abort_the_import() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let roster = Roster {
        advertisers: vec![AdvertiserConfig {
            name: "x".into(),
            budget: 10.0,
            target_cpa: 2.0,
            episode_steps: 1,
            cpa_multiplier: 1.0,
        }],
    };
    let row = |episode: &str, seed: u64, digest: &str| {
        format!("{episode},0,x,{seed},behavior:manual,{digest},1.0,0.1,0,0,1,0,0,0,0")
    };
    write_csv(&path, &[row("e0", 1, "aaa"), row("e1", 2, "bbb")]);
    let err = import_external(&path, &SchemaMap::identity(), &roster).unwrap_err();
    assert!(err.to_string().contains("env_digest"), "{err}");
}

#[test]
fn malformed_csv_values_name_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let roster = Roster {
        advertisers: vec![AdvertiserConfig {
            name: "x".into(),
            budget: 10.0,
            target_cpa: 2.0,
            episode_steps: 1,
            cpa_multiplier: 1.0,
        }],
    };
    write_csv(
        &path,
        &[
            direct_row("e0", 0, "x", 5, 0.0),
            "e1,0,x,6,behavior:manual,,1.0,not-a-number,0,0,1,0,0,0,0".to_string(),
        ],
    );
    let err = import_external(&path, &SchemaMap::identity(), &roster).unwrap_err();
    assert!(
        matches!(err, Error::Load { line: 3, .. }),
        "wanted a line-3 load error, got {err}"
    );

    // A schema map naming a column the file does not have fails up front.
    let bad = SchemaMap::from_pairs(
        [
            ("missing", "episode"),
            ("step", "step"),
            ("advertiser", "advertiser"),
            ("action", "action"),
            ("reward", "reward"),
            ("state0", "state0"),
            ("state1", "state1"),
            ("state2", "state2"),
            ("state3", "state3"),
            ("state4", "state4"),
            ("state5", "state5"),
        ]
        .iter()
        .map(|&(c, f)| (c.to_string(), f.to_string()))
        .collect::<HashMap<_, _>>(),
    )
    .unwrap();
    let err = import_external(&path, &bad, &roster).unwrap_err();
    assert!(err.to_string().contains("missing"), "{err}");
}

#[test]
fn env_digest_tracks_environment_and_roster_changes() {
    let env = OpportunityModel::default();
    let roster = four_advertisers();
    let base = env_digest(&env, &roster);
    assert_eq!(base, env_digest(&env, &roster));

    let mut env2 = env.clone();
    env2.p_exposure = 0.5;
    assert_ne!(base, env_digest(&env2, &roster));

    let mut roster2 = roster.clone();
    roster2.advertisers[0].budget += 1.0;
    assert_ne!(base, env_digest(&env, &roster2));
}

#[test]
fn behavior_dataset_wrapper_uses_the_default_palette() {
    let env = OpportunityModel::default();
    let roster = Roster {
        advertisers: vec![adv("alpha", 70.0, 3.0)],
    };
    let set = generate_behavior_dataset(&env, &roster, 1, 11).unwrap();
    assert_eq!(set.len(), behavior_palette().len());
    let mut policies: Vec<String> = set
        .trajectories
        .iter()
        .map(|t| match &t.provenance {
            Provenance::Behavior { policy } => policy.clone(),
            other => panic!("unexpected provenance {other}"),
        })
        .collect();
    policies.sort_unstable();
    let mut expected: Vec<String> = behavior_palette().into_iter().map(|p| p.name).collect();
    expected.sort_unstable();
    assert_eq!(policies, expected);
}
