//! End-to-end checks of the installed binary: exit codes, artifact layout,
//! and byte-level reproducibility across invocations.

use std::path::Path;
use std::process::{Command, Output};

fn bidlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bidlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_exit(out: &Output, code: i32, what: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{what}: stdout {:?} stderr {:?}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Tiny but complete experiment: two advertisers, a one-layer model, and
/// single-episode counts so the whole chain runs in seconds.
fn write_config(dir: &Path) {
    std::fs::write(
        dir.join("env.toml"),
        "[opportunity]\n\
         opportunities_per_step = 20.0\n\
         p_exposure = 0.85\n\
         seed = 17\n\n\
         [opportunity.opponent_ecpm]\n\
         mu = -2.12\n\
         sigma = 0.5\n\n\
         [opportunity.pcvr_dist]\n\
         kind = \"beta\"\n\
         alpha = 2.0\n\
         beta = 48.0\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("roster.toml"),
        "[[advertisers]]\n\
         name = \"alpha\"\n\
         budget = 25.0\n\
         target_cpa = 3.0\n\
         episode_steps = 16\n\n\
         [[advertisers]]\n\
         name = \"beta\"\n\
         budget = 18.0\n\
         target_cpa = 2.5\n\
         episode_steps = 16\n",
    )
    .unwrap();
    std::fs::write(
        dir.join("run.toml"),
        "env = \"env.toml\"\n\
         roster = \"roster.toml\"\n\
         seed = 7\n\
         eval_seed = 1001\n\n\
         [model]\n\
         n_layers = 1\n\
         n_heads = 1\n\
         embed_dim = 8\n\
         context_steps = 8\n\
         state_dim = 6\n\
         max_timestep = 16\n\
         lambda = 0.05\n\n\
         [train]\n\
         epochs = 3\n\
         batch_size = 8\n\
         learning_rate = 1e-3\n\n\
         [iterate]\n\
         rounds = 1\n\
         episodes_per_policy = 1\n\
         episodes_per_advertiser = 4\n\
         select_percentile = 70.0\n\n\
         [eval]\n\
         episodes_per_advertiser = 1\n",
    )
    .unwrap();
}

fn read(dir: &Path, rel: &str) -> Vec<u8> {
    std::fs::read(dir.join(rel)).unwrap_or_else(|e| panic!("{rel}: {e}"))
}

#[test]
fn help_exits_zero_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    let top = bidlab(dir.path(), &["--help"]);
    assert_exit(&top, 0, "--help");
    assert!(String::from_utf8_lossy(&top.stdout).contains("Usage"));
    for sub in [
        "gen-data", "train", "generate", "iterate", "eval", "gradcheck", "report",
    ] {
        let out = bidlab(dir.path(), &[sub, "--help"]);
        assert_exit(&out, 0, &format!("{sub} --help"));
        assert!(
            String::from_utf8_lossy(&out.stdout).contains("Usage"),
            "{sub} --help printed no usage"
        );
    }
}

#[test]
fn bad_invocations_fail_validation() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());

    assert_exit(&bidlab(dir.path(), &["--bogus"]), 1, "unknown flag");
    assert_exit(&bidlab(dir.path(), &["gen-data"]), 1, "missing --config");
    assert_exit(
        &bidlab(dir.path(), &["--config", "absent.toml", "gen-data"]),
        1,
        "missing config file",
    );

    std::fs::write(
        dir.path().join("bad.toml"),
        "env = \"env.toml\"\nbogus_key = 1\n",
    )
    .unwrap();
    let out = bidlab(dir.path(), &["--config", "bad.toml", "gen-data"]);
    assert_exit(&out, 1, "unknown config key");
    assert!(
        String::from_utf8_lossy(&out.stderr).contains("bogus_key"),
        "error did not name the unknown key"
    );

    assert_exit(
        &bidlab(dir.path(), &["--config", "run.toml", "--threads", "0", "gen-data"]),
        1,
        "zero threads",
    );
}

#[test]
fn toy_gradient_check_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = bidlab(dir.path(), &["gradcheck", "--toy"]);
    assert_exit(&out, 0, "gradcheck --toy");
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("passed"), "no pass line: {stderr}");
    assert!(
        out.stdout.is_empty(),
        "progress must go to stderr, got {:?}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn the_full_chain_runs_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let cfg = ["--config", "run.toml"];

    let run = |args: &[&str]| {
        let all: Vec<&str> = cfg.iter().chain(args).copied().collect();
        let out = bidlab(dir.path(), &all);
        assert_exit(&out, 0, &args.join(" "));
        out
    };

    run(&["--out", "g", "gen-data"]);
    for name in ["dataset.jsonl", "config.toml", "env.toml", "roster.toml", "manifest.json"] {
        assert!(dir.path().join("g").join(name).exists(), "gen-data lacks {name}");
    }

    run(&["--out", "t", "train", "--mode", "rhat", "--data", "g/dataset.jsonl"]);
    run(&[
        "--out",
        "e",
        "eval",
        "--checkpoint",
        "t/model.ck",
        "--data",
        "g/dataset.jsonl",
    ]);
    let manifest = String::from_utf8(read(dir.path(), "e/manifest.json")).unwrap();
    assert!(
        manifest.contains("eval_episode_seeds"),
        "eval manifest must record its episode seeds"
    );

    let report = bidlab(dir.path(), &["report", "--run", "e"]);
    assert_exit(&report, 0, "report");
    let table = String::from_utf8(read(dir.path(), "e/table.txt")).unwrap();
    assert!(table.contains("rhat") && table.contains("ds2_high_cpa"), "{table}");

    // Same config and seeds again, fresh directories: identical bytes.
    run(&["--out", "g2", "gen-data"]);
    assert_eq!(read(dir.path(), "g/dataset.jsonl"), read(dir.path(), "g2/dataset.jsonl"));
    run(&["--out", "t2", "train", "--mode", "rhat", "--data", "g2/dataset.jsonl"]);
    assert_eq!(read(dir.path(), "t/model.ck"), read(dir.path(), "t2/model.ck"));
    assert_eq!(read(dir.path(), "t/train_run.json"), read(dir.path(), "t2/train_run.json"));
    run(&[
        "--out",
        "e2",
        "eval",
        "--checkpoint",
        "t2/model.ck",
        "--data",
        "g2/dataset.jsonl",
    ]);
    assert_eq!(read(dir.path(), "e/eval_rhat.json"), read(dir.path(), "e2/eval_rhat.json"));
}

#[test]
fn a_single_round_loop_equals_plain_training_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let cfg = ["--config", "run.toml"];
    let run = |args: &[&str]| {
        let all: Vec<&str> = cfg.iter().chain(args).copied().collect();
        let out = bidlab(dir.path(), &all);
        assert_exit(&out, 0, &args.join(" "));
    };

    run(&["--out", "loop", "iterate", "--rounds", "1"]);
    run(&["--out", "g", "gen-data"]);
    run(&["--out", "t", "train", "--mode", "rhat", "--data", "g/dataset.jsonl"]);

    assert_eq!(
        read(dir.path(), "loop/dataset_iter1.jsonl"),
        read(dir.path(), "g/dataset.jsonl"),
        "the loop's initial dataset must match standalone gen-data"
    );
    assert_eq!(
        read(dir.path(), "loop/model.ck"),
        read(dir.path(), "t/model.ck"),
        "one loop round must equal plain rhat training"
    );
}

#[test]
fn dirty_output_directories_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let first = bidlab(dir.path(), &["--config", "run.toml", "--out", "g", "gen-data"]);
    assert_exit(&first, 0, "first gen-data");
    let second = bidlab(dir.path(), &["--config", "run.toml", "--out", "g", "gen-data"]);
    assert_exit(&second, 1, "rerun into dirty directory");
    assert!(
        String::from_utf8_lossy(&second.stderr).contains("not empty"),
        "error must explain the refusal"
    );
}

#[test]
fn generate_extends_the_lineage() {
    let dir = tempfile::tempdir().unwrap();
    write_config(dir.path());
    let cfg = ["--config", "run.toml"];
    let run = |args: &[&str]| {
        let all: Vec<&str> = cfg.iter().chain(args).copied().collect();
        let out = bidlab(dir.path(), &all);
        assert_exit(&out, 0, &args.join(" "));
    };
    run(&["--out", "g", "gen-data"]);
    run(&["--out", "t", "train", "--mode", "rhat", "--data", "g/dataset.jsonl"]);
    run(&[
        "--out",
        "c",
        "generate",
        "--checkpoint",
        "t/model.ck",
        "--data",
        "g/dataset.jsonl",
    ]);

    let parent = bidlab::data::load(&dir.path().join("g/dataset.jsonl")).unwrap();
    let pool = bidlab::data::load(&dir.path().join("c/candidates.jsonl")).unwrap();
    assert_eq!(pool.iteration, parent.iteration + 1);
    assert_eq!(pool.parent_digest, parent.digest());
    assert!(!pool.is_empty());
}
