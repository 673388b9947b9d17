//! One function per subcommand.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use bidlab::data::{load, save, TrainingSet};
use bidlab::eval::{
    best_sweep_point, dt_baseline_sweep, evaluate_policy, quantile_series_csv, render_comparison,
    training_seeds, EvalReport, MethodEval, Variant,
};
use bidlab::model::{Checkpoint, ModelConfig, TokenBatch, TrainMode};
use bidlab::pipeline::{generate_trajectories, iterate, train, IterationLog, TrainRun};
use bidlab::seeding::{derive_seed, rng_for};
use rand::Rng;

use crate::config::RunContext;
use crate::error::{runtime, validation, CliResult};
use crate::rundir::RunDir;

/// Seed for training on a dataset: derived from the config seed and the
/// dataset's iteration number, exactly as the loop derives it, so a
/// standalone `train` reproduces the matching loop round bit for bit.
fn train_seed(base: u64, iteration: u32) -> u64 {
    derive_seed(base, "iterate-train", &[u64::from(iteration)])
}

pub fn gen_data(
    ctx: &RunContext,
    out: PathBuf,
    episodes_per_policy: Option<usize>,
) -> CliResult<()> {
    let episodes = episodes_per_policy.unwrap_or(ctx.config.iterate.episodes_per_policy);
    let mut dir = RunDir::create(out, "gen-data", ctx)?;
    eprintln!("run directory {}", dir.root().display());
    eprintln!(
        "generating behavior dataset: {} episodes per policy per advertiser",
        episodes
    );
    let set = bidlab::data::generate_behavior_dataset(
        &ctx.env,
        &ctx.roster,
        episodes,
        derive_seed(ctx.config.seed, "iterate-behavior", &[]),
    )
    .map_err(runtime)?;
    save_set(&mut dir, &set, "dataset.jsonl")?;
    eprintln!(
        "wrote {} trajectories to {}",
        set.len(),
        dir.path("dataset.jsonl").display()
    );
    dir.finish()?;
    Ok(())
}

pub fn train_cmd(ctx: &RunContext, out: PathBuf, mode: &str, data: &Path) -> CliResult<()> {
    let mode = TrainMode::parse(mode).map_err(validation)?;
    let set = load_set(data)?;
    let mut dir = RunDir::create(out, "train", ctx)?;
    eprintln!("run directory {}", dir.root().display());
    let seed = train_seed(ctx.config.seed, set.iteration);
    eprintln!(
        "training {} on {} trajectories (iteration {}, seed {seed})",
        mode.as_str(),
        set.len(),
        set.iteration
    );
    let (mut run, checkpoint) =
        train(mode, &ctx.config.model, &ctx.config.train, &set, seed).map_err(runtime)?;
    write_model(&mut dir, &mut run, &checkpoint)?;
    eprintln!("final probe loss {}", run.final_loss);
    dir.finish()?;
    Ok(())
}

pub fn generate_cmd(
    ctx: &RunContext,
    out: PathBuf,
    checkpoint: &Path,
    data: &Path,
) -> CliResult<()> {
    let ck = Checkpoint::load(checkpoint).map_err(validation)?;
    let parent = load_set(data)?;
    let k = parent.iteration;
    let mut dir = RunDir::create(out, "generate", ctx)?;
    eprintln!("run directory {}", dir.root().display());
    let sigma = ctx.config.noise.sigma_at(k);
    eprintln!(
        "rolling out {} episodes per advertiser at sigma {sigma:.4} (iteration {k})",
        ctx.config.iterate.episodes_per_advertiser
    );
    let candidates = generate_trajectories(
        &ck,
        &ctx.env,
        &ctx.roster,
        ctx.config.iterate.episodes_per_advertiser,
        &ctx.config.noise,
        k,
        derive_seed(ctx.config.seed, "iterate-generate", &[u64::from(k)]),
    )
    .map_err(runtime)?;
    // Candidates are stored as a child-numbered set referencing the parent;
    // they are a rollout pool, not a merge, so nesting is not implied.
    let pool = TrainingSet {
        iteration: k + 1,
        parent_digest: parent.digest(),
        env_digest: parent.env_digest.clone(),
        trajectories: candidates,
    };
    save_set(&mut dir, &pool, "candidates.jsonl")?;
    eprintln!(
        "wrote {} candidates to {}",
        pool.len(),
        dir.path("candidates.jsonl").display()
    );
    dir.finish()?;
    Ok(())
}

pub fn iterate_cmd(
    ctx: &RunContext,
    out: PathBuf,
    rounds: Option<u32>,
    data: Option<&Path>,
) -> CliResult<()> {
    let initial = data.map(load_set).transpose()?;
    let mut config = ctx.config.iterate_config();
    if let Some(r) = rounds {
        config.rounds = r;
    }
    config.validate().map_err(validation)?;
    let mut dir = RunDir::create(out, "iterate", ctx)?;
    eprintln!("run directory {}", dir.root().display());

    eprintln!("running {} self-training rounds", config.rounds);
    let outcome = iterate(
        &ctx.env,
        &ctx.roster,
        &ctx.config.model,
        &config,
        initial,
        ctx.config.seed,
    )
    .map_err(runtime)?;
    for round in &outcome.log.rounds {
        eprintln!(
            "round {}: loss {:.5}, probe rhat {:.3}, kept {}/{}, dataset {} (median {:.3})",
            round.k,
            round.train_loss,
            round.probe_rhat,
            round.selected,
            round.generated,
            round.dataset.size,
            round.dataset.median
        );
    }

    for set in &outcome.sets {
        save_set(&mut dir, set, &format!("dataset_iter{}.jsonl", set.iteration))?;
    }
    let mut run = outcome.final_run;
    write_model(&mut dir, &mut run, &outcome.final_checkpoint)?;
    write_json(&mut dir, "iteration_log.json", "iteration-log", &outcome.log)?;
    dir.finish()?;
    Ok(())
}

pub fn eval_cmd(
    ctx: &RunContext,
    out: PathBuf,
    checkpoint: &Path,
    label: Option<String>,
    data: &[PathBuf],
    dt_rtg_fraction: Option<f64>,
) -> CliResult<()> {
    let ck = Checkpoint::load(checkpoint).map_err(validation)?;
    let sets = data.iter().map(|p| load_set(p)).collect::<CliResult<Vec<_>>>()?;
    let forbidden: HashSet<u64> = training_seeds(sets.iter());
    let label = label.unwrap_or_else(|| ck.mode.as_str().to_string());
    let mut dir = RunDir::create(out, "eval", ctx)?;
    eprintln!("run directory {}", dir.root().display());
    let episodes = ctx.config.eval.episodes_per_advertiser;
    eprintln!(
        "evaluating {label}: {episodes} episodes per advertiser per variant, \
         {} forbidden training seeds",
        forbidden.len()
    );

    let reports = match (ck.mode, dt_rtg_fraction) {
        (TrainMode::DtBaseline, None) => {
            let points = dt_baseline_sweep(
                &ck,
                &ctx.env,
                &ctx.roster,
                &Variant::ALL,
                episodes,
                ctx.config.eval_seed,
                &forbidden,
            )
            .map_err(runtime)?;
            for p in &points {
                let scores: Vec<String> = p
                    .reports
                    .iter()
                    .map(|r| format!("{} {:.3}", r.variant, r.mean_score))
                    .collect();
                eprintln!("  fraction {:.2}: {}", p.fraction, scores.join(", "));
            }
            write_json(&mut dir, "dt_sweep.json", "dt-sweep", &points)?;
            // Table rows use the best sweep point per variant.
            Variant::ALL
                .iter()
                .map(|&v| {
                    best_sweep_point(&points, v)
                        .and_then(|p| p.reports.iter().find(|r| r.variant == v))
                        .cloned()
                        .ok_or_else(|| runtime(format!("sweep produced no report for {v}")))
                })
                .collect::<CliResult<Vec<EvalReport>>>()?
        }
        (_, fraction) => {
            let schedule = fraction.map(|f| f * f64::from(ck.rtg_scale));
            evaluate_policy(
                &ck,
                &ctx.env,
                &ctx.roster,
                &Variant::ALL,
                episodes,
                ctx.config.eval_seed,
                &forbidden,
                schedule,
            )
            .map_err(runtime)?
        }
    };

    for r in &reports {
        eprintln!(
            "  {}: score {:.3}, conversions {:.2}, budget {:.1}%",
            r.variant,
            r.mean_score,
            r.mean_conversions,
            r.mean_budget_ratio * 100.0
        );
    }
    let seeds: Vec<u64> = reports
        .iter()
        .flat_map(|r| r.per_episode.iter().map(|e| e.seed))
        .collect();
    dir.set_eval_seeds(seeds);
    let method = MethodEval { label, reports };
    write_json(
        &mut dir,
        &format!("eval_{}.json", method.label),
        "eval",
        &method,
    )?;
    dir.finish()?;
    Ok(())
}

pub fn gradcheck_cmd(ctx: Option<&RunContext>, toy: bool) -> CliResult<()> {
    let config = if toy {
        ModelConfig {
            n_layers: 1,
            n_heads: 2,
            embed_dim: 8,
            context_steps: 4,
            state_dim: 3,
            action_dim: 1,
            max_timestep: 8,
            lambda: 0.05,
            dropout: 0.0,
        }
    } else {
        let ctx =
            ctx.ok_or_else(|| validation("gradcheck needs --config unless --toy is given"))?;
        // Finite differences need a deterministic forward pass.
        ModelConfig {
            dropout: 0.0,
            ..ctx.config.model.clone()
        }
    };

    let batch = gradcheck_batch(&config);
    const TOL: f32 = 1e-3;
    let mut worst = 0.0f32;
    for mode in [TrainMode::Rdt, TrainMode::Rhat, TrainMode::Bc] {
        let report = bidlab::model::model_grad_check(&config, mode, &batch, 3, 1e-3)
            .map_err(runtime)?;
        eprintln!("{}: max rel err {:.3e}", mode.as_str(), report.max_rel_err);
        for p in report.failures(TOL) {
            eprintln!(
                "  FAIL {}: rel err {:.3e} at index {} (analytic {:.6e}, numeric {:.6e})",
                p.name, p.max_rel_err, p.worst_index, p.analytic_at_worst, p.numeric_at_worst
            );
        }
        worst = worst.max(report.max_rel_err);
    }
    if worst < TOL {
        eprintln!("gradient check passed: worst {worst:.3e} < {TOL:.0e}");
        Ok(())
    } else {
        Err(runtime(format!(
            "gradient check failed: worst relative error {worst:.3e} >= {TOL:.0e}"
        )))
    }
}

fn gradcheck_batch(config: &ModelConfig) -> TokenBatch {
    let b = 2;
    let k = config.context_steps.min(3);
    let n = b * k;
    let mut rng = rng_for(11, "model-test-batch", &[]);
    let mut batch = TokenBatch {
        batch: b,
        steps: k,
        states: (0..n * config.state_dim)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
        rtgs: (0..n).map(|_| rng.random_range(0.3..0.9)).collect(),
        actions: (0..n).map(|_| rng.random_range(0.05..0.95)).collect(),
        timesteps: (0..n).map(|i| i % k + i / k).collect(),
        pad_mask: vec![true; n],
    };
    // One padded slot so masking stays on the checked path.
    batch.pad_mask[n - 1] = false;
    batch
}

pub fn report_cmd(run: &Path) -> CliResult<()> {
    let mut wrote_anything = false;

    let log_path = run.join("iteration_log.json");
    if log_path.exists() {
        let text = std::fs::read_to_string(&log_path)
            .map_err(|e| validation(format!("{}: {e}", log_path.display())))?;
        let log: IterationLog = serde_json::from_str(&text)
            .map_err(|e| validation(format!("{}: {e}", log_path.display())))?;
        let csv = quantile_series_csv(&log);
        let out = run.join("quantiles.csv");
        std::fs::write(&out, csv).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        eprintln!("wrote {}", out.display());
        wrote_anything = true;
    }

    let mut evals = Vec::new();
    let mut names = Vec::new();
    let entries =
        std::fs::read_dir(run).map_err(|e| validation(format!("{}: {e}", run.display())))?;
    for entry in entries {
        let entry = entry.map_err(|e| validation(format!("{}: {e}", run.display())))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("eval_") && name.ends_with(".json") {
            names.push(name);
        }
    }
    names.sort();
    for name in &names {
        let path = run.join(name);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| validation(format!("{}: {e}", path.display())))?;
        let method: MethodEval = serde_json::from_str(&text)
            .map_err(|e| validation(format!("{}: {e}", path.display())))?;
        evals.push(method);
    }
    if !evals.is_empty() {
        let table = render_comparison(&evals);
        let out = run.join("table.txt");
        std::fs::write(&out, &table).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        eprintln!("wrote {}", out.display());
        eprint!("{table}");
        wrote_anything = true;
    }

    if !wrote_anything {
        return Err(validation(format!(
            "{}: no iteration_log.json or eval_*.json to report on",
            run.display()
        )));
    }
    Ok(())
}

fn load_set(path: &Path) -> CliResult<TrainingSet> {
    load(path).map_err(validation)
}

fn save_set(dir: &mut RunDir, set: &TrainingSet, name: &str) -> CliResult<()> {
    save(set, &dir.path(name)).map_err(runtime)?;
    dir.record(name, "dataset", Some(set.digest()));
    Ok(())
}

fn write_model(dir: &mut RunDir, run: &mut TrainRun, checkpoint: &Checkpoint) -> CliResult<()> {
    let ck_path = dir.path("model.ck");
    checkpoint.save(&ck_path).map_err(runtime)?;
    dir.record("model.ck", "checkpoint", None);
    run.checkpoint_path = Some(PathBuf::from("model.ck"));
    write_json(dir, "train_run.json", "train-run", run)
}

fn write_json<T: serde::Serialize>(
    dir: &mut RunDir,
    name: &str,
    kind: &str,
    value: &T,
) -> CliResult<()> {
    let json =
        serde_json::to_string_pretty(value).map_err(|e| runtime(format!("{name}: {e}")))?;
    dir.write(name, kind, &(json + "\n"), None)?;
    Ok(())
}
