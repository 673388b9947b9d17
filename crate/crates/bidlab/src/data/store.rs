//! Line-oriented dataset files.
//!
//! One header record, then per trajectory one `traj` record followed by its
//! `step` records, all newline-delimited JSON. Floats are written with nine
//! significant digits, which reproduces every f32 exactly, so files are
//! byte-deterministic and diffable; the f64 advertiser fields get seventeen.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::data::types::{Provenance, Step, Trajectory, TrainingSet};
use crate::error::{Error, Result};
use crate::sim::{AdvertiserConfig, A_MAX};

const SCHEMA_VERSION: u32 = 1;

pub(crate) fn fmt_f32(v: f32) -> String {
    format!("{v:.8e}")
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// Canonical file lines of one trajectory; also the digest preimage.
pub(crate) fn trajectory_lines(t: &Trajectory) -> String {
    let mut out = String::new();
    let a = &t.adv;
    writeln!(
        out,
        "{{\"kind\":\"traj\",\"name\":{},\"budget\":{},\"target_cpa\":{},\"episode_steps\":{},\"cpa_multiplier\":{},\"seed\":{},\"provenance\":{},\"episode_return\":{}}}",
        json_str(&a.name),
        fmt_f64(a.budget),
        fmt_f64(a.target_cpa),
        a.episode_steps,
        fmt_f64(a.cpa_multiplier),
        t.seed,
        json_str(&t.provenance.tag()),
        fmt_f32(t.episode_return),
    )
    .expect("write to string");
    for s in &t.steps {
        let state: Vec<String> = s.state.iter().map(|&v| fmt_f32(v)).collect();
        writeln!(
            out,
            "{{\"kind\":\"step\",\"state\":[{}],\"action\":{},\"reward\":{},\"rtg\":{}}}",
            state.join(","),
            fmt_f32(s.action),
            fmt_f32(s.reward),
            fmt_f32(s.rtg),
        )
        .expect("write to string");
    }
    out
}

pub fn save(set: &TrainingSet, path: &Path) -> Result<()> {
    set.validate()?;
    let mut out = String::new();
    writeln!(
        out,
        "{{\"kind\":\"header\",\"schema\":{},\"iteration\":{},\"parent_digest\":{},\"env_digest\":{},\"a_max\":{},\"trajectories\":{},\"digest\":{}}}",
        SCHEMA_VERSION,
        set.iteration,
        json_str(&set.parent_digest),
        json_str(&set.env_digest),
        fmt_f64(A_MAX),
        set.trajectories.len(),
        json_str(&set.digest()),
    )
    .expect("write to string");
    for t in &set.trajectories {
        out.push_str(&trajectory_lines(t));
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Header {
        schema: u32,
        iteration: u32,
        parent_digest: String,
        env_digest: String,
        a_max: f64,
        trajectories: usize,
        digest: String,
    },
    Traj {
        name: String,
        budget: f64,
        target_cpa: f64,
        episode_steps: usize,
        cpa_multiplier: f64,
        seed: u64,
        provenance: String,
        episode_return: f32,
    },
    Step {
        state: Vec<f32>,
        action: f32,
        reward: f32,
        rtg: f32,
    },
}

struct HeaderInfo {
    iteration: u32,
    parent_digest: String,
    env_digest: String,
    trajectories: usize,
    digest: String,
}

pub fn load(path: &Path) -> Result<TrainingSet> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let err_at = |line: usize, msg: String| Error::Load {
        path: path.display().to_string(),
        line,
        msg,
    };

    let mut header: Option<HeaderInfo> = None;
    let mut trajectories: Vec<Trajectory> = Vec::new();
    let mut open: Option<Trajectory> = None;
    let mut line_count = 0usize;

    let mut close = |open: &mut Option<Trajectory>, line: usize| -> Result<()> {
        if let Some(t) = open.take() {
            if t.steps.len() != t.adv.episode_steps {
                return Err(err_at(
                    line,
                    format!(
                        "trajectory (seed {}) ends with {} of {} steps",
                        t.seed,
                        t.steps.len(),
                        t.adv.episode_steps
                    ),
                ));
            }
            trajectories.push(t);
        }
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        line_count = line;
        let record: Record = serde_json::from_str(raw)
            .map_err(|e| err_at(line, format!("malformed record: {e}")))?;
        match record {
            Record::Header {
                schema,
                iteration,
                parent_digest,
                env_digest,
                a_max,
                trajectories,
                digest,
            } => {
                if line != 1 {
                    return Err(err_at(line, "unexpected second header".into()));
                }
                if schema != SCHEMA_VERSION {
                    return Err(err_at(
                        line,
                        format!("schema version {schema}, this build reads {SCHEMA_VERSION}"),
                    ));
                }
                if a_max != A_MAX {
                    return Err(err_at(
                        line,
                        format!("a_max {a_max} does not match the build constant {A_MAX}"),
                    ));
                }
                header = Some(HeaderInfo {
                    iteration,
                    parent_digest,
                    env_digest,
                    trajectories,
                    digest,
                });
            }
            _ if header.is_none() => {
                return Err(err_at(line, "expected a header record first".into()));
            }
            Record::Traj {
                name,
                budget,
                target_cpa,
                episode_steps,
                cpa_multiplier,
                seed,
                provenance,
                episode_return,
            } => {
                close(&mut open, line)?;
                let provenance = Provenance::parse_tag(&provenance)
                    .map_err(|e| err_at(line, e.to_string()))?;
                open = Some(Trajectory {
                    adv: AdvertiserConfig {
                        name,
                        budget,
                        target_cpa,
                        episode_steps,
                        cpa_multiplier,
                    },
                    seed,
                    provenance,
                    episode_return,
                    steps: Vec::with_capacity(episode_steps),
                });
            }
            Record::Step {
                state,
                action,
                reward,
                rtg,
            } => {
                let state: [f32; 6] = state
                    .try_into()
                    .map_err(|v: Vec<f32>| err_at(line, format!("state has {} of 6 features", v.len())))?;
                match open.as_mut() {
                    Some(t) => t.steps.push(Step {
                        state,
                        action,
                        reward,
                        rtg,
                    }),
                    None => return Err(err_at(line, "step record outside a trajectory".into())),
                }
            }
        }
    }
    close(&mut open, line_count)?;

    let header = header.ok_or_else(|| err_at(1, "empty file; expected a header record".into()))?;
    if trajectories.len() != header.trajectories {
        return Err(err_at(
            line_count.max(1),
            format!(
                "header announces {} trajectories, file holds {}",
                header.trajectories,
                trajectories.len()
            ),
        ));
    }
    let set = TrainingSet {
        iteration: header.iteration,
        parent_digest: header.parent_digest,
        env_digest: header.env_digest,
        trajectories,
    };
    set.validate()?;
    if set.digest() != header.digest {
        return Err(err_at(1, "content digest does not match the header".into()));
    }
    Ok(set)
}
