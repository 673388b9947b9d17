//! CSV ingestion for externally logged episodes, and the matching export.
//!
//! A schema map (TOML, `source_column = "field"`) names which columns carry
//! which fields. States come either verbatim (`state0..state5`) or derived
//! from raw counters through the same formulas the simulator path uses.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::features::features_from_counters;
use crate::data::store::{fmt_f32, fmt_f64};
use crate::data::types::{Provenance, Step, Trajectory, TrainingSet};
use crate::error::{Error, Result};
use crate::sim::{compute_rtg, Roster};

const FIELDS: [&str; 19] = [
    "episode",
    "step",
    "advertiser",
    "seed",
    "provenance",
    "env_digest",
    "cpa_multiplier",
    "action",
    "reward",
    "state0",
    "state1",
    "state2",
    "state3",
    "state4",
    "state5",
    "cum_cost",
    "cum_conversions",
    "recent_win_rate",
    "recent_price",
];
const REQUIRED: [&str; 5] = ["episode", "step", "advertiser", "action", "reward"];
const STATE_FIELDS: [&str; 6] = ["state0", "state1", "state2", "state3", "state4", "state5"];
const COUNTER_FIELDS: [&str; 4] = [
    "cum_cost",
    "cum_conversions",
    "recent_win_rate",
    "recent_price",
];

/// Field-to-column lookup built from a mapping file.
#[derive(Debug, Clone)]
pub struct SchemaMap {
    columns: HashMap<String, String>,
}

impl SchemaMap {
    /// Read a TOML table of `source_column = "field"` pairs.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let pairs: HashMap<String, String> = toml::from_str(&text)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        Self::from_pairs(pairs)
    }

    /// Build from in-memory `source column -> field` pairs.
    pub fn from_pairs(source_to_field: HashMap<String, String>) -> Result<Self> {
        let mut columns = HashMap::new();
        for (column, field) in source_to_field {
            if !FIELDS.contains(&field.as_str()) {
                return Err(Error::Schema(format!(
                    "unknown field {field:?} (column {column:?}); expected one of {FIELDS:?}"
                )));
            }
            if let Some(previous) = columns.insert(field.clone(), column) {
                return Err(Error::Schema(format!(
                    "field {field:?} mapped twice (columns {previous:?} and {:?})",
                    columns[&field]
                )));
            }
        }
        for field in REQUIRED {
            if !columns.contains_key(field) {
                return Err(Error::Schema(format!("required field {field:?} is unmapped")));
            }
        }
        let direct = STATE_FIELDS.iter().all(|f| columns.contains_key(*f));
        let counters = COUNTER_FIELDS.iter().all(|f| columns.contains_key(*f));
        if !direct && !counters {
            return Err(Error::Schema(format!(
                "states unmapped: map all of {STATE_FIELDS:?} or all of {COUNTER_FIELDS:?}"
            )));
        }
        Ok(SchemaMap { columns })
    }

    /// The mapping matching [`export_csv`] output.
    pub fn identity() -> Self {
        let columns = FIELDS
            .iter()
            .filter(|f| !COUNTER_FIELDS.contains(f))
            .map(|f| (f.to_string(), f.to_string()))
            .collect();
        SchemaMap { columns }
    }

    fn column(&self, field: &str) -> Option<&str> {
        self.columns.get(field).map(String::as_str)
    }
}

/// Imported set plus the tally of episodes that had to be dropped.
#[derive(Debug)]
pub struct ImportOutcome {
    pub set: TrainingSet,
    pub skipped: usize,
    pub warnings: Vec<String>,
}

enum StateSource {
    Direct([usize; 6]),
    Counters {
        cum_cost: usize,
        cum_conversions: usize,
        win_rate: usize,
        price: usize,
    },
}

enum RowState {
    Direct([f32; 6]),
    Counters {
        cum_cost: f64,
        cum_conversions: f64,
        win_rate: f64,
        price: f64,
    },
}

struct Row {
    step: usize,
    advertiser: String,
    seed: Option<u64>,
    provenance: Option<String>,
    env_digest: Option<String>,
    multiplier: Option<f64>,
    action: f32,
    reward: f32,
    state: RowState,
}

/// Stable fallback seed for files without a seed column.
fn seed_from_episode_id(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

pub fn import_external(
    path: &Path,
    schema: &SchemaMap,
    roster: &Roster,
) -> Result<ImportOutcome> {
    roster.validate()?;
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?
        .clone();
    let find = |field: &str| -> Result<Option<usize>> {
        match schema.column(field) {
            None => Ok(None),
            Some(name) => headers
                .iter()
                .position(|h| h == name)
                .map(Some)
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "column {name:?} (field {field:?}) is not in the file header"
                    ))
                }),
        }
    };
    let require = |field: &str| -> Result<usize> {
        find(field)?
            .ok_or_else(|| Error::Schema(format!("required field {field:?} is unmapped")))
    };

    let idx_episode = require("episode")?;
    let idx_step = require("step")?;
    let idx_advertiser = require("advertiser")?;
    let idx_action = require("action")?;
    let idx_reward = require("reward")?;
    let idx_seed = find("seed")?;
    let idx_provenance = find("provenance")?;
    let idx_env_digest = find("env_digest")?;
    let idx_multiplier = find("cpa_multiplier")?;
    let state_source = {
        let direct: Vec<Option<usize>> = STATE_FIELDS
            .iter()
            .map(|f| find(f))
            .collect::<Result<_>>()?;
        if direct.iter().all(Option::is_some) {
            let mut idx = [0usize; 6];
            for (slot, v) in idx.iter_mut().zip(&direct) {
                *slot = v.expect("checked");
            }
            StateSource::Direct(idx)
        } else {
            StateSource::Counters {
                cum_cost: require("cum_cost")?,
                cum_conversions: require("cum_conversions")?,
                win_rate: require("recent_win_rate")?,
                price: require("recent_price")?,
            }
        }
    };

    let mut order: Vec<String> = Vec::new();
    let mut episodes: HashMap<String, Vec<Row>> = HashMap::new();
    for (ri, record) in reader.records().enumerate() {
        let line = ri + 2;
        let err_at = |msg: String| Error::Load {
            path: path.display().to_string(),
            line,
            msg,
        };
        let record = record.map_err(|e| err_at(e.to_string()))?;
        let get = |i: usize| -> Result<&str> {
            record
                .get(i)
                .ok_or_else(|| err_at(format!("row has no column {i}")))
        };
        let parse_f64 = |i: usize| -> Result<f64> {
            let raw = get(i)?;
            raw.parse::<f64>()
                .map_err(|e| err_at(format!("{raw:?}: {e}")))
        };
        let parse_f32 = |i: usize| -> Result<f32> {
            let raw = get(i)?;
            raw.parse::<f32>()
                .map_err(|e| err_at(format!("{raw:?}: {e}")))
        };

        let episode_id = get(idx_episode)?.to_string();
        let step = get(idx_step)?
            .parse::<usize>()
            .map_err(|e| err_at(format!("step: {e}")))?;
        let seed = idx_seed
            .map(|i| {
                get(i)?
                    .parse::<u64>()
                    .map_err(|e| err_at(format!("seed: {e}")))
            })
            .transpose()?;
        let state = match state_source {
            StateSource::Direct(idx) => {
                let mut values = [0.0f32; 6];
                for (slot, &i) in values.iter_mut().zip(&idx) {
                    *slot = parse_f32(i)?;
                }
                RowState::Direct(values)
            }
            StateSource::Counters {
                cum_cost,
                cum_conversions,
                win_rate,
                price,
            } => RowState::Counters {
                cum_cost: parse_f64(cum_cost)?,
                cum_conversions: parse_f64(cum_conversions)?,
                win_rate: parse_f64(win_rate)?,
                price: parse_f64(price)?,
            },
        };
        let row = Row {
            step,
            advertiser: get(idx_advertiser)?.to_string(),
            seed,
            provenance: idx_provenance.map(|i| get(i).map(str::to_string)).transpose()?,
            env_digest: idx_env_digest.map(|i| get(i).map(str::to_string)).transpose()?,
            multiplier: idx_multiplier.map(parse_f64).transpose()?,
            action: parse_f32(idx_action)?,
            reward: parse_f32(idx_reward)?,
            state,
        };
        if !episodes.contains_key(&episode_id) {
            order.push(episode_id.clone());
        }
        episodes.entry(episode_id).or_default().push(row);
    }

    let by_name: HashMap<&str, usize> = roster
        .advertisers
        .iter()
        .enumerate()
        .map(|(i, a)| (a.name.as_str(), i))
        .collect();
    let mut trajectories = Vec::new();
    let mut warnings = Vec::new();
    let mut skipped = 0usize;
    let mut env_digests: HashSet<String> = HashSet::new();

    'episodes: for id in &order {
        let mut rows = episodes.remove(id).expect("grouped");
        let skip = |warnings: &mut Vec<String>, skipped: &mut usize, msg: String| {
            warnings.push(format!("episode {id:?}: {msg}"));
            *skipped += 1;
        };

        let name = rows[0].advertiser.clone();
        if rows.iter().any(|r| r.advertiser != name) {
            skip(&mut warnings, &mut skipped, "mixed advertiser names".into());
            continue;
        }
        let Some(&adv_idx) = by_name.get(name.as_str()) else {
            skip(
                &mut warnings,
                &mut skipped,
                format!("advertiser {name:?} is not in the roster"),
            );
            continue;
        };
        let mut adv = roster.advertisers[adv_idx].clone();
        if let Some(m) = rows[0].multiplier {
            if rows.iter().any(|r| r.multiplier != Some(m)) {
                skip(&mut warnings, &mut skipped, "inconsistent cpa_multiplier".into());
                continue;
            }
            adv = adv.with_multiplier(m);
            if adv.validate().is_err() {
                skip(&mut warnings, &mut skipped, format!("bad cpa_multiplier {m}"));
                continue;
            }
        }

        rows.sort_by_key(|r| r.step);
        let t_max = adv.episode_steps;
        let complete =
            rows.len() == t_max && rows.iter().enumerate().all(|(i, r)| r.step == i);
        if !complete {
            skip(
                &mut warnings,
                &mut skipped,
                format!("expected steps 0..{}, found {} rows", t_max - 1, rows.len()),
            );
            continue;
        }

        let seed = match rows[0].seed {
            Some(s) => {
                if rows.iter().any(|r| r.seed != Some(s)) {
                    skip(&mut warnings, &mut skipped, "inconsistent seed".into());
                    continue;
                }
                s
            }
            None => seed_from_episode_id(id),
        };
        let provenance = match &rows[0].provenance {
            Some(tag) => {
                if rows.iter().any(|r| r.provenance.as_deref() != Some(tag)) {
                    skip(&mut warnings, &mut skipped, "inconsistent provenance".into());
                    continue;
                }
                match Provenance::parse_tag(tag) {
                    Ok(p) => p,
                    Err(e) => {
                        skip(&mut warnings, &mut skipped, e.to_string());
                        continue;
                    }
                }
            }
            None => Provenance::Behavior {
                policy: "import".into(),
            },
        };
        for r in &rows {
            if let Some(d) = &r.env_digest {
                env_digests.insert(d.clone());
                if env_digests.len() > 1 {
                    return Err(Error::Schema(format!(
                        "{}: conflicting env_digest values",
                        path.display()
                    )));
                }
            }
        }

        let rewards: Vec<f64> = rows.iter().map(|r| f64::from(r.reward)).collect();
        let rtg = compute_rtg(&rewards)?;
        let mut steps = Vec::with_capacity(t_max);
        for (t, row) in rows.iter().enumerate() {
            let state = match &row.state {
                RowState::Direct(v) => *v,
                RowState::Counters {
                    cum_cost,
                    cum_conversions,
                    win_rate,
                    price,
                } => features_from_counters(
                    t as f64,
                    t_max as f64,
                    adv.budget,
                    adv.effective_cpa(),
                    *cum_cost,
                    adv.budget - cum_cost,
                    *cum_conversions,
                    *win_rate,
                    *price,
                ),
            };
            steps.push(Step {
                state,
                action: row.action,
                reward: row.reward,
                rtg: rtg[t] as f32,
            });
        }
        let trajectory = Trajectory {
            adv,
            seed,
            provenance,
            episode_return: rtg[0] as f32,
            steps,
        };
        if let Err(e) = trajectory.validate() {
            skip(&mut warnings, &mut skipped, e.to_string());
            continue 'episodes;
        }
        trajectories.push(trajectory);
    }

    let set = TrainingSet {
        iteration: 1,
        parent_digest: String::new(),
        env_digest: env_digests.into_iter().next().unwrap_or_default(),
        trajectories,
    };
    set.validate()?;
    Ok(ImportOutcome {
        set,
        skipped,
        warnings,
    })
}

/// Write a set as per-step CSV rows readable by [`import_external`] with
/// the identity schema map. Importing flattens to a first-iteration view:
/// the parent digest is not representable in this format.
pub fn export_csv(set: &TrainingSet, path: &Path) -> Result<()> {
    set.validate()?;
    let io_err = |e: csv::Error| Error::Schema(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    let header: Vec<&str> = FIELDS
        .iter()
        .filter(|f| !COUNTER_FIELDS.contains(f))
        .copied()
        .collect();
    w.write_record(&header).map_err(io_err)?;
    for (i, t) in set.trajectories.iter().enumerate() {
        for (step_idx, s) in t.steps.iter().enumerate() {
            let mut record = vec![
                i.to_string(),
                step_idx.to_string(),
                t.adv.name.clone(),
                t.seed.to_string(),
                t.provenance.tag(),
                set.env_digest.clone(),
                fmt_f64(t.adv.cpa_multiplier),
                fmt_f32(s.action),
                fmt_f32(s.reward),
            ];
            record.extend(s.state.iter().map(|&v| fmt_f32(v)));
            w.write_record(&record).map_err(io_err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))
}
